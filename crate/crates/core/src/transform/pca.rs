use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Trace;

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaTarget {
    Components(usize),
    /// Smallest k whose cumulative explained-variance ratio reaches this value.
    Coverage(f64),
}

/// Principal components fitted by SVD of the mean-centered data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` rows of length `m`, orthonormal.
    pub components: Vec<Vec<f64>>,
    /// Ratios of all available components, non-increasing; the first `k` are kept.
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project_into(&self, row: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c
                .iter()
                .zip(row)
                .zip(&self.mean)
                .map(|((ci, x), mu)| ci * (x - mu))
                .sum();
        }
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k()];
        self.project_into(row, &mut out);
        out
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (a, c) in coords.iter().zip(&self.components) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += a * ci;
            }
        }
        out
    }

    /// Mean squared reconstruction error of one row. `scratch` must hold `k` values.
    pub fn reconstruction_mse(&self, row: &[f64], scratch: &mut [f64]) -> f64 {
        self.project_into(row, scratch);
        let mut sq = 0.0;
        for (j, (x, mu)) in row.iter().zip(&self.mean).enumerate() {
            let mut r = *mu;
            for (a, c) in scratch.iter().zip(&self.components) {
                r += a * c[j];
            }
            sq += (x - r) * (x - r);
        }
        sq / row.len() as f64
    }
}

/// Fits PCA on `rows` (each of equal length `m`).
pub fn fit_pca(rows: &[&[f64]], target: PcaTarget) -> Result<PcaModel> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Invalid(format!("PCA needs at least 2 rows, got {n}")));
    }
    let m = rows[0].len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Invalid("PCA rows must share a nonzero width".into()));
    }
    match target {
        PcaTarget::Components(k) if k == 0 || k > m => return Err(Error::Invalid(format!("k = {k} outside [1, {m}]"))),
        PcaTarget::Coverage(c) if !(c > 0.0 && c <= 1.0) => {
            return Err(Error::Invalid(format!("coverage {c} outside (0, 1]")))
        }
        _ => {}
    }

    let mut mean = vec![0.0; m];
    for r in rows {
        for (mu, x) in mean.iter_mut().zip(r.iter()) {
            *mu += x;
        }
    }
    mean.iter_mut().for_each(|mu| *mu /= n as f64);

    let centered = DMatrix::from_fn(n, m, |i, j| rows[i][j] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
    let sv = svd.singular_values;

    // Sort defensively: ordering is part of the model contract.
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let variances: Vec<f64> = order.iter().map(|&i| sv[i] * sv[i]).collect();
    let total: f64 = variances.iter().sum();
    if total <= f64::EPSILON * n as f64 {
        return Err(Error::Degenerate("data has zero variance".into()));
    }
    let ratios: Vec<f64> = variances.iter().map(|v| v / total).collect();

    let k = match target {
        PcaTarget::Components(k) => k,
        PcaTarget::Coverage(c) => {
            let mut acc = 0.0;
            let mut k = ratios.len();
            for (i, r) in ratios.iter().enumerate() {
                acc += r;
                if acc >= c - 1e-12 {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };
    if k > order.len() {
        return Err(Error::Degenerate(format!(
            "{k} components requested but only {} rows of data",
            order.len()
        )));
    }

    let components = order[..k]
        .iter()
        .map(|&i| {
            let mut c: Vec<f64> = v_t.row(i).iter().copied().collect();
            // Sign convention: largest-magnitude loading is positive.
            let pivot = c
                .iter()
                .copied()
                .max_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap_or(0.0);
            if pivot < 0.0 {
                c.iter_mut().for_each(|x| *x = -*x);
            }
            c
        })
        .collect();

    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios,
    })
}

/// Fits PCA on every row of the given traces.
pub fn fit_pca_traces(traces: &[&Trace], target: PcaTarget) -> Result<PcaModel> {
    let rows: Vec<&[f64]> = traces.iter().flat_map(|t| t.rows()).collect();
    fit_pca(&rows, target)
}

/// Projects every row; output features are named `pc1..pck`.
pub fn apply_pca(model: &PcaModel, trace: &Trace) -> Result<Trace> {
    if trace.n_features() != model.dim() {
        return Err(Error::Invalid(format!(
            "trace {} has {} features, PCA model expects {}",
            trace.trace_id,
            trace.n_features(),
            model.dim()
        )));
    }
    let k = model.k();
    let mut values = vec![0.0; trace.len() * k];
    for (i, row) in trace.rows().enumerate() {
        model.project_into(row, &mut values[i * k..(i + 1) * k]);
    }
    let names = (1..=k).map(|i| format!("pc{i}")).collect();
    trace.with_values(names, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_rows(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::seed::rng(seed);
        (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn rank_one_data_needs_one_component() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let x = i as f64 * 0.37 - 2.0;
                vec![x, 2.0 * x]
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let model = fit_pca(&refs, PcaTarget::Coverage(0.99)).unwrap();
        assert_eq!(model.k(), 1);
        assert!((model.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        // pc1 reproduces the data up to sign.
        for r in &rows {
            let back = model.reconstruct(&model.project(r));
            assert!((back[0] - r[0]).abs() < 1e-9 && (back[1] - r[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn full_basis_reconstructs_exactly() {
        let rows = random_rows(50, 6, 1);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let model = fit_pca(&refs, PcaTarget::Components(6)).unwrap();
        let mut scratch = vec![0.0; 6];
        for r in &refs {
            assert!(model.reconstruction_mse(r, &mut scratch) <= 1e-8);
        }
        let total: f64 = model.explained_variance_ratio.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for w in model.explained_variance_ratio.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for (a, ca) in model.components.iter().enumerate() {
            for (b, cb) in model.components.iter().enumerate() {
                let dot: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn nineteen_components() {
        let rows = random_rows(100, 25, 2);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        assert_eq!(fit_pca(&refs, PcaTarget::Components(19)).unwrap().k(), 19);
    }

    #[test]
    fn mean_row_projects_to_zero() {
        let rows = random_rows(30, 4, 3);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let model = fit_pca(&refs, PcaTarget::Components(3)).unwrap();
        assert!(model.project(&model.mean).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_variance_is_degenerate() {
        let rows = [[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        assert!(matches!(
            fit_pca(&refs, PcaTarget::Components(1)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn apply_checks_dimension() {
        let rows = random_rows(10, 3, 4);
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let model = fit_pca(&refs, PcaTarget::Components(2)).unwrap();
        let t = Trace::new("x", 0, vec![0], vec!["a".into()], vec![1.0]).unwrap();
        assert!(apply_pca(&model, &t).is_err());
        let t = Trace::from_rows(
            "x",
            0,
            (0..10).collect(),
            vec!["a".into(), "b".into(), "c".into()],
            &rows,
        )
        .unwrap();
        let p = apply_pca(&model, &t).unwrap();
        assert_eq!(p.features(), ["pc1", "pc2"]);
    }
}
