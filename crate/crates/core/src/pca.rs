//! PCA of embedded features and the Q (squared prediction error) statistic.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Relative magnitude below which negative eigenvalues count as rounding noise.
const CLAMP_TOL: f64 = 1e-10;
const EIG_MAX_ITER: usize = 100_000;

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "rule", content = "count")]
pub enum Retention {
    /// Keep every eigenvalue strictly above the mean eigenvalue (at least one).
    #[default]
    AboveMean,
    Fixed(usize),
}

impl Retention {
    pub fn count(&self, eigenvalues: &[f64]) -> usize {
        match *self {
            Retention::AboveMean => {
                let mean = eigenvalues.iter().sum::<f64>() / eigenvalues.len() as f64;
                eigenvalues.iter().filter(|&&l| l > mean).count().max(1)
            }
            Retention::Fixed(a) => a,
        }
    }
}

/// Symmetric eigendecomposition sorted by descending eigenvalue, each
/// eigenvector signed so that its largest-magnitude entry is positive.
pub fn sorted_eigen(sym: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = sym.nrows();
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "matrix passed to the eigensolver has non-finite entries".into(),
        ));
    }
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, EIG_MAX_ITER).ok_or_else(|| {
        Error::Numeric(format!(
            "symmetric eigensolver did not converge on a {n}x{n} matrix"
        ))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps solver order among equal eigenvalues.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        normalize_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok((values, vectors))
}

pub(crate) fn normalize_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Clamps eigenvalues in `[-tol * lambda_1, 0)` to zero and rejects anything
/// more negative.
pub(crate) fn clamp_eigenvalues(values: &mut [f64]) -> Result<()> {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -CLAMP_TOL * top.max(f64::MIN_POSITIVE) && top > 0.0 {
                return Err(Error::Numeric(format!(
                    "covariance eigenvalue {v:e} is negative beyond rounding (largest {top:e})"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Subtracts the column means. Returns the centered matrix and the means.
pub fn center(z: &FeatureMatrix) -> Result<(FeatureMatrix, DVector<f64>)> {
    let n = z.samples();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mean = z.matrix().row_mean().transpose();
    let mut out = z.matrix().clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    Ok((FeatureMatrix(out), mean))
}

/// Principal subspace of the feature covariance `R = Zbar^T Zbar / (n - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub feature_mean: DVector<f64>,
    /// All `m` eigenvalues of `R`, descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// `m x a` retained eigenvectors.
    pub loadings: DMatrix<f64>,
}

impl PcaModel {
    /// Fits on already centered features; `feature_mean` is kept for scoring
    /// new samples.
    ///
    /// When there are more features than samples the `n x n` Gram matrix is
    /// decomposed instead and the eigenvectors of `R` are recovered from it.
    pub fn from_centered(
        zbar: &FeatureMatrix,
        feature_mean: DVector<f64>,
        retention: Retention,
    ) -> Result<Self> {
        let (n, m) = (zbar.samples(), zbar.features());
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        if feature_mean.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: feature_mean.len(),
            });
        }
        let zm = zbar.matrix();
        let denom = (n - 1) as f64;
        let (eigenvalues, loadings) = if m <= n {
            let r = symmetrized(zm.transpose() * zm / denom);
            let (mut values, vectors) = sorted_eigen(r)?;
            clamp_eigenvalues(&mut values)?;
            let a = check_retained(retention.count(&values), m, m)?;
            (values, vectors.columns(0, a).into_owned())
        } else {
            let g = symmetrized(zm * zm.transpose() / denom);
            let (mut values, u) = sorted_eigen(g)?;
            clamp_eigenvalues(&mut values)?;
            let top = values[0];
            let rank = values
                .iter()
                .take_while(|&&v| v > CLAMP_TOL * top && v > 0.0)
                .count();
            let mut all = values;
            all.resize(m, 0.0);
            let a = check_retained(retention.count(&all), m, rank)?;
            let mut v = DMatrix::zeros(m, a);
            for j in 0..a {
                let mut col = zm.transpose() * u.column(j);
                col /= (denom * all[j]).sqrt();
                normalize_sign(&mut col);
                v.set_column(j, &col);
            }
            (all, v)
        };
        Ok(Self {
            feature_mean,
            eigenvalues,
            loadings,
        })
    }

    pub fn retained(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn features(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.features();
        if self.feature_mean.len() != m
            || self.eigenvalues.len() != m
            || self.retained() == 0
            || self.retained() > m
        {
            return Err(Error::Format("PCA payload has inconsistent shapes".into()));
        }
        Ok(())
    }

    /// Q for a raw (uncentered) feature vector.
    pub fn q_raw(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.features() {
            return Err(Error::DimensionMismatch {
                expected: self.features(),
                actual: z.len(),
            });
        }
        let zbar: Vec<f64> = z
            .iter()
            .zip(self.feature_mean.iter())
            .map(|(a, b)| a - b)
            .collect();
        q_statistic(self, &zbar)
    }
}

fn check_retained(a: usize, m: usize, available: usize) -> Result<usize> {
    if a == 0 || a > m {
        return Err(Error::param(
            "a",
            format!("retained count must lie in 1..={m}, got {a}"),
        ));
    }
    if a > available {
        return Err(Error::Numeric(format!(
            "asked for {a} components but the covariance has rank {available}"
        )));
    }
    Ok(a)
}

fn symmetrized(mut s: DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Centers `z` and fits the PCA model.
pub fn fit_pca(z: &FeatureMatrix, retention: Retention) -> Result<PcaModel> {
    let (zbar, mean) = center(z)?;
    PcaModel::from_centered(&zbar, mean, retention)
}

/// `Q = |zbar|^2 - |V^T zbar|^2`, clamped at zero.
pub fn q_statistic(model: &PcaModel, zbar: &[f64]) -> Result<f64> {
    let m = model.features();
    if zbar.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: zbar.len(),
        });
    }
    let total: f64 = zbar.iter().map(|v| v * v).sum();
    let mut explained = 0.0;
    for col in model.loadings.column_iter() {
        let t: f64 = col.iter().zip(zbar).map(|(a, b)| a * b).sum();
        explained += t * t;
    }
    Ok((total - explained).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: usize, cols: usize, data: &[f64]) -> FeatureMatrix {
        FeatureMatrix(DMatrix::from_row_slice(rows, cols, data))
    }

    #[test]
    fn centering_basics() {
        let same = fm(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let (c, mean) = center(&same).unwrap();
        assert!(c.matrix().iter().all(|&v| v == 0.0));
        assert_eq!(mean.as_slice(), &[1.0, 2.0]);

        let z = fm(3, 2, &[1.0, 4.0, 2.0, -1.0, 6.0, 0.5]);
        let (c, _) = center(&z).unwrap();
        // Column means 3 and 7/6.
        let expected = [
            -2.0,
            4.0 - 7.0 / 6.0,
            -1.0,
            -1.0 - 7.0 / 6.0,
            3.0,
            0.5 - 7.0 / 6.0,
        ];
        for (k, e) in expected.iter().enumerate() {
            assert!((c.matrix()[(k / 2, k % 2)] - e).abs() < 1e-14);
        }
        let (cc, m2) = center(&c).unwrap();
        assert!(m2.iter().all(|v| v.abs() < 1e-15));
        assert!((cc.matrix() - c.matrix()).abs().max() < 1e-15);
        assert!(center(&fm(1, 2, &[1.0, 2.0])).is_err());
    }

    #[test]
    fn diagonal_covariance() {
        // n = 4 and Zbar^T Zbar = diag(12, 3), so R = diag(4, 1).
        let (a, b) = (6.0f64.sqrt(), 1.5f64.sqrt());
        let zbar = fm(4, 2, &[a, 0.0, -a, 0.0, 0.0, b, 0.0, -b]);
        let model = PcaModel::from_centered(&zbar, DVector::zeros(2), Retention::Fixed(2)).unwrap();
        assert!((model.eigenvalues[0] - 4.0).abs() < 1e-12);
        assert!((model.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert!((model.loadings[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((model.loadings[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn q_full_projection_and_orthogonal() {
        let z = FeatureMatrix(DMatrix::from_fn(10, 3, |i, j| {
            ((i * 7 + j * 3) as f64).sin()
        }));
        let full = fit_pca(&z, Retention::Fixed(3)).unwrap();
        let q = q_statistic(&full, &[0.3, -0.2, 0.9]).unwrap();
        assert!(q < 1e-12);

        let model = PcaModel {
            feature_mean: DVector::zeros(3),
            eigenvalues: vec![1.0, 0.0, 0.0],
            loadings: DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
        };
        assert!((q_statistic(&model, &[0.0, 3.0, 4.0]).unwrap() - 25.0).abs() < 1e-12);
        assert!(q_statistic(&model, &[0.0, 3.0]).is_err());
    }

    #[test]
    fn q_matches_explicit_projector() {
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]) / 3.0;
        let model = PcaModel {
            feature_mean: DVector::zeros(3),
            eigenvalues: vec![1.0, 0.0, 0.0],
            loadings: DMatrix::from_column_slice(3, 1, v.as_slice()),
        };
        let z = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let proj = DMatrix::identity(3, 3) - &v * v.transpose();
        let oracle = (z.transpose() * proj * &z)[(0, 0)];
        assert!((q_statistic(&model, z.as_slice()).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn dual_route_matches_primal() {
        // 6 samples, 10 features -> dual; compare with explicit m x m route.
        let z = FeatureMatrix(DMatrix::from_fn(6, 10, |i, j| {
            ((i * 7919 + j * j * 104_729) % 97) as f64 / 97.0
        }));
        let (zbar, mean) = center(&z).unwrap();
        let dual = PcaModel::from_centered(&zbar, mean, Retention::Fixed(3)).unwrap();
        let r = zbar.matrix().transpose() * zbar.matrix() / 5.0;
        let (vals, vecs) = sorted_eigen(r).unwrap();
        for j in 0..3 {
            assert!((dual.eigenvalues[j] - vals[j]).abs() < 1e-10);
            let dot = dual.loadings.column(j).dot(&vecs.column(j));
            assert!((dot.abs() - 1.0).abs() < 1e-8);
        }
        assert_eq!(dual.eigenvalues.len(), 10);
        assert!(dual.eigenvalues[6..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eigen_signs_are_normalized() {
        let z = FeatureMatrix(DMatrix::from_fn(30, 4, |i, j| {
            ((i * 3 + j * 11) as f64 * 0.7).sin() * (j + 1) as f64
        }));
        let model = fit_pca(&z, Retention::Fixed(4)).unwrap();
        for col in model.loadings.column_iter() {
            let big = col
                .iter()
                .copied()
                .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
            assert!(big > 0.0);
        }
    }
}
