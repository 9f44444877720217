//! Exact kernel PCA with Q monitoring. Only used as an accuracy and timing
//! reference for the random-feature monitors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ZScore;
use crate::detector::{Score, WidthRule};
use crate::error::{Error, Result};
use crate::features::GaussianKernel;
use crate::kde::kde_threshold;
use crate::kernel::exact_gaussian_kernel;
use crate::pca::{sorted_eigen, Retention};

/// Largest training set the dense baseline accepts by default.
pub const DEFAULT_KPCA_CAP: usize = 3000;
/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpcaBaseline {
    pub normalizer: ZScore,
    pub width: f64,
    /// Normalized training samples, `n x D`.
    pub train: DMatrix<f64>,
    /// Column means of the training Gram matrix.
    pub gram_col_mean: DVector<f64>,
    pub gram_mean: f64,
    /// Nonzero eigenvalues of the centered Gram matrix divided by `n`, descending.
    pub eigenvalues: Vec<f64>,
    /// `n x r` coefficient vectors scaled so feature-space components have unit norm.
    pub alphas: DMatrix<f64>,
    pub retained: usize,
    pub q_ucl: f64,
    pub level: f64,
}

/// Training by-products of [`KpcaBaseline::fit`].
#[derive(Debug, Clone)]
pub struct KpcaFit {
    pub model: KpcaBaseline,
    pub training_q: Vec<f64>,
}

impl KpcaBaseline {
    pub fn fit(
        x: &DMatrix<f64>,
        width: WidthRule,
        level: f64,
        retention: Retention,
        cap: usize,
    ) -> Result<KpcaFit> {
        let n = x.nrows();
        if n > cap {
            return Err(Error::param(
                "n",
                format!("exact kernel PCA is capped at {cap} samples, got {n}"),
            ));
        }
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::param(
                "alpha",
                format!("must lie in (0, 1), got {level}"),
            ));
        }
        let normalizer = ZScore::fit(x)?;
        let train = normalizer.apply(x)?;
        let c = width.resolve(&train)?;
        let k = exact_gaussian_kernel(&train, GaussianKernel::new(c)?)?.0;
        let gram_col_mean = k.row_mean().transpose();
        let gram_mean = gram_col_mean.mean();
        let kc = DMatrix::from_fn(n, n, |i, j| {
            k[(i, j)] - gram_col_mean[i] - gram_col_mean[j] + gram_mean
        });
        let (values, vectors) = sorted_eigen(kc)?;
        let top = values[0];
        if !(top > 0.0) {
            return Err(Error::Numeric(
                "centered kernel matrix has no positive eigenvalue".into(),
            ));
        }
        let rank = values.iter().take_while(|&&v| v > RANK_TOL * top).count();
        let eigenvalues: Vec<f64> = values[..rank].iter().map(|v| v / n as f64).collect();
        let retained = retention.count(&eigenvalues);
        if retained == 0 || retained > rank {
            return Err(Error::param(
                "a",
                format!("retained count must lie in 1..={rank}, got {retained}"),
            ));
        }
        let mut alphas = vectors.columns(0, rank).into_owned();
        for (j, mut col) in alphas.column_iter_mut().enumerate() {
            col /= values[j].sqrt();
        }
        let mut model = KpcaBaseline {
            normalizer,
            width: c,
            train,
            gram_col_mean,
            gram_mean,
            eigenvalues,
            alphas,
            retained,
            q_ucl: f64::INFINITY,
            level,
        };
        let training_q: Vec<f64> = (0..n)
            .map(|i| model.q_from_kernel_row(k.row(i).transpose()))
            .collect();
        model.q_ucl = kde_threshold(&training_q, level)?;
        if !(model.q_ucl > 0.0) {
            return Err(Error::Numeric(format!(
                "control limit {:e} is not positive",
                model.q_ucl
            )));
        }
        Ok(KpcaFit { model, training_q })
    }

    pub fn input_dim(&self) -> usize {
        self.normalizer.dim()
    }

    /// Residual outside the first `retained` components, measured within the
    /// span of all nonzero components.
    fn q_from_kernel_row(&self, k: DVector<f64>) -> f64 {
        let kmean = k.mean();
        let kc = DVector::from_fn(k.len(), |i, _| {
            k[i] - kmean - self.gram_col_mean[i] + self.gram_mean
        });
        let t = self.alphas.tr_mul(&kc);
        let total: f64 = t.iter().map(|v| v * v).sum();
        let kept: f64 = t.iter().take(self.retained).map(|v| v * v).sum();
        (total - kept).max(0.0)
    }

    pub fn q(&self, x: &[f64]) -> Result<f64> {
        let xn = self.normalizer.apply_sample(x)?;
        let k = DVector::from_fn(self.train.nrows(), |i, _| {
            let row = self.train.row(i);
            let d2: f64 = row.iter().zip(&xn).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / self.width).exp()
        });
        Ok(self.q_from_kernel_row(k))
    }

    pub fn score(&self, x: &[f64]) -> Result<Score> {
        let q = self.q(x)?;
        Ok(Score {
            q,
            threshold: self.q_ucl,
            alarm: q > self.q_ucl,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.normalizer.validate()?;
        let n = self.train.nrows();
        let r = self.eigenvalues.len();
        if self.train.ncols() != self.normalizer.dim()
            || self.gram_col_mean.len() != n
            || self.alphas.shape() != (n, r)
            || self.retained == 0
            || self.retained > r
        {
            return Err(Error::Format(
                "kernel PCA payload has inconsistent shapes".into(),
            ));
        }
        if !(self.width > 0.0) || !(self.q_ucl > 0.0) {
            return Err(Error::Format(
                "kernel PCA width or limit out of range".into(),
            ));
        }
        Ok(())
    }
}

pub fn exact_kpca_baseline(x: &DMatrix<f64>, width: WidthRule, level: f64) -> Result<KpcaBaseline> {
    KpcaBaseline::fit(x, width, level, Retention::AboveMean, DEFAULT_KPCA_CAP).map(|f| f.model)
}
