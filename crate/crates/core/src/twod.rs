//! Two-dimensional monitoring: each time step is the `(l + 1) x m` matrix of
//! the last `l + 1` feature vectors, and the residual is measured with the
//! trace-form Q statistic against a shared right subspace `P`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::ZScore;
use crate::detector::{MonitorConfig, Score};
use crate::error::{Error, Result};
use crate::features::{embed_batch, AnyFeatureMap, FeatureMap};
use crate::kde::kde_threshold;
use crate::pca::{clamp_eigenvalues, sorted_eigen};
use crate::stream::{OnlineMonitor, StepOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoDModel {
    pub lag: usize,
    pub normalizer: ZScore,
    pub map: AnyFeatureMap,
    /// Elementwise mean of the training lag matrices, `(l + 1) x m`.
    pub a_mean: DMatrix<f64>,
    /// Eigenvalues of `G`, descending.
    pub eigenvalues: Vec<f64>,
    /// `m x a` retained eigenvectors of `G`.
    pub projection: DMatrix<f64>,
    pub q_ucl: f64,
    pub level: f64,
}

/// Training by-products of [`TwoDModel::fit`].
#[derive(Debug, Clone)]
pub struct TwoDFit {
    pub model: TwoDModel,
    pub g: DMatrix<f64>,
    pub training_q: Vec<f64>,
}

/// `tr(A (I - P P^T) A^T) = |A|_F^2 - |A P|_F^2`, clamped at zero.
pub fn q2d_statistic(projection: &DMatrix<f64>, centered: &DMatrix<f64>) -> Result<f64> {
    if centered.ncols() != projection.nrows() {
        return Err(Error::DimensionMismatch {
            expected: projection.nrows(),
            actual: centered.ncols(),
        });
    }
    let total = centered.norm_squared();
    let explained = (centered * projection).norm_squared();
    Ok((total - explained).max(0.0))
}

impl TwoDModel {
    pub fn fit(x: &DMatrix<f64>, lag: usize, cfg: &MonitorConfig) -> Result<TwoDFit> {
        cfg.validate()?;
        let n = x.nrows();
        if n < lag + 2 {
            return Err(Error::TooFewSamples {
                needed: lag + 2,
                got: n,
            });
        }
        let normalizer = ZScore::fit(x)?;
        let xn = normalizer.apply(x)?;
        let map = cfg.build_map(&xn)?;
        let z = embed_batch(&map, &xn)?;
        let zm = z.matrix();
        let m = z.features();
        let steps = n - lag;

        // A_t occupies rows t-lag..=t of Z, for t = lag..n.
        let mut a_mean = DMatrix::zeros(lag + 1, m);
        for t in lag..n {
            a_mean += zm.rows(t - lag, lag + 1);
        }
        a_mean /= steps as f64;

        // G = sum_t Abar_t^T Abar_t / steps, accumulated from stacked centered rows.
        let mut stacked = DMatrix::zeros(steps * (lag + 1), m);
        for (s, t) in (lag..n).enumerate() {
            let centered = zm.rows(t - lag, lag + 1) - &a_mean;
            stacked
                .rows_mut(s * (lag + 1), lag + 1)
                .copy_from(&centered);
        }
        let mut g = stacked.transpose() * &stacked / steps as f64;
        for i in 0..m {
            for j in (i + 1)..m {
                let v = 0.5 * (g[(i, j)] + g[(j, i)]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        let (mut eigenvalues, vectors) = sorted_eigen(g.clone())?;
        clamp_eigenvalues(&mut eigenvalues)?;
        let a = cfg.retention.count(&eigenvalues);
        if a == 0 || a > m {
            return Err(Error::param(
                "a",
                format!("retained count must lie in 1..={m}, got {a}"),
            ));
        }
        let projection = vectors.columns(0, a).into_owned();

        let training_q = (0..steps)
            .map(|s| {
                q2d_statistic(
                    &projection,
                    &stacked.rows(s * (lag + 1), lag + 1).into_owned(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let q_ucl = kde_threshold(&training_q, cfg.level)?;
        if !(q_ucl > 0.0) {
            return Err(Error::Numeric(format!(
                "control limit {q_ucl:e} is not positive"
            )));
        }
        Ok(TwoDFit {
            model: TwoDModel {
                lag,
                normalizer,
                map,
                a_mean,
                eigenvalues,
                projection,
                q_ucl,
                level: cfg.level,
            },
            g,
            training_q,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.normalizer.dim()
    }

    pub fn retained(&self) -> usize {
        self.projection.ncols()
    }

    /// Scores a raw `(l + 1) x m` feature matrix (oldest row first).
    pub fn score_matrix(&self, a: &DMatrix<f64>) -> Result<Score> {
        if a.shape() != self.a_mean.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.a_mean.len(),
                actual: a.len(),
            });
        }
        let q = q2d_statistic(&self.projection, &(a - &self.a_mean))?;
        Ok(Score {
            q,
            threshold: self.q_ucl,
            alarm: q > self.q_ucl,
        })
    }

    pub fn stream(&self) -> TwoDStream<'_> {
        TwoDStream {
            model: self,
            history: VecDeque::with_capacity(self.lag + 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.normalizer.validate()?;
        self.map.validate()?;
        let m = self.map.feature_count();
        if self.map.input_dim() != self.normalizer.dim()
            || self.a_mean.shape() != (self.lag + 1, m)
            || self.projection.nrows() != m
            || self.projection.ncols() == 0
            || self.eigenvalues.len() != m
        {
            return Err(Error::Format(
                "2D model parts disagree on dimensions".into(),
            ));
        }
        if !(self.q_ucl > 0.0) {
            return Err(Error::Format("2D control limit is not positive".into()));
        }
        Ok(())
    }
}

pub fn fit_2d(x: &DMatrix<f64>, lag: usize, cfg: &MonitorConfig) -> Result<TwoDModel> {
    TwoDModel::fit(x, lag, cfg).map(|f| f.model)
}

/// Online 2D monitor holding the last `lag + 1` feature vectors.
pub struct TwoDStream<'a> {
    model: &'a TwoDModel,
    history: VecDeque<Vec<f64>>,
}

impl OnlineMonitor for TwoDStream<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn warmup(&self) -> usize {
        self.model.lag
    }

    fn step(&mut self, x: &[f64]) -> Result<StepOutcome> {
        let xn = self.model.normalizer.apply_sample(x)?;
        let z = self.model.map.embed(&xn)?;
        if self.history.len() == self.model.lag + 1 {
            self.history.pop_front();
        }
        self.history.push_back(z);
        if self.history.len() <= self.model.lag {
            return Ok(StepOutcome::warming());
        }
        let m = self.model.map.feature_count();
        let a = DMatrix::from_row_iterator(
            self.model.lag + 1,
            m,
            self.history.iter().flatten().copied(),
        );
        self.model.score_matrix(&a).map(StepOutcome::scored)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_numerical_example;
    use crate::pca::Retention;

    #[test]
    fn q2d_zero_cases() {
        let p = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        assert_eq!(q2d_statistic(&p, &DMatrix::zeros(2, 3)).unwrap(), 0.0);
        let in_span = DMatrix::from_row_slice(2, 3, &[2.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        assert_eq!(q2d_statistic(&p, &in_span).unwrap(), 0.0);
    }

    #[test]
    fn q2d_matches_trace_form() {
        let s = 0.5f64.sqrt();
        let p = DMatrix::from_column_slice(3, 1, &[s, s, 0.0]);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let proj = DMatrix::identity(3, 3) - &p * p.transpose();
        let oracle = (&a * proj * a.transpose()).trace();
        assert!((q2d_statistic(&p, &a).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn g_is_symmetric_psd() {
        let x = gen_numerical_example(120, 4).unwrap().samples;
        let fit = TwoDModel::fit(&x, 3, &MonitorConfig::default()).unwrap();
        assert_eq!(fit.g, fit.g.transpose());
        assert!(fit.model.eigenvalues.iter().all(|&v| v >= 0.0));
        let ptp = fit.model.projection.transpose() * &fit.model.projection;
        assert!(
            (ptp - DMatrix::identity(fit.model.retained(), fit.model.retained()))
                .abs()
                .max()
                < 1e-8
        );
        fit.model.validate().unwrap();
    }

    #[test]
    fn full_projection_zeroes_training_q() {
        let x = gen_numerical_example(120, 4).unwrap().samples;
        let cfg = MonitorConfig {
            features: 12,
            retention: Retention::Fixed(12),
            ..Default::default()
        };
        let fit = TwoDModel::fit(&x, 2, &cfg);
        // The limit is the KDE of all-zero values, inflated above zero.
        let fit = fit.unwrap();
        assert!(fit.training_q.iter().all(|&q| q < 1e-10));
    }

    #[test]
    fn stream_matches_batch_windows() {
        let x = gen_numerical_example(150, 4).unwrap().samples;
        let model = fit_2d(&x, 3, &MonitorConfig::default()).unwrap();
        let test = gen_numerical_example(12, 8).unwrap().samples;
        let xn = model.normalizer.apply(&test).unwrap();
        let z = embed_batch(&model.map, &xn).unwrap();
        let mut s = model.stream();
        for k in 0..12 {
            let row: Vec<f64> = test.row(k).iter().copied().collect();
            let out = s.step(&row).unwrap();
            if k < 3 {
                assert!(out.is_warming());
            } else {
                let a = z.matrix().rows(k - 3, 4).into_owned();
                assert_eq!(out.score.unwrap(), model.score_matrix(&a).unwrap());
            }
        }
    }
}
