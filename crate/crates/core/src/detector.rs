//! Static monitoring: z-score, random features, PCA, Q statistic and a KDE
//! control limit, plus single-sample online scoring with the frozen model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::ZScore;
use crate::error::{Error, Result};
use crate::features::{
    embed_batch, AnyFeatureMap, BernoulliFeatureMap, FeatureMap, FeatureMatrix, FourierFeatureMap,
};
use crate::kde::kde_threshold;
use crate::kernel::median_heuristic_width;
use crate::pca::{center, q_statistic, PcaModel, Retention};

/// Rows used by the median heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 500;
/// Default factor of [`WidthRule::PerDimension`].
pub const DEFAULT_WIDTH_FACTOR: f64 = 30.0;

/// How the kernel width `c` is chosen from z-scored training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule", content = "value")]
pub enum WidthRule {
    Fixed(f64),
    /// Median pairwise squared distance over a strided subsample.
    MedianHeuristic,
    /// `c = factor * input dimension`. On unit-variance inputs this is the
    /// usual `r * D * sigma^2` choice for Gaussian-kernel process monitors.
    PerDimension(f64),
}

impl Default for WidthRule {
    fn default() -> Self {
        WidthRule::PerDimension(DEFAULT_WIDTH_FACTOR)
    }
}

impl WidthRule {
    pub fn resolve(&self, normalized: &DMatrix<f64>) -> Result<f64> {
        let c = match *self {
            WidthRule::Fixed(c) => c,
            WidthRule::MedianHeuristic => median_heuristic_width(normalized, MEDIAN_SUBSAMPLE)?,
            WidthRule::PerDimension(r) => r * normalized.ncols() as f64,
        };
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::param(
                "c",
                format!("kernel width must be positive, got {c}"),
            ));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    #[default]
    Bernoulli,
    Fourier,
}

/// Parameters shared by every random-feature monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Number of random features `m`.
    pub features: usize,
    /// Bernoulli probability (ignored by the Fourier map).
    pub p: f64,
    /// Confidence level of the control limit.
    pub level: f64,
    pub width: WidthRule,
    pub map: MapKind,
    pub retention: Retention,
    pub seed: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            features: 150,
            p: 0.05,
            level: 0.99,
            width: WidthRule::default(),
            map: MapKind::Bernoulli,
            retention: Retention::AboveMean,
            seed: 0,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.features == 0 {
            return Err(Error::param("m", "feature count must be at least 1"));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::param(
                "p",
                format!("must lie in (0, 1), got {}", self.p),
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::param(
                "alpha",
                format!("must lie in (0, 1), got {}", self.level),
            ));
        }
        if let WidthRule::Fixed(c) | WidthRule::PerDimension(c) = self.width {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::param("c", format!("must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Draws the feature map for z-scored inputs `normalized`.
    pub fn build_map(&self, normalized: &DMatrix<f64>) -> Result<AnyFeatureMap> {
        let c = self.width.resolve(normalized)?;
        let d = normalized.ncols();
        Ok(match self.map {
            MapKind::Bernoulli => AnyFeatureMap::Bernoulli(BernoulliFeatureMap::new(
                d,
                self.features,
                self.p,
                c,
                self.seed,
            )?),
            MapKind::Fourier => {
                AnyFeatureMap::Fourier(FourierFeatureMap::new(d, self.features, c, self.seed)?)
            }
        })
    }
}

/// Outcome of scoring one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub q: f64,
    pub threshold: f64,
    pub alarm: bool,
}

/// Fitted static monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub normalizer: ZScore,
    pub map: AnyFeatureMap,
    pub pca: PcaModel,
    pub q_ucl: f64,
    pub level: f64,
}

/// Everything produced while fitting, for callers that need more than the model.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub detector: Detector,
    /// Training Q values in sample order.
    pub training_q: Vec<f64>,
    /// Uncentered training features.
    pub features: FeatureMatrix,
}

impl Detector {
    /// Fits with an existing feature map (used when refitting on a new window).
    pub fn fit_with_map(
        x: &DMatrix<f64>,
        map: AnyFeatureMap,
        level: f64,
        retention: Retention,
    ) -> Result<FitOutput> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let normalizer = ZScore::fit(x)?;
        let xn = normalizer.apply(x)?;
        let z = embed_batch(&map, &xn)?;
        let (zbar, mean) = center(&z)?;
        let pca = PcaModel::from_centered(&zbar, mean, retention)?;
        let training_q = (0..n)
            .map(|k| q_statistic(&pca, zbar.matrix().row(k).transpose().as_slice()))
            .collect::<Result<Vec<_>>>()?;
        let q_ucl = kde_threshold(&training_q, level)?;
        if !(q_ucl > 0.0) {
            return Err(Error::Numeric(format!(
                "control limit {q_ucl:e} is not positive"
            )));
        }
        Ok(FitOutput {
            detector: Detector {
                normalizer,
                map,
                pca,
                q_ucl,
                level,
            },
            training_q,
            features: z,
        })
    }

    pub fn fit(x: &DMatrix<f64>, cfg: &MonitorConfig) -> Result<FitOutput> {
        cfg.validate()?;
        let n = x.nrows();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        // Normalized once here for the width rule; fit_with_map redoes it.
        let xn = ZScore::fit(x)?.apply(x)?;
        let map = cfg.build_map(&xn)?;
        Self::fit_with_map(x, map, cfg.level, cfg.retention)
    }

    pub fn input_dim(&self) -> usize {
        self.normalizer.dim()
    }

    /// Raw features of one sample: normalize with the training statistics, then embed.
    pub fn embed_sample(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xn = self.normalizer.apply_sample(x)?;
        self.map.embed(&xn)
    }

    pub fn q(&self, x: &[f64]) -> Result<f64> {
        let z = self.embed_sample(x)?;
        self.pca.q_raw(&z)
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
        self.map.validate()?;
        self.pca.validate()?;
        if self.map.input_dim() != self.normalizer.dim()
            || self.map.feature_count() != self.pca.features()
        {
            return Err(Error::Format(
                "detector parts disagree on dimensions".into(),
            ));
        }
        if !(self.q_ucl > 0.0) || !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Format(
                "detector threshold or level out of range".into(),
            ));
        }
        Ok(())
    }
}

/// Fits the static monitor on in-control rows of `x`.
pub fn fit_static(x: &DMatrix<f64>, cfg: &MonitorConfig) -> Result<Detector> {
    Detector::fit(x, cfg).map(|f| f.detector)
}

pub fn score_online(det: &Detector, x: &[f64]) -> Result<Score> {
    det.score(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_numerical_example;

    #[test]
    fn fit_is_deterministic() {
        let x = gen_numerical_example(300, 1).unwrap().samples;
        let cfg = MonitorConfig {
            seed: 5,
            ..Default::default()
        };
        let a = fit_static(&x, &cfg).unwrap();
        let b = fit_static(&x, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.pca.retained() >= 1);
        a.validate().unwrap();
    }

    #[test]
    fn constant_variable_is_named() {
        let mut x = gen_numerical_example(50, 1).unwrap().samples;
        x.column_mut(2).fill(4.0);
        assert!(matches!(
            fit_static(&x, &MonitorConfig::default()),
            Err(Error::ZeroVariance { index: 2 })
        ));
    }

    #[test]
    fn training_sample_reproduces_training_q() {
        let x = gen_numerical_example(200, 3).unwrap().samples;
        let fit = Detector::fit(&x, &MonitorConfig::default()).unwrap();
        for k in [0, 17, 199] {
            let row: Vec<f64> = x.row(k).iter().copied().collect();
            let q = fit.detector.q(&row).unwrap();
            assert!((q - fit.training_q[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn lower_threshold_never_unflags() {
        let x = gen_numerical_example(200, 3).unwrap().samples;
        let det = fit_static(&x, &MonitorConfig::default()).unwrap();
        let mut lower = det.clone();
        lower.q_ucl *= 0.5;
        let test = gen_numerical_example(100, 9).unwrap();
        for k in 0..100 {
            let s = test.sample(k);
            if det.score(&s).unwrap().alarm {
                assert!(lower.score(&s).unwrap().alarm);
            }
        }
    }

    #[test]
    fn dimension_mismatch_on_score() {
        let x = gen_numerical_example(100, 3).unwrap().samples;
        let det = fit_static(&x, &MonitorConfig::default()).unwrap();
        assert!(det.score(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn width_rules() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 2.0, 0.0]);
        assert_eq!(WidthRule::PerDimension(30.0).resolve(&x).unwrap(), 60.0);
        assert_eq!(WidthRule::Fixed(2.0).resolve(&x).unwrap(), 2.0);
        assert_eq!(WidthRule::MedianHeuristic.resolve(&x).unwrap(), 1.0);
        assert!(WidthRule::Fixed(0.0).resolve(&x).is_err());
    }
}
