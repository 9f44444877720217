//! Dynamic monitoring on time-lagged vectors `y_t = (x_{t-l}, ..., x_t)`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detector::{Detector, FitOutput, MonitorConfig, Score};
use crate::error::{Error, Result};
use crate::stream::{OnlineMonitor, StepOutcome};

/// Stacks each sample with its `lag` predecessors, oldest block first.
/// Output row `t - lag` holds `(x_{t-lag}, ..., x_t)`, so the shape is
/// `(n - lag) x D (lag + 1)`.
pub fn lag_embed(x: &DMatrix<f64>, lag: usize) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    if n <= lag {
        return Err(Error::TooFewSamples {
            needed: lag + 1,
            got: n,
        });
    }
    Ok(DMatrix::from_fn(n - lag, d * (lag + 1), |r, c| {
        x[(r + c / d, c % d)]
    }))
}

/// Static monitor fitted on lag-embedded samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicDetector {
    pub lag: usize,
    pub detector: Detector,
}

impl DynamicDetector {
    pub fn fit(x: &DMatrix<f64>, lag: usize, cfg: &MonitorConfig) -> Result<(Self, FitOutput)> {
        if x.nrows() < lag + 2 {
            return Err(Error::TooFewSamples {
                needed: lag + 2,
                got: x.nrows(),
            });
        }
        let y = lag_embed(x, lag)?;
        let out = Detector::fit(&y, cfg)?;
        Ok((
            Self {
                lag,
                detector: out.detector.clone(),
            },
            out,
        ))
    }

    /// Raw input dimension `D` (the detector sees `D (lag + 1)`).
    pub fn input_dim(&self) -> usize {
        self.detector.input_dim() / (self.lag + 1)
    }

    /// Scores one already stacked vector.
    pub fn score_lagged(&self, y: &[f64]) -> Result<Score> {
        self.detector.score(y)
    }

    pub fn stream(&self) -> DynamicStream<'_> {
        DynamicStream {
            model: self,
            history: VecDeque::with_capacity(self.lag + 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        if self.detector.input_dim() % (self.lag + 1) != 0 {
            return Err(Error::Format(
                "lagged dimension is not a multiple of lag + 1".into(),
            ));
        }
        Ok(())
    }
}

pub fn fit_dynamic(x: &DMatrix<f64>, lag: usize, cfg: &MonitorConfig) -> Result<DynamicDetector> {
    DynamicDetector::fit(x, lag, cfg).map(|(d, _)| d)
}

/// Online dynamic monitor holding the last `lag + 1` raw samples.
pub struct DynamicStream<'a> {
    model: &'a DynamicDetector,
    history: VecDeque<Vec<f64>>,
}

impl OnlineMonitor for DynamicStream<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn warmup(&self) -> usize {
        self.model.lag
    }

    fn step(&mut self, x: &[f64]) -> Result<StepOutcome> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        if self.history.len() == self.model.lag + 1 {
            self.history.pop_front();
        }
        self.history.push_back(x.to_vec());
        if self.history.len() <= self.model.lag {
            return Ok(StepOutcome::warming());
        }
        let y: Vec<f64> = self.history.iter().flatten().copied().collect();
        self.model.score_lagged(&y).map(StepOutcome::scored)
    }
}
