//! Sample-by-sample monitoring interface shared by all fitted monitors.

use crate::detector::{Detector, Score};
use crate::error::Result;

/// Result of feeding one sample to an online monitor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// `None` while the lag buffer is still filling.
    pub score: Option<Score>,
    /// The monitor refit itself after this sample.
    pub updated: bool,
}

impl StepOutcome {
    pub fn warming() -> Self {
        Self {
            score: None,
            updated: false,
        }
    }

    pub fn scored(score: Score) -> Self {
        Self {
            score: Some(score),
            updated: false,
        }
    }

    pub fn is_warming(&self) -> bool {
        self.score.is_none()
    }

    pub fn alarm(&self) -> bool {
        self.score.is_some_and(|s| s.alarm)
    }
}

pub trait OnlineMonitor {
    fn input_dim(&self) -> usize;

    /// Number of leading samples that only fill history.
    fn warmup(&self) -> usize {
        0
    }

    fn step(&mut self, x: &[f64]) -> Result<StepOutcome>;
}

/// Stateless wrapper so a static detector can be driven like the others.
pub struct StaticStream<'a> {
    pub detector: &'a Detector,
}

impl OnlineMonitor for StaticStream<'_> {
    fn input_dim(&self) -> usize {
        self.detector.input_dim()
    }

    fn step(&mut self, x: &[f64]) -> Result<StepOutcome> {
        self.detector.score(x).map(StepOutcome::scored)
    }
}
