//! One type over every monitoring method, plus the versioned JSON model file.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detector::{Detector, MapKind, MonitorConfig, Score};
use crate::dynamic::DynamicDetector;
use crate::error::{Error, Result};
use crate::kpca::{KpcaBaseline, DEFAULT_KPCA_CAP};
use crate::moving_window::{MovingWindowState, DEFAULT_DELTA_LEVEL};
use crate::stream::{OnlineMonitor, StaticStream, StepOutcome};
use crate::twod::TwoDModel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "static")]
    Static,
    #[serde(rename = "dynamic")]
    Dynamic,
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "moving-window")]
    MovingWindow,
    #[serde(rename = "kpca-baseline")]
    KpcaBaseline,
    #[serde(rename = "rpca-fourier")]
    RpcaFourier,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Static,
        Method::RpcaFourier,
        Method::KpcaBaseline,
        Method::Dynamic,
        Method::TwoD,
        Method::MovingWindow,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Static => "static",
            Method::Dynamic => "dynamic",
            Method::TwoD => "2d",
            Method::MovingWindow => "moving-window",
            Method::KpcaBaseline => "kpca-baseline",
            Method::RpcaFourier => "rpca-fourier",
        }
    }

    /// Lag used when none is configured.
    pub fn default_lag(&self) -> usize {
        match self {
            Method::Dynamic => 2,
            Method::TwoD => 10,
            _ => 0,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::param(
                    "method",
                    format!("unknown method `{s}` (static, dynamic, 2d, moving-window, kpca-baseline, rpca-fourier)"),
                )
            })
    }
}

/// Everything needed to fit one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    pub monitor: MonitorConfig,
    pub lag: usize,
    pub window: usize,
    pub delta_level: f64,
    pub kpca_cap: usize,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            monitor: MonitorConfig::default(),
            lag: method.default_lag(),
            window: 500,
            delta_level: DEFAULT_DELTA_LEVEL,
            kpca_cap: DEFAULT_KPCA_CAP,
        }
    }

    /// Map configuration actually used: the Fourier baseline overrides the map kind.
    pub fn effective_monitor(&self) -> MonitorConfig {
        let mut cfg = self.monitor;
        if self.method == Method::RpcaFourier {
            cfg.map = MapKind::Fourier;
        }
        cfg
    }
}

/// A fitted monitor of any method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum FittedMonitor {
    Static(Detector),
    Dynamic(DynamicDetector),
    TwoD(TwoDModel),
    MovingWindow(MovingWindowState),
    Kpca(KpcaBaseline),
}

/// Fit result with the training statistics kept for reporting.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub monitor: FittedMonitor,
    pub training_q: Vec<f64>,
}

impl FittedMonitor {
    pub fn fit(spec: &MethodSpec, x: &DMatrix<f64>) -> Result<Fitted> {
        let cfg = spec.effective_monitor();
        Ok(match spec.method {
            Method::Static | Method::RpcaFourier => {
                let out = Detector::fit(x, &cfg)?;
                Fitted {
                    monitor: FittedMonitor::Static(out.detector),
                    training_q: out.training_q,
                }
            }
            Method::Dynamic => {
                let (d, out) = DynamicDetector::fit(x, spec.lag, &cfg)?;
                Fitted {
                    monitor: FittedMonitor::Dynamic(d),
                    training_q: out.training_q,
                }
            }
            Method::TwoD => {
                let out = TwoDModel::fit(x, spec.lag, &cfg)?;
                Fitted {
                    monitor: FittedMonitor::TwoD(out.model),
                    training_q: out.training_q,
                }
            }
            Method::MovingWindow => {
                let state = MovingWindowState::fit(x, spec.window, &cfg, spec.delta_level)?;
                let training_q = state
                    .window
                    .iter()
                    .map(|s| state.detector.q(s))
                    .collect::<Result<Vec<_>>>()?;
                Fitted {
                    monitor: FittedMonitor::MovingWindow(state),
                    training_q,
                }
            }
            Method::KpcaBaseline => {
                cfg.validate()?;
                let out = KpcaBaseline::fit(x, cfg.width, cfg.level, cfg.retention, spec.kpca_cap)?;
                Fitted {
                    monitor: FittedMonitor::Kpca(out.model),
                    training_q: out.training_q,
                }
            }
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FittedMonitor::Static(d) => d.input_dim(),
            FittedMonitor::Dynamic(d) => d.input_dim(),
            FittedMonitor::TwoD(m) => m.input_dim(),
            FittedMonitor::MovingWindow(s) => s.input_dim(),
            FittedMonitor::Kpca(k) => k.input_dim(),
        }
    }

    pub fn lag(&self) -> usize {
        match self {
            FittedMonitor::Dynamic(d) => d.lag,
            FittedMonitor::TwoD(m) => m.lag,
            _ => 0,
        }
    }

    /// Number of retained components.
    pub fn retained(&self) -> usize {
        match self {
            FittedMonitor::Static(d) => d.pca.retained(),
            FittedMonitor::Dynamic(d) => d.detector.pca.retained(),
            FittedMonitor::TwoD(m) => m.retained(),
            FittedMonitor::MovingWindow(s) => s.detector.pca.retained(),
            FittedMonitor::Kpca(k) => k.retained,
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            FittedMonitor::Static(d) => d.q_ucl,
            FittedMonitor::Dynamic(d) => d.detector.q_ucl,
            FittedMonitor::TwoD(m) => m.q_ucl,
            FittedMonitor::MovingWindow(s) => s.detector.q_ucl,
            FittedMonitor::Kpca(k) => k.q_ucl,
        }
    }

    /// Fresh online monitor. A moving-window stream works on its own copy of the state.
    pub fn stream(&self) -> Box<dyn OnlineMonitor + '_> {
        match self {
            FittedMonitor::Static(d) => Box::new(StaticStream { detector: d }),
            FittedMonitor::Dynamic(d) => Box::new(d.stream()),
            FittedMonitor::TwoD(m) => Box::new(m.stream()),
            FittedMonitor::MovingWindow(s) => Box::new(s.clone()),
            FittedMonitor::Kpca(k) => Box::new(KpcaStream { model: k }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FittedMonitor::Static(d) => d.validate(),
            FittedMonitor::Dynamic(d) => d.validate(),
            FittedMonitor::TwoD(m) => m.validate(),
            FittedMonitor::MovingWindow(s) => s.validate(),
            FittedMonitor::Kpca(k) => k.validate(),
        }
    }
}

struct KpcaStream<'a> {
    model: &'a KpcaBaseline,
}

impl OnlineMonitor for KpcaStream<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn step(&mut self, x: &[f64]) -> Result<StepOutcome> {
        self.model.score(x).map(StepOutcome::scored)
    }
}

/// Single-sample scoring for the stateless monitors.
pub fn score_stateless(monitor: &FittedMonitor, x: &[f64]) -> Option<Result<Score>> {
    match monitor {
        FittedMonitor::Static(d) => Some(d.score(x)),
        FittedMonitor::Kpca(k) => Some(k.score(x)),
        _ => None,
    }
}

/// Persisted model: a versioned, self-describing JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub spec: MethodSpec,
    pub monitor: FittedMonitor,
}

impl ModelFile {
    pub fn new(spec: MethodSpec, monitor: FittedMonitor) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            spec,
            monitor,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("cannot serialize model: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("not a model file: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} is not supported (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        let mut file: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("malformed model file: {e}")))?;
        if let FittedMonitor::MovingWindow(state) = file.monitor {
            file.monitor = FittedMonitor::MovingWindow(state.restore()?);
        }
        file.monitor.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
