//! Run configuration read from TOML. Command-line flags are applied on top
//! by the binary.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{gen_numerical_example, inject_fault, load_labeled_csv, Fault, SampleStream};
use crate::detector::{MapKind, MonitorConfig, WidthRule, DEFAULT_WIDTH_FACTOR};
use crate::error::{Error, Result};
use crate::kpca::DEFAULT_KPCA_CAP;
use crate::model::{Method, MethodSpec};
use crate::moving_window::DEFAULT_DELTA_LEVEL;
use crate::pca::Retention;

impl FromStr for WidthRule {
    type Err = Error;

    /// Accepts a positive number, `median-heuristic`, or `per-dimension:<factor>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "median-heuristic" {
            return Ok(WidthRule::MedianHeuristic);
        }
        let (text, per_dim) = match s.strip_prefix("per-dimension:") {
            Some(rest) => (rest, true),
            None => (s, false),
        };
        let v: f64 = text.parse().map_err(|_| {
            Error::param(
                "c",
                format!("expected a number, `median-heuristic` or `per-dimension:<r>`, got `{s}`"),
            )
        })?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::param("c", format!("must be positive, got {v}")));
        }
        Ok(if per_dim {
            WidthRule::PerDimension(v)
        } else {
            WidthRule::Fixed(v)
        })
    }
}

impl fmt::Display for WidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WidthRule::Fixed(c) => write!(f, "{c}"),
            WidthRule::MedianHeuristic => f.write_str("median-heuristic"),
            WidthRule::PerDimension(r) => write!(f, "per-dimension:{r}"),
        }
    }
}

/// `c` may be written as a bare number or as a string rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum WidthValue {
    Number(f64),
    Text(String),
}

fn de_width<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<WidthRule, D::Error> {
    match WidthValue::deserialize(d)? {
        WidthValue::Number(v) => format!("{v}").parse(),
        WidthValue::Text(s) => s.parse(),
    }
    .map_err(serde::de::Error::custom)
}

fn ser_width<S: serde::Serializer>(w: &WidthRule, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&w.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FaultChoice {
    #[default]
    None,
    Step,
    Ramp,
}

impl FaultChoice {
    pub fn fault(&self) -> Option<Fault> {
        match self {
            FaultChoice::None => None,
            FaultChoice::Step => Some(Fault::Step),
            FaultChoice::Ramp => Some(Fault::Ramp),
        }
    }
}

impl FromStr for FaultChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FaultChoice::None),
            "step" | "1" => Ok(FaultChoice::Step),
            "ramp" | "2" => Ok(FaultChoice::Ramp),
            _ => Err(Error::param(
                "fault",
                format!("expected none, step (1) or ramp (2), got `{s}`"),
            )),
        }
    }
}

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Generator {
        n: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        fault: FaultChoice,
        #[serde(default = "default_fault_start")]
        fault_start: usize,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: Option<String>,
    },
}

fn default_fault_start() -> usize {
    201
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Generator {
            n: 1000,
            seed: 1,
            fault: FaultChoice::None,
            fault_start: default_fault_start(),
        }
    }
}

impl DataSource {
    pub fn load(&self) -> Result<SampleStream> {
        match self {
            DataSource::Generator {
                n,
                seed,
                fault,
                fault_start,
            } => {
                let clean = gen_numerical_example(*n, *seed)?;
                match fault.fault() {
                    Some(f) => inject_fault(&clean, f, *fault_start),
                    None => Ok(clean),
                }
            }
            DataSource::Csv { path, label_column } => {
                load_labeled_csv(path, label_column.as_deref())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    /// Number of random features.
    pub m: usize,
    pub p: f64,
    #[serde(deserialize_with = "de_width", serialize_with = "ser_width")]
    pub c: WidthRule,
    pub alpha: f64,
    /// Time lag; the method default is used when absent.
    pub lag: Option<usize>,
    pub window: usize,
    pub delta_level: f64,
    pub seed: u64,
    /// Fixed number of retained components instead of the above-mean rule.
    pub components: Option<usize>,
    pub kpca_cap: usize,
    pub data: DataSource,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let monitor = MonitorConfig::default();
        Self {
            method: Method::Static,
            m: monitor.features,
            p: monitor.p,
            c: WidthRule::PerDimension(DEFAULT_WIDTH_FACTOR),
            alpha: monitor.level,
            lag: None,
            window: 500,
            delta_level: DEFAULT_DELTA_LEVEL,
            seed: 0,
            components: None,
            kpca_cap: DEFAULT_KPCA_CAP,
            data: DataSource::default(),
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::param("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec().monitor.validate()?;
        if self.method == Method::MovingWindow {
            if self.window < 2 {
                return Err(Error::param(
                    "window",
                    format!("must be at least 2, got {}", self.window),
                ));
            }
            if !(self.delta_level > 0.0 && self.delta_level <= 1.0) {
                return Err(Error::param(
                    "delta_level",
                    format!("must lie in (0, 1], got {}", self.delta_level),
                ));
            }
        }
        if self.components == Some(0) {
            return Err(Error::param("components", "must be at least 1"));
        }
        if self.kpca_cap == 0 {
            return Err(Error::param("kpca_cap", "must be at least 1"));
        }
        Ok(())
    }

    pub fn spec(&self) -> MethodSpec {
        MethodSpec {
            method: self.method,
            monitor: MonitorConfig {
                features: self.m,
                p: self.p,
                level: self.alpha,
                width: self.c,
                map: if self.method == Method::RpcaFourier {
                    MapKind::Fourier
                } else {
                    MapKind::Bernoulli
                },
                retention: self
                    .components
                    .map_or(Retention::AboveMean, Retention::Fixed),
                seed: self.seed,
            },
            lag: self.lag.unwrap_or_else(|| self.method.default_lag()),
            window: self.window,
            delta_level: self.delta_level,
            kpca_cap: self.kpca_cap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_syntax() {
        assert_eq!("2.5".parse::<WidthRule>().unwrap(), WidthRule::Fixed(2.5));
        assert_eq!(
            "median-heuristic".parse::<WidthRule>().unwrap(),
            WidthRule::MedianHeuristic
        );
        assert_eq!(
            "per-dimension:30".parse::<WidthRule>().unwrap(),
            WidthRule::PerDimension(30.0)
        );
        assert!("-1".parse::<WidthRule>().is_err());
        assert!("wide".parse::<WidthRule>().is_err());
    }

    #[test]
    fn toml_with_overrides() {
        let cfg = RunConfig::from_toml(
            r#"
            method = "2d"
            m = 200
            c = 12.0
            seed = 9

            [data]
            source = "csv"
            path = "train.csv"
            label_column = "fault"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.method, Method::TwoD);
        assert_eq!(cfg.c, WidthRule::Fixed(12.0));
        let spec = cfg.spec();
        assert_eq!(spec.lag, 10);
        assert_eq!(spec.monitor.features, 200);
        assert_eq!(spec.monitor.seed, 9);
        assert!(matches!(cfg.data, DataSource::Csv { .. }));
    }

    #[test]
    fn bad_fields_name_themselves() {
        let err = RunConfig::from_toml("p = 1.5")
            .unwrap()
            .validate()
            .unwrap_err();
        assert!(err.to_string().contains("`p`"));
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        let err = RunConfig::from_toml("c = \"wide\"").unwrap_err();
        assert!(err.to_string().contains("c"));
    }

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }
}
