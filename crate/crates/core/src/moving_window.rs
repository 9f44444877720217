//! Adaptive moving-window monitor: fit on the `w` most mutually dissimilar
//! training samples, then slide the window whenever a normal sample carries
//! enough new information.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::detector::{Detector, MonitorConfig, Score};
use crate::error::{Error, Result};
use crate::features::embed_batch;
use crate::kde::empirical_quantile;
use crate::pca::Retention;
use crate::stream::{OnlineMonitor, StepOutcome};

/// Default quantile level for the update threshold.
pub const DEFAULT_DELTA_LEVEL: f64 = 0.8;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Greedy farthest-point selection of `w` rows under cosine similarity.
///
/// Starts from the pair with the smallest cosine, then repeatedly adds the
/// row whose largest cosine to the selection is smallest. Ties go to the
/// lowest index. Indices come back sorted (time order).
pub fn screen_dissimilar(x: &DMatrix<f64>, w: usize) -> Result<Vec<usize>> {
    let n = x.nrows();
    if w == 0 {
        return Err(Error::param("w", "window width must be at least 1"));
    }
    if w > n {
        return Err(Error::param(
            "w",
            format!("window width {w} exceeds the {n} available samples"),
        ));
    }
    let mut unit = x.clone();
    for (k, mut row) in unit.row_iter_mut().enumerate() {
        let norm = row.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroNorm { index: k });
        }
        row /= norm;
    }
    if w == n {
        return Ok((0..n).collect());
    }
    let cos = &unit * unit.transpose();

    let (mut a, mut b, mut best) = (0, 1.min(n - 1), f64::INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            if cos[(i, j)] < best {
                best = cos[(i, j)];
                (a, b) = (i, j);
            }
        }
    }
    if w == 1 {
        return Ok(vec![a]);
    }

    let mut chosen = vec![false; n];
    chosen[a] = true;
    chosen[b] = true;
    let mut worst: Vec<f64> = (0..n).map(|k| cos[(k, a)].max(cos[(k, b)])).collect();
    for _ in 2..w {
        let mut pick = None;
        for k in 0..n {
            if !chosen[k] && pick.is_none_or(|p: usize| worst[k] < worst[p]) {
                pick = Some(k);
            }
        }
        let p = pick.expect("w < n leaves a candidate");
        chosen[p] = true;
        for k in 0..n {
            worst[k] = worst[k].max(cos[(k, p)]);
        }
    }
    Ok((0..n).filter(|&k| chosen[k]).collect())
}

/// `|‖Ẑ‖ − ‖Z(x)‖|`, where `Ẑ` holds the dot products of `z` with each
/// window feature vector.
pub fn novelty(z: &[f64], window: &[Vec<f64>]) -> f64 {
    let zhat_sq: f64 = window
        .iter()
        .map(|f| {
            let d: f64 = f.iter().zip(z).map(|(a, b)| a * b).sum();
            d * d
        })
        .sum();
    let znorm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    (zhat_sq.sqrt() - znorm).abs()
}

/// Result of one moving-window step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MwStep {
    pub score: Score,
    pub novelty: f64,
    pub updated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingWindowState {
    /// Raw samples, oldest first.
    pub window: VecDeque<Vec<f64>>,
    pub detector: Detector,
    pub delta: f64,
    pub delta_level: f64,
    pub retention: Retention,
    pub update_count: usize,
    /// Uncentered features of the window under the current detector.
    #[serde(skip)]
    features: Vec<Vec<f64>>,
}

impl MovingWindowState {
    pub fn fit(x: &DMatrix<f64>, w: usize, cfg: &MonitorConfig, delta_level: f64) -> Result<Self> {
        cfg.validate()?;
        if !(delta_level > 0.0 && delta_level <= 1.0) {
            return Err(Error::param(
                "delta_level",
                format!("must lie in (0, 1], got {delta_level}"),
            ));
        }
        if w < 2 {
            return Err(Error::param(
                "w",
                format!("window width must be at least 2, got {w}"),
            ));
        }
        if w > x.nrows() {
            return Err(Error::param(
                "w",
                format!(
                    "window width {w} exceeds the {} available samples",
                    x.nrows()
                ),
            ));
        }
        let picked = screen_dissimilar(x, w)?;
        let xs = x.select_rows(picked.iter());
        let fit = Detector::fit(&xs, cfg)?;
        let features: Vec<Vec<f64>> = (0..w).map(|k| fit.features.row_vec(k)).collect();
        let stats: Vec<f64> = features.iter().map(|z| novelty(z, &features)).collect();
        let delta = empirical_quantile(&stats, delta_level);
        Ok(Self {
            window: picked
                .iter()
                .map(|&k| x.row(k).iter().copied().collect())
                .collect(),
            detector: fit.detector,
            delta,
            delta_level,
            retention: cfg.retention,
            update_count: 0,
            features,
        })
    }

    pub fn width(&self) -> usize {
        self.window.len()
    }

    pub fn input_dim(&self) -> usize {
        self.detector.input_dim()
    }

    fn window_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.window.len(),
            self.input_dim(),
            self.window.iter().flatten().copied(),
        )
    }

    /// Recomputes the cached window features; needed after deserializing.
    pub fn restore(mut self) -> Result<Self> {
        self.validate_shapes()?;
        let xn = self.detector.normalizer.apply(&self.window_matrix())?;
        let z = embed_batch(&self.detector.map, &xn)?;
        self.features = (0..z.samples()).map(|k| z.row_vec(k)).collect();
        Ok(self)
    }

    fn validate_shapes(&self) -> Result<()> {
        self.detector.validate()?;
        let d = self.input_dim();
        if self.window.len() < 2 || self.window.iter().any(|s| s.len() != d) {
            return Err(Error::Format(
                "moving-window samples disagree with the detector".into(),
            ));
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(Error::Format(
                "moving-window update threshold is invalid".into(),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_shapes()?;
        if self.features.len() != self.window.len() {
            return Err(Error::Format(
                "moving-window features are missing; call restore".into(),
            ));
        }
        Ok(())
    }

    pub fn step(&mut self, x: &[f64]) -> Result<MwStep> {
        let z = self.detector.embed_sample(x)?;
        let q = self.detector.pca.q_raw(&z)?;
        let score = Score {
            q,
            threshold: self.detector.q_ucl,
            alarm: q > self.detector.q_ucl,
        };
        let novelty = novelty(&z, &self.features);
        let updated = !score.alarm && novelty >= self.delta;
        if updated {
            self.window.pop_front();
            self.window.push_back(x.to_vec());
            let fit = Detector::fit_with_map(
                &self.window_matrix(),
                self.detector.map.clone(),
                self.detector.level,
                self.retention,
            )?;
            self.features = (0..fit.features.samples())
                .map(|k| fit.features.row_vec(k))
                .collect();
            self.detector = fit.detector;
            self.update_count += 1;
        }
        Ok(MwStep {
            score,
            novelty,
            updated,
        })
    }
}

pub fn mw_fit(
    x: &DMatrix<f64>,
    w: usize,
    cfg: &MonitorConfig,
    delta_level: f64,
) -> Result<MovingWindowState> {
    MovingWindowState::fit(x, w, cfg, delta_level)
}

pub fn mw_step(state: &mut MovingWindowState, x: &[f64]) -> Result<MwStep> {
    state.step(x)
}

impl OnlineMonitor for MovingWindowState {
    fn input_dim(&self) -> usize {
        self.detector.input_dim()
    }

    fn step(&mut self, x: &[f64]) -> Result<StepOutcome> {
        let s = MovingWindowState::step(self, x)?;
        Ok(StepOutcome {
            score: Some(s.score),
            updated: s.updated,
        })
    }
}
