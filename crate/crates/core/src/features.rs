//! Random feature maps approximating the Gaussian kernel `exp(-|x - y|^2 / c)`.
//!
//! Two maps share the `sqrt(2) cos(w.x + u)` form and differ only in how the
//! direction `w` is drawn:
//!
//! * [`BernoulliFeatureMap`]: `w = (b - p 1) / sqrt(c p (1 - p) / 2)` with `b`
//!   a 0/1 vector of i.i.d. Bernoulli(p) entries. Only the indices of the ones
//!   are stored, so the inner product costs `O(|support| + D)` per feature
//!   (the `p * sum(x)` term is shared by all features of one sample).
//! * [`FourierFeatureMap`]: dense `w ~ N(0, 2 I / c)`.
//!
//! Samples are the rows of a `n x D` matrix throughout the crate.

use std::f64::consts::{SQRT_2, TAU};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Width `c` of the Gaussian kernel `exp(-|x - y|^2 / c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    width: f64,
}

impl GaussianKernel {
    pub fn new(width: f64) -> Result<Self> {
        check_width(width)?;
        Ok(Self { width })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / self.width).exp()
    }
}

fn check_width(c: f64) -> Result<()> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::param(
            "c",
            format!("kernel width must be positive, got {c}"),
        ));
    }
    Ok(())
}

/// Common interface of the random feature maps.
pub trait FeatureMap {
    fn input_dim(&self) -> usize;
    fn feature_count(&self) -> usize;

    /// Writes `Z(x)` into `out`. Callers guarantee the lengths.
    fn embed_unchecked(&self, x: &[f64], out: &mut [f64]);

    fn embed_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        if out.len() != self.feature_count() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_count(),
                actual: out.len(),
            });
        }
        self.embed_unchecked(x, out);
        Ok(())
    }

    fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.feature_count()];
        self.embed_into(x, &mut out)?;
        Ok(out)
    }
}

/// Sparse random Bernoulli feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliFeatureMap {
    dim: usize,
    p: f64,
    width: f64,
    seed: u64,
    /// Sorted zero-based indices of the ones in each Bernoulli vector.
    supports: Vec<Vec<usize>>,
    phases: Vec<f64>,
}

impl BernoulliFeatureMap {
    /// Draws `m` support sets (row by row, `D` uniform draws each) and then `m`
    /// phases in `[0, 2 pi)` from a ChaCha8 stream seeded with `seed`.
    pub fn new(dim: usize, m: usize, p: f64, width: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("D", "input dimension must be at least 1"));
        }
        if m == 0 {
            return Err(Error::param("m", "feature count must be at least 1"));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::param("p", format!("must lie in (0, 1), got {p}")));
        }
        check_width(width)?;

        let mut rng = seeded(seed);
        let supports = (0..m)
            .map(|_| (0..dim).filter(|_| rng.random::<f64>() < p).collect())
            .collect();
        let phases = (0..m).map(|_| rng.random_range(0.0..TAU)).collect();
        Ok(Self {
            dim,
            p,
            width,
            seed,
            supports,
            phases,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn supports(&self) -> &[Vec<usize>] {
        &self.supports
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// `sqrt(c p (1 - p) / 2)`, the divisor that standardizes `b - p 1`.
    pub fn scale(&self) -> f64 {
        (self.width * self.p * (1.0 - self.p) / 2.0).sqrt()
    }

    /// Total number of ones across all Bernoulli vectors.
    pub fn nonzeros(&self) -> usize {
        self.supports.iter().map(Vec::len).sum()
    }

    /// Structural checks for maps that come from outside (e.g. a model file).
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.supports.is_empty() {
            return Err(Error::Format(
                "feature map has no dimensions or features".into(),
            ));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::param(
                "p",
                format!("must lie in (0, 1), got {}", self.p),
            ));
        }
        check_width(self.width)?;
        if self.phases.len() != self.supports.len() {
            return Err(Error::Format(
                "phase count differs from feature count".into(),
            ));
        }
        for s in &self.supports {
            if s.windows(2).any(|w| w[0] >= w[1]) || s.last().is_some_and(|&i| i >= self.dim) {
                return Err(Error::Format(
                    "support set out of range or not strictly sorted".into(),
                ));
            }
        }
        Ok(())
    }
}

impl FeatureMap for BernoulliFeatureMap {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn feature_count(&self) -> usize {
        self.supports.len()
    }

    fn embed_unchecked(&self, x: &[f64], out: &mut [f64]) {
        let inv_scale = 1.0 / self.scale();
        let shift = self.p * x.iter().sum::<f64>();
        for ((z, support), &u) in out.iter_mut().zip(&self.supports).zip(&self.phases) {
            let partial: f64 = support.iter().map(|&i| x[i]).sum();
            *z = SQRT_2 * ((partial - shift) * inv_scale + u).cos();
        }
    }
}

/// Dense random Fourier feature map with Gaussian directions `N(0, 2 I / c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierFeatureMap {
    dim: usize,
    width: f64,
    seed: u64,
    /// Row-major `m x D` direction matrix.
    directions: Vec<f64>,
    phases: Vec<f64>,
}

impl FourierFeatureMap {
    pub fn new(dim: usize, m: usize, width: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("D", "input dimension must be at least 1"));
        }
        if m == 0 {
            return Err(Error::param("m", "feature count must be at least 1"));
        }
        check_width(width)?;
        let mut rng = seeded(seed);
        let normal =
            Normal::new(0.0, (2.0 / width).sqrt()).map_err(|e| Error::param("c", e.to_string()))?;
        let directions = (0..m * dim).map(|_| normal.sample(&mut rng)).collect();
        let phases = (0..m).map(|_| rng.random_range(0.0..TAU)).collect();
        Ok(Self {
            dim,
            width,
            seed,
            directions,
            phases,
        })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn direction(&self, j: usize) -> &[f64] {
        &self.directions[j * self.dim..(j + 1) * self.dim]
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn validate(&self) -> Result<()> {
        check_width(self.width)?;
        if self.dim == 0
            || self.phases.is_empty()
            || self.directions.len() != self.phases.len() * self.dim
        {
            return Err(Error::Format(
                "inconsistent Fourier feature map shape".into(),
            ));
        }
        Ok(())
    }
}

impl FeatureMap for FourierFeatureMap {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn feature_count(&self) -> usize {
        self.phases.len()
    }

    fn embed_unchecked(&self, x: &[f64], out: &mut [f64]) {
        for (j, (z, &u)) in out.iter_mut().zip(&self.phases).enumerate() {
            let w = self.direction(j);
            let dot: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            *z = SQRT_2 * (dot + u).cos();
        }
    }
}

/// Either feature map, for storage inside fitted monitors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyFeatureMap {
    Bernoulli(BernoulliFeatureMap),
    Fourier(FourierFeatureMap),
}

impl AnyFeatureMap {
    pub fn width(&self) -> f64 {
        match self {
            AnyFeatureMap::Bernoulli(m) => m.width(),
            AnyFeatureMap::Fourier(m) => m.width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AnyFeatureMap::Bernoulli(m) => m.validate(),
            AnyFeatureMap::Fourier(m) => m.validate(),
        }
    }
}

impl FeatureMap for AnyFeatureMap {
    fn input_dim(&self) -> usize {
        match self {
            AnyFeatureMap::Bernoulli(m) => m.input_dim(),
            AnyFeatureMap::Fourier(m) => m.input_dim(),
        }
    }

    fn feature_count(&self) -> usize {
        match self {
            AnyFeatureMap::Bernoulli(m) => m.feature_count(),
            AnyFeatureMap::Fourier(m) => m.feature_count(),
        }
    }

    fn embed_unchecked(&self, x: &[f64], out: &mut [f64]) {
        match self {
            AnyFeatureMap::Bernoulli(m) => m.embed_unchecked(x, out),
            AnyFeatureMap::Fourier(m) => m.embed_unchecked(x, out),
        }
    }
}

/// `n x m` matrix whose row `k` is `Z(x_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(pub DMatrix<f64>);

impl FeatureMatrix {
    pub fn samples(&self) -> usize {
        self.0.nrows()
    }

    pub fn features(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn row_vec(&self, k: usize) -> Vec<f64> {
        self.0.row(k).iter().copied().collect()
    }
}

/// Embeds every row of `x` (`n x D`). Rows are independent, so the parallel
/// result is identical to a sequential loop.
pub fn embed_batch<M: FeatureMap + Sync + ?Sized>(
    map: &M,
    x: &DMatrix<f64>,
) -> Result<FeatureMatrix> {
    if x.ncols() != map.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: map.input_dim(),
            actual: x.ncols(),
        });
    }
    let m = map.feature_count();
    let mut buf = vec![0.0; x.nrows() * m];
    buf.par_chunks_mut(m.max(1))
        .enumerate()
        .for_each(|(k, out)| {
            let row: Vec<f64> = x.row(k).iter().copied().collect();
            map.embed_unchecked(&row, out);
        });
    Ok(FeatureMatrix(DMatrix::from_row_slice(x.nrows(), m, &buf)))
}
