//! Sample streams: the three-variable nonlinear test process, fault injection,
//! z-score normalization and labeled CSV files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Ordered samples (rows of `samples`) with optional fault labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStream {
    pub samples: DMatrix<f64>,
    pub labels: Option<Vec<bool>>,
    pub names: Vec<String>,
    pub provenance: String,
}

impl SampleStream {
    pub fn new(
        samples: DMatrix<f64>,
        labels: Option<Vec<bool>>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != samples.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: samples.nrows(),
                    actual: l.len(),
                });
            }
        }
        let names = (1..=samples.ncols()).map(|i| format!("x{i}")).collect();
        Ok(Self {
            samples,
            labels,
            names,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn sample(&self, k: usize) -> Vec<f64> {
        self.samples.row(k).iter().copied().collect()
    }

    pub fn label(&self, k: usize) -> Option<bool> {
        self.labels.as_ref().map(|l| l[k])
    }

    /// Writes the stream as CSV with 17 significant digits, plus a `label`
    /// column when labels are present.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut header = self.names.join(",");
        if self.labels.is_some() {
            header.push_str(",label");
        }
        let io = |e| Error::io(path, e);
        writeln!(out, "{header}").map_err(io)?;
        for k in 0..self.len() {
            let mut line = self
                .samples
                .row(k)
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(",");
            if let Some(l) = self.label(k) {
                line.push_str(if l { ",1" } else { ",0" });
            }
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Generator for `x = (t, t^2 - 3t, -t^3 + 3t^2) + e` with `t ~ U[t_lo, t_hi]`
/// and `e_j ~ N(0, noise_var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericalExample {
    pub t_lo: f64,
    pub t_hi: f64,
    pub noise_var: f64,
}

impl Default for NumericalExample {
    fn default() -> Self {
        Self {
            t_lo: 0.01,
            t_hi: 2.0,
            noise_var: 0.01,
        }
    }
}

impl NumericalExample {
    pub fn curve(t: f64) -> [f64; 3] {
        [t, t * t - 3.0 * t, -t * t * t + 3.0 * t * t]
    }

    /// Draws `t` then the three noise terms for every sample in turn, so the
    /// `t` sequence for a seed does not depend on `noise_var`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<SampleStream> {
        if n == 0 {
            return Err(Error::param("n", "sample count must be at least 1"));
        }
        if !(self.t_lo <= self.t_hi) || self.noise_var < 0.0 {
            return Err(Error::param(
                "t_range",
                "need t_lo <= t_hi and nonnegative noise",
            ));
        }
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, self.noise_var.sqrt())
            .map_err(|e| Error::param("noise_var", e.to_string()))?;
        let mut buf = Vec::with_capacity(n * 3);
        for _ in 0..n {
            let t = if self.t_lo == self.t_hi {
                self.t_lo
            } else {
                rng.random_range(self.t_lo..=self.t_hi)
            };
            let c = Self::curve(t);
            for v in c {
                buf.push(v + noise.sample(&mut rng));
            }
        }
        SampleStream::new(
            DMatrix::from_row_slice(n, 3, &buf),
            None,
            format!(
                "numerical-example n={n} seed={seed} t=[{}, {}] noise_var={}",
                self.t_lo, self.t_hi, self.noise_var
            ),
        )
    }
}

pub fn gen_numerical_example(n: usize, seed: u64) -> Result<SampleStream> {
    NumericalExample::default().generate(n, seed)
}

/// Fault scenarios of the numerical example. `start` is the 1-based index of
/// the first faulty sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// `x1 -= 0.5` from `start` on.
    Step,
    /// `x2 += 0.01 (j - (start - 1))` for 1-based sample number `j >= start`.
    Ramp,
}

pub fn inject_fault(stream: &SampleStream, fault: Fault, start: usize) -> Result<SampleStream> {
    let n = stream.len();
    if start == 0 || start > n {
        return Err(Error::param(
            "fault_start",
            format!("must lie in 1..={n}, got {start}"),
        ));
    }
    let col = match fault {
        Fault::Step => 0,
        Fault::Ramp => 1,
    };
    if stream.dim() <= col {
        return Err(Error::DimensionMismatch {
            expected: col + 1,
            actual: stream.dim(),
        });
    }
    let mut out = stream.clone();
    for k in (start - 1)..n {
        let j = k + 1;
        match fault {
            Fault::Step => out.samples[(k, 0)] -= 0.5,
            Fault::Ramp => out.samples[(k, 1)] += 0.01 * (j - (start - 1)) as f64,
        }
    }
    out.labels = Some((1..=n).map(|j| j >= start).collect());
    out.provenance = format!(
        "{} + {fault:?} fault from sample {start}",
        stream.provenance
    );
    Ok(out)
}

pub fn inject_fault1(stream: &SampleStream, start: usize) -> Result<SampleStream> {
    inject_fault(stream, Fault::Step, start)
}

pub fn inject_fault2(stream: &SampleStream, start: usize) -> Result<SampleStream> {
    inject_fault(stream, Fault::Ramp, start)
}

/// Per-variable mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScore {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: n });
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            let mu = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if !(sd > f64::EPSILON * mu.abs().max(1.0)) {
                return Err(Error::ZeroVariance { index: j });
            }
            mean.push(mu);
            std.push(sd);
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.ncols(),
            });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[j]) / self.std[j]
        }))
    }

    pub fn apply_sample(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() || self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Format(
                "normalizer has mismatched or nonpositive scales".into(),
            ));
        }
        Ok(())
    }
}

/// Fits a z-score normalizer on `stream` and returns the normalized copy.
pub fn zscore_fit(stream: &SampleStream) -> Result<(SampleStream, ZScore)> {
    let z = ZScore::fit(&stream.samples)?;
    let out = zscore_apply(stream, &z)?;
    Ok((out, z))
}

pub fn zscore_apply(stream: &SampleStream, z: &ZScore) -> Result<SampleStream> {
    let mut out = stream.clone();
    out.samples = z.apply(&stream.samples)?;
    Ok(out)
}

fn parse_label(path: &Path, row: usize, column: usize, cell: &str) -> Result<bool> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(false),
        Ok(v) if v == 1.0 => Ok(true),
        _ => Err(Error::Csv {
            path: path.to_path_buf(),
            row,
            column,
            reason: format!("label must be 0 or 1, got {cell:?}"),
        }),
    }
}

/// Incremental reader over a labeled CSV file: header row, numeric cells,
/// optional 0/1 label column. Rows and columns in errors are 1-based, the
/// header being row 1.
pub struct CsvSampleReader {
    path: PathBuf,
    reader: csv::Reader<File>,
    label_index: Option<usize>,
    names: Vec<String>,
    width: usize,
    row: usize,
    record: csv::StringRecord,
}

impl CsvSampleReader {
    pub fn open(path: &Path, label_column: Option<&str>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                row: 1,
                column: 0,
                reason: e.to_string(),
            })?
            .clone();
        let width = headers.len();
        let label_index =
            match label_column {
                Some(name) => Some(headers.iter().position(|h| h.trim() == name).ok_or_else(
                    || Error::Csv {
                        path: path.to_path_buf(),
                        row: 1,
                        column: 0,
                        reason: format!("label column {name:?} not found"),
                    },
                )?),
                None => None,
            };
        let names = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != label_index)
            .map(|(_, h)| h.trim().to_string())
            .collect();
        Ok(Self {
            path: path.to_path_buf(),
            reader,
            label_index,
            names,
            width,
            row: 1,
            record: csv::StringRecord::new(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn has_labels(&self) -> bool {
        self.label_index.is_some()
    }

    /// Next `(sample, label)`, or `None` at end of file.
    pub fn next_sample(&mut self) -> Result<Option<(Vec<f64>, Option<bool>)>> {
        let more = self
            .reader
            .read_record(&mut self.record)
            .map_err(|e| Error::Csv {
                path: self.path.clone(),
                row: self.row + 1,
                column: 0,
                reason: e.to_string(),
            })?;
        if !more {
            return Ok(None);
        }
        self.row += 1;
        if self.record.len() != self.width {
            return Err(Error::Csv {
                path: self.path.clone(),
                row: self.row,
                column: self.record.len().min(self.width) + 1,
                reason: format!("expected {} cells, found {}", self.width, self.record.len()),
            });
        }
        let mut sample = Vec::with_capacity(self.dim());
        let mut label = None;
        for (i, cell) in self.record.iter().enumerate() {
            if Some(i) == self.label_index {
                label = Some(parse_label(&self.path, self.row, i + 1, cell)?);
                continue;
            }
            let v = cell
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Csv {
                    path: self.path.clone(),
                    row: self.row,
                    column: i + 1,
                    reason: format!("non-numeric cell {cell:?}"),
                })?;
            sample.push(v);
        }
        Ok(Some((sample, label)))
    }
}

pub fn load_labeled_csv(path: &Path, label_column: Option<&str>) -> Result<SampleStream> {
    let mut reader = CsvSampleReader::open(path, label_column)?;
    let dim = reader.dim();
    let mut buf = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    while let Some((sample, label)) = reader.next_sample()? {
        buf.extend(sample);
        if let Some(l) = label {
            labels.push(l);
        }
        n += 1;
    }
    let samples = DMatrix::from_row_slice(n, dim, &buf);
    let mut stream = SampleStream::new(
        samples,
        reader.has_labels().then_some(labels),
        path.display().to_string(),
    )?;
    stream.names = reader.names().to_vec();
    Ok(stream)
}
