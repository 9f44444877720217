//! Detection metrics, Monte Carlo replication on the synthetic process,
//! timing benchmarks and the kernel-approximation error table.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{gen_numerical_example, inject_fault, Fault, SampleStream, ZScore};
use crate::detector::WidthRule;
use crate::error::{Error, Result};
use crate::features::{embed_batch, BernoulliFeatureMap, GaussianKernel};
use crate::kernel::{approx_kernel, exact_gaussian_kernel, expected_error_bound, spectral_error};
use crate::model::{FittedMonitor, Method, MethodSpec};
use crate::rng::derive_seed;

/// Training and test sizes of the synthetic benchmark.
pub const TRAIN_SAMPLES: usize = 1000;
pub const TEST_SAMPLES: usize = 500;
/// 1-based index of the first faulty test sample.
pub const FAULT_START: usize = 201;
pub const DEFAULT_REPLICATES: usize = 50;
/// Largest `n` accepted by the approximation-error table.
pub const APPROX_ERROR_CAP: usize = 2000;

const TAG_TRAIN: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_MAP: u64 = 3;

/// Alarm counts behind the two rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct AlarmCounts {
    pub flagged_fault: usize,
    pub total_fault: usize,
    pub flagged_normal: usize,
    pub total_normal: usize,
}

impl AlarmCounts {
    pub fn flagged(&self) -> usize {
        self.flagged_fault + self.flagged_normal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rates {
    /// Absent when no sample is labelled faulty.
    pub fdr: Option<f64>,
    /// Absent when no sample is labelled normal.
    pub far: Option<f64>,
    pub counts: AlarmCounts,
}

/// Fault detection and false alarm rates, skipping the first `warming` samples.
pub fn fdr_far(alarms: &[bool], labels: &[bool], warming: usize) -> Result<Rates> {
    if alarms.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: alarms.len(),
        });
    }
    let mut c = AlarmCounts::default();
    for (&alarm, &fault) in alarms.iter().zip(labels).skip(warming) {
        match (fault, alarm) {
            (true, true) => {
                c.total_fault += 1;
                c.flagged_fault += 1;
            }
            (true, false) => c.total_fault += 1,
            (false, true) => {
                c.total_normal += 1;
                c.flagged_normal += 1;
            }
            (false, false) => c.total_normal += 1,
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(Rates {
        fdr: ratio(c.flagged_fault, c.total_fault),
        far: ratio(c.flagged_normal, c.total_normal),
        counts: c,
    })
}

/// One monitored sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportRow {
    /// 1-based position in the stream.
    pub index: usize,
    pub q: Option<f64>,
    pub threshold: Option<f64>,
    pub alarm: bool,
    pub label: Option<bool>,
    pub warming: bool,
}

impl ReportRow {
    pub const CSV_HEADER: &'static str = "index,q,threshold,alarm,label,warming";

    pub fn to_csv(&self) -> String {
        let num = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        let flag = |b: bool| if b { "1" } else { "0" };
        format!(
            "{},{},{},{},{},{}",
            self.index,
            num(self.q),
            num(self.threshold),
            flag(self.alarm),
            self.label.map(flag).unwrap_or(""),
            flag(self.warming)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitoringReport {
    pub method: Method,
    pub spec: MethodSpec,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub rates: Option<Rates>,
    pub modeling_secs: f64,
    /// Mean wall-clock time per scored sample.
    pub online_secs: f64,
    pub update_count: usize,
}

impl MonitoringReport {
    pub fn warming_count(&self) -> usize {
        self.rows.iter().filter(|r| r.warming).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(ReportRow::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.to_csv());
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method: {}", self.method);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(
            s,
            "samples: {} ({} warming)",
            self.rows.len(),
            self.warming_count()
        );
        if let Some(r) = &self.rates {
            let _ = writeln!(s, "fdr: {}", fmt_rate(r.fdr));
            let _ = writeln!(s, "far: {}", fmt_rate(r.far));
        }
        let _ = writeln!(s, "modeling time: {:.6} s", self.modeling_secs);
        let _ = writeln!(s, "online time per sample: {:.3e} s", self.online_secs);
        if self.method == Method::MovingWindow {
            let _ = writeln!(s, "window updates: {}", self.update_count);
        }
        s
    }
}

pub fn fmt_rate(r: Option<f64>) -> String {
    r.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

/// Fault scenario of the synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scenario {
    Normal,
    Fault1,
    Fault2,
}

impl Scenario {
    pub fn fault(&self) -> Option<Fault> {
        match self {
            Scenario::Normal => None,
            Scenario::Fault1 => Some(Fault::Step),
            Scenario::Fault2 => Some(Fault::Ramp),
        }
    }
}

/// Training data and labelled test stream of one replicate.
pub fn synthetic_split(seed: u64, scenario: Scenario) -> Result<(SampleStream, SampleStream)> {
    let train = gen_numerical_example(TRAIN_SAMPLES, derive_seed(seed, TAG_TRAIN))?;
    let clean = gen_numerical_example(TEST_SAMPLES, derive_seed(seed, TAG_TEST))?;
    let test = match scenario.fault() {
        Some(f) => inject_fault(&clean, f, FAULT_START)?,
        None => {
            let labels = vec![false; clean.len()];
            SampleStream::new(clean.samples, Some(labels), clean.provenance)?
        }
    };
    Ok((train, test))
}

/// Scores every sample of `test` with a fresh online monitor.
pub fn monitor_stream(
    fitted: &FittedMonitor,
    test: &SampleStream,
) -> Result<(Vec<ReportRow>, f64, usize)> {
    let mut stream = fitted.stream();
    let mut rows = Vec::with_capacity(test.len());
    let mut updates = 0;
    let start = Instant::now();
    for k in 0..test.len() {
        let out = stream.step(&test.sample(k))?;
        updates += usize::from(out.updated);
        rows.push(ReportRow {
            index: k + 1,
            q: out.score.map(|s| s.q),
            threshold: out.score.map(|s| s.threshold),
            alarm: out.alarm(),
            label: test.label(k),
            warming: out.is_warming(),
        });
    }
    let scored = rows.iter().filter(|r| !r.warming).count().max(1);
    Ok((rows, start.elapsed().as_secs_f64() / scored as f64, updates))
}

pub fn rates_of(rows: &[ReportRow]) -> Result<Option<Rates>> {
    if rows.iter().any(|r| r.label.is_none()) {
        return Ok(None);
    }
    let kept: Vec<&ReportRow> = rows.iter().filter(|r| !r.warming).collect();
    let alarms: Vec<bool> = kept.iter().map(|r| r.alarm).collect();
    let labels: Vec<bool> = kept.iter().map(|r| r.label == Some(true)).collect();
    fdr_far(&alarms, &labels, 0).map(Some)
}

/// Fits on fresh training data and monitors a fresh test stream.
pub fn run_replicate(spec: &MethodSpec, scenario: Scenario, seed: u64) -> Result<MonitoringReport> {
    let (train, test) = synthetic_split(seed, scenario)?;
    let mut spec = *spec;
    spec.monitor.seed = derive_seed(seed, TAG_MAP);
    let start = Instant::now();
    let fitted = FittedMonitor::fit(&spec, &train.samples)?;
    let modeling_secs = start.elapsed().as_secs_f64();
    let (rows, online_secs, update_count) = monitor_stream(&fitted.monitor, &test)?;
    Ok(MonitoringReport {
        method: spec.method,
        spec,
        seed,
        rates: rates_of(&rows)?,
        rows,
        modeling_secs,
        online_secs,
        update_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub fdr: Option<f64>,
    pub far: Option<f64>,
    pub update_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            mean,
            std,
            count: values.len(),
        })
    }

    pub fn std_of_mean(&self) -> f64 {
        self.std / (self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub method: Method,
    pub scenario: Scenario,
    pub replicates: Vec<ReplicateResult>,
    pub fdr: Option<MeanStd>,
    pub far: Option<MeanStd>,
}

impl McSummary {
    pub fn from_results(
        method: Method,
        scenario: Scenario,
        mut replicates: Vec<ReplicateResult>,
    ) -> Self {
        replicates.sort_by_key(|r| r.index);
        let fdr: Vec<f64> = replicates.iter().filter_map(|r| r.fdr).collect();
        let far: Vec<f64> = replicates.iter().filter_map(|r| r.far).collect();
        Self {
            method,
            scenario,
            fdr: MeanStd::of(&fdr),
            far: MeanStd::of(&far),
            replicates,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("replicate,seed,fdr,far,update_count\n");
        for r in &self.replicates {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.index,
                r.seed,
                r.fdr.map(|v| v.to_string()).unwrap_or_default(),
                r.far.map(|v| v.to_string()).unwrap_or_default(),
                r.update_count
            );
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Runs `replicates` independent replicates with seeds `seed_base + i`.
pub fn monte_carlo(
    spec: &MethodSpec,
    scenario: Scenario,
    replicates: usize,
    seed_base: u64,
) -> Result<McSummary> {
    if replicates == 0 {
        return Err(Error::param("replicates", "must be at least 1"));
    }
    let results = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let seed = seed_base.wrapping_add(i as u64);
            let report = run_replicate(spec, scenario, seed).map_err(|e| Error::Replicate {
                index: i,
                source: Box::new(e),
            })?;
            let rates = report.rates;
            Ok(ReplicateResult {
                index: i,
                seed,
                fdr: rates.and_then(|r| r.fdr),
                far: rates.and_then(|r| r.far),
                update_count: report.update_count,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McSummary::from_results(spec.method, scenario, results))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: Method,
    /// Median fit time over the runs.
    pub modeling_secs: f64,
    /// Median of the per-run mean time per scored sample.
    pub online_secs: f64,
    pub runs: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times fitting and online scoring of each method on the same data,
/// reporting medians over `runs` repetitions. Runs are sequential so the
/// timings do not compete for cores.
pub fn bench_modeling(
    specs: &[MethodSpec],
    train: &DMatrix<f64>,
    test: &SampleStream,
    runs: usize,
) -> Result<Vec<BenchRow>> {
    if runs == 0 {
        return Err(Error::param("runs", "must be at least 1"));
    }
    specs
        .iter()
        .map(|spec| {
            let mut fit_times = Vec::with_capacity(runs);
            let mut online_times = Vec::with_capacity(runs);
            for _ in 0..runs {
                let start = Instant::now();
                let fitted = FittedMonitor::fit(spec, train)?;
                fit_times.push(start.elapsed().as_secs_f64());
                let (_, online, _) = monitor_stream(&fitted.monitor, test)?;
                online_times.push(online);
            }
            Ok(BenchRow {
                method: spec.method,
                modeling_secs: median(fit_times),
                online_secs: median(online_times),
                runs,
            })
        })
        .collect()
}

pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut out = String::from("method,modeling_secs,online_secs,runs\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{}",
            r.method, r.modeling_secs, r.online_secs, r.runs
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproxErrorRow {
    pub m: usize,
    pub median: f64,
    pub max: f64,
    /// Absent where the bound is undefined (`m < 2`).
    pub bound: Option<f64>,
    /// Spectral norm of the exact kernel matrix, for relative errors.
    pub kernel_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxErrorSetup {
    pub n: usize,
    pub p: f64,
    pub width: WidthRule,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for ApproxErrorSetup {
    fn default() -> Self {
        Self {
            n: 200,
            p: 0.05,
            width: WidthRule::MedianHeuristic,
            seeds: 20,
            seed: 0,
        }
    }
}

/// Spectral error of the Bernoulli kernel approximation on z-scored
/// synthetic data, over `seeds` independent maps per feature count.
pub fn approx_error_table(setup: &ApproxErrorSetup, ms: &[usize]) -> Result<Vec<ApproxErrorRow>> {
    if setup.n > APPROX_ERROR_CAP {
        return Err(Error::param(
            "n",
            format!(
                "the dense exact kernel is capped at {APPROX_ERROR_CAP} samples, got {}",
                setup.n
            ),
        ));
    }
    if setup.seeds == 0 {
        return Err(Error::param("seeds", "must be at least 1"));
    }
    let raw = gen_numerical_example(setup.n, derive_seed(setup.seed, TAG_TRAIN))?.samples;
    let x = ZScore::fit(&raw)?.apply(&raw)?;
    let c = setup.width.resolve(&x)?;
    let exact = exact_gaussian_kernel(&x, GaussianKernel::new(c)?)?;
    let kernel_norm = exact.spectral_norm();
    ms.iter()
        .map(|&m| {
            let errors = (0..setup.seeds)
                .into_par_iter()
                .map(|s| {
                    let seed = derive_seed(
                        derive_seed(setup.seed, TAG_MAP),
                        (m as u64) << 20 | s as u64,
                    );
                    let map = BernoulliFeatureMap::new(x.ncols(), m, setup.p, c, seed)?;
                    let approx = approx_kernel(&embed_batch(&map, &x)?)?;
                    spectral_error(&approx, &exact)
                })
                .collect::<Result<Vec<_>>>()?;
            let max = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(ApproxErrorRow {
                m,
                median: median(errors),
                max,
                bound: expected_error_bound(setup.n, m).ok(),
                kernel_norm,
            })
        })
        .collect()
}

pub fn write_approx_csv(rows: &[ApproxErrorRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "m,median_error,max_error,bound,kernel_norm")?;
    for r in rows {
        let bound = r.bound.map(|b| format!("{b:e}")).unwrap_or_default();
        writeln!(
            out,
            "{},{:e},{:e},{},{:e}",
            r.m, r.median, r.max, bound, r.kernel_norm
        )?;
    }
    Ok(())
}
