use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use nalgebra::DMatrix;

use rbpca::config::{DataSource, FaultChoice, RunConfig};
use rbpca::data::{CsvSampleReader, SampleStream};
use rbpca::detector::WidthRule;
use rbpca::error::{Error, ErrorKind, Result};
use rbpca::eval::{
    approx_error_table, bench_modeling, fmt_rate, monte_carlo, synthetic_split, write_approx_csv,
    write_bench_csv, ApproxErrorSetup, ReportRow, Scenario, DEFAULT_REPLICATES,
};
use rbpca::model::{FittedMonitor, Method, ModelFile};

#[derive(Parser)]
#[command(
    name = "rbpca",
    version,
    about = "Random Bernoulli feature PCA process monitoring"
)]
struct Cli {
    /// Directory for files written without an explicit path.
    #[arg(long, global = true, env = "RBPCA_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a monitor on normal operating data and save it.
    Fit(FitArgs),
    /// Score a stream sample by sample with a saved monitor.
    Monitor(MonitorArgs),
    /// Monte Carlo accuracy and timing comparison on the synthetic process.
    Bench(BenchArgs),
    /// Spectral error of the kernel approximation against the expected-error bound.
    ApproxError(ApproxArgs),
    /// Write a synthetic data set as CSV.
    Gen(GenArgs),
}

/// Flags that override fields of the run configuration.
#[derive(Args, Default)]
struct ModelArgs {
    /// TOML run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// static, dynamic, 2d, moving-window, kpca-baseline or rpca-fourier.
    #[arg(long)]
    method: Option<String>,
    /// Number of random features.
    #[arg(short, long)]
    m: Option<usize>,
    /// Bernoulli probability.
    #[arg(short, long)]
    p: Option<f64>,
    /// Kernel width: a number, `median-heuristic` or `per-dimension:<r>`.
    #[arg(short, long)]
    c: Option<String>,
    /// Confidence level of the control limit.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(short, long)]
    lag: Option<usize>,
    /// Moving-window width.
    #[arg(short, long)]
    window: Option<usize>,
    #[arg(long)]
    delta_level: Option<f64>,
    /// Seed of the random feature map.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep this many components instead of those above the mean eigenvalue.
    #[arg(long)]
    components: Option<usize>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(m) = &self.method {
            cfg.method = m.parse()?;
        }
        if let Some(v) = self.m {
            cfg.m = v;
        }
        if let Some(v) = self.p {
            cfg.p = v;
        }
        if let Some(v) = &self.c {
            cfg.c = v.parse()?;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if self.lag.is_some() {
            cfg.lag = self.lag;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.delta_level {
            cfg.delta_level = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.components.is_some() {
            cfg.components = self.components;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Synthetic stream flags.
#[derive(Args)]
struct GeneratorArgs {
    /// Number of samples to generate.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// none, step (1) or ramp (2).
    #[arg(long)]
    fault: Option<String>,
    /// 1-based index of the first faulty sample.
    #[arg(long)]
    fault_start: Option<usize>,
}

impl GeneratorArgs {
    fn source(&self, default_n: usize, default_seed: u64) -> Result<DataSource> {
        Ok(DataSource::Generator {
            n: self.n.unwrap_or(default_n),
            seed: self.data_seed.unwrap_or(default_seed),
            fault: self
                .fault
                .as_deref()
                .map(str::parse)
                .transpose()?
                .unwrap_or(FaultChoice::None),
            fault_start: self.fault_start.unwrap_or(201),
        })
    }

    fn given(&self) -> bool {
        self.n.is_some()
            || self.data_seed.is_some()
            || self.fault.is_some()
            || self.fault_start.is_some()
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Training CSV; rows labelled faulty are left out.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    #[command(flatten)]
    generator: GeneratorArgs,
    /// Model file to write (default: <output-dir>/model.json).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MonitorArgs {
    #[arg(long)]
    model: PathBuf,
    /// Stream CSV, read row by row.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    label_column: Option<String>,
    #[command(flatten)]
    generator: GeneratorArgs,
    /// Per-sample CSV (default: <output-dir>/monitor.csv; `-` for stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated methods (default: all).
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    replicates: usize,
    /// Timing repetitions; the median is reported.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// First replicate seed; replicate i uses seed_base + i.
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    /// Skip the Monte Carlo accuracy table.
    #[arg(long)]
    timing_only: bool,
}

#[derive(Args)]
struct ApproxArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Comma-separated feature counts.
    #[arg(short, long, value_delimiter = ',', default_values_t = vec![1usize, 200, 800, 4000])]
    m: Vec<usize>,
    #[arg(short, long, default_value_t = 0.05)]
    p: f64,
    #[arg(short, long, default_value = "median-heuristic")]
    c: String,
    /// Independent feature maps per feature count.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output (default: stdout).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
    /// Output CSV (default: <output-dir>/generated.csv).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn output_path(dir: Option<&Path>, explicit: Option<&Path>, default_name: &str) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    let dir = dir.unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.join(default_name))
}

fn training_matrix(stream: &SampleStream) -> Result<DMatrix<f64>> {
    let Some(labels) = &stream.labels else {
        return Ok(stream.samples.clone());
    };
    let keep: Vec<usize> = (0..stream.len()).filter(|&k| !labels[k]).collect();
    if keep.len() < stream.len() {
        info!(
            "dropping {} faulty rows from the training data",
            stream.len() - keep.len()
        );
    }
    Ok(stream.samples.select_rows(keep.iter()))
}

fn cmd_fit(args: &FitArgs, output_dir: Option<&Path>) -> Result<()> {
    let mut cfg = args.model.resolve()?;
    if let Some(path) = &args.train {
        cfg.data = DataSource::Csv {
            path: path.clone(),
            label_column: args.label_column.clone(),
        };
    } else if args.generator.given() {
        cfg.data = args.generator.source(1000, 1)?;
    }
    let output_dir = output_dir.or(cfg.output_dir.as_deref());
    let data = cfg.data.load()?;
    let x = training_matrix(&data)?;
    let spec = cfg.spec();

    let start = Instant::now();
    let fitted = FittedMonitor::fit(&spec, &x)?;
    let secs = start.elapsed().as_secs_f64();

    let path = output_path(output_dir, args.out.as_deref(), "model.json")?;
    ModelFile::new(spec, fitted.monitor.clone()).save(&path)?;

    let threshold = fitted.monitor.threshold();
    let self_alarms = fitted.training_q.iter().filter(|&&q| q > threshold).count();
    println!("method: {}", spec.method);
    println!("training samples: {}", x.nrows());
    println!("retained components: {}", fitted.monitor.retained());
    println!("control limit: {threshold:.10e}");
    println!(
        "training alarm rate: {:.4}",
        self_alarms as f64 / fitted.training_q.len().max(1) as f64
    );
    println!("modeling time: {secs:.6} s");
    println!("model: {}", path.display());
    Ok(())
}

enum StreamSource {
    Csv(CsvSampleReader),
    Memory(SampleStream, usize),
}

impl StreamSource {
    fn dim(&self) -> usize {
        match self {
            StreamSource::Csv(r) => r.dim(),
            StreamSource::Memory(s, _) => s.dim(),
        }
    }

    fn next(&mut self) -> Result<Option<(Vec<f64>, Option<bool>)>> {
        match self {
            StreamSource::Csv(r) => r.next_sample(),
            StreamSource::Memory(s, k) => {
                if *k == s.len() {
                    return Ok(None);
                }
                *k += 1;
                Ok(Some((s.sample(*k - 1), s.label(*k - 1))))
            }
        }
    }
}

fn cmd_monitor(args: &MonitorArgs, output_dir: Option<&Path>) -> Result<()> {
    let file = ModelFile::load(&args.model)?;
    let monitor = &file.monitor;
    let mut source = match &args.input {
        Some(path) => StreamSource::Csv(CsvSampleReader::open(path, args.label_column.as_deref())?),
        None => StreamSource::Memory(args.generator.source(500, 2)?.load()?, 0),
    };
    if source.dim() != monitor.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: monitor.input_dim(),
            actual: source.dim(),
        });
    }

    let to_stdout = args.out.as_deref() == Some(Path::new("-"));
    let mut out: Box<dyn Write> = if to_stdout {
        Box::new(io::stdout().lock())
    } else {
        let path = output_path(output_dir, args.out.as_deref(), "monitor.csv")?;
        Box::new(BufWriter::new(
            File::create(&path).map_err(|e| Error::io(&path, e))?,
        ))
    };
    let io_err = |e| Error::io("monitor output", e);
    writeln!(out, "{}", ReportRow::CSV_HEADER).map_err(io_err)?;

    let mut stream = monitor.stream();
    let (mut total, mut warming, mut updates) = (0usize, 0usize, 0usize);
    let (mut alarms, mut labels) = (Vec::new(), Vec::new());
    let mut labelled = true;
    while let Some((sample, label)) = source.next()? {
        let step = stream.step(&sample)?;
        total += 1;
        updates += usize::from(step.updated);
        let row = ReportRow {
            index: total,
            q: step.score.map(|s| s.q),
            threshold: step.score.map(|s| s.threshold),
            alarm: step.alarm(),
            label,
            warming: step.is_warming(),
        };
        writeln!(out, "{}", row.to_csv()).map_err(io_err)?;
        out.flush().map_err(io_err)?;
        if row.warming {
            warming += 1;
            continue;
        }
        labelled &= label.is_some();
        alarms.push(row.alarm);
        labels.push(label == Some(true));
    }

    let mut report = io::stderr();
    let summary: &mut dyn Write = if to_stdout {
        &mut report
    } else {
        &mut io::stdout()
    };
    if total > 0 && warming == total {
        warn!(
            "stream ended after {total} samples, all of them used to fill the lag buffer of {}",
            monitor.lag()
        );
    }
    let flagged = alarms.iter().filter(|&&a| a).count();
    let _ = writeln!(summary, "samples: {total} ({warming} warming)");
    let _ = writeln!(summary, "alarms: {flagged}");
    if labelled && !alarms.is_empty() {
        let rates = rbpca::eval::fdr_far(&alarms, &labels, 0)?;
        let _ = writeln!(summary, "fdr: {}", fmt_rate(rates.fdr));
        let _ = writeln!(summary, "far: {}", fmt_rate(rates.far));
    }
    if let FittedMonitor::MovingWindow(_) = monitor {
        let _ = writeln!(summary, "window updates: {updates}");
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs, output_dir: Option<&Path>) -> Result<()> {
    let cfg = args.model.resolve()?;
    let methods: Vec<Method> = if args.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        args.methods
            .iter()
            .map(|m| m.parse())
            .collect::<Result<_>>()?
    };
    let specs: Vec<_> = methods
        .iter()
        .map(|&m| {
            let mut c = cfg.clone();
            c.method = m;
            c.spec()
        })
        .collect();
    let output_dir = output_dir.or(cfg.output_dir.as_deref());

    let (train, test) = synthetic_split(args.seed_base, Scenario::Fault1)?;
    let timing = bench_modeling(&specs, &train.samples, &test, args.runs)?;
    let timing_path = output_path(output_dir, None, "bench_timing.csv")?;
    write_bench_csv(&timing, &timing_path)?;
    println!(
        "{:<15} {:>14} {:>14}",
        "method", "modeling (s)", "online (s)"
    );
    for r in &timing {
        println!(
            "{:<15} {:>14.6} {:>14.3e}",
            r.method.name(),
            r.modeling_secs,
            r.online_secs
        );
    }

    if args.timing_only {
        return Ok(());
    }
    let acc_path = output_path(output_dir, None, "bench_accuracy.csv")?;
    let mut acc = String::from("method,scenario,replicates,fdr_mean,fdr_std,far_mean,far_std\n");
    println!();
    println!(
        "{:<15} {:<8} {:>16} {:>16}",
        "method", "fault", "fdr", "far"
    );
    for spec in &specs {
        for scenario in [Scenario::Fault1, Scenario::Fault2] {
            let s = monte_carlo(spec, scenario, args.replicates, args.seed_base)?;
            let cell = |m: &Option<rbpca::eval::MeanStd>| {
                m.as_ref()
                    .map(|v| {
                        (
                            format!("{:.4} ± {:.4}", v.mean, v.std),
                            format!("{},{}", v.mean, v.std),
                        )
                    })
                    .unwrap_or_else(|| ("n/a".into(), ",".into()))
            };
            let (fdr_txt, fdr_csv) = cell(&s.fdr);
            let (far_txt, far_csv) = cell(&s.far);
            let name = if scenario == Scenario::Fault1 {
                "1"
            } else {
                "2"
            };
            println!(
                "{:<15} {:<8} {:>16} {:>16}",
                spec.method.name(),
                name,
                fdr_txt,
                far_txt
            );
            acc.push_str(&format!(
                "{},{},{},{},{}\n",
                spec.method, name, args.replicates, fdr_csv, far_csv
            ));
        }
    }
    fs::write(&acc_path, acc).map_err(|e| Error::io(&acc_path, e))?;
    println!();
    println!("tables: {}, {}", timing_path.display(), acc_path.display());
    Ok(())
}

fn cmd_approx_error(args: &ApproxArgs) -> Result<()> {
    let width: WidthRule = args.c.parse()?;
    let setup = ApproxErrorSetup {
        n: args.n,
        p: args.p,
        width,
        seeds: args.seeds,
        seed: args.seed,
    };
    let rows = approx_error_table(&setup, &args.m)?;
    match &args.out {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
            write_approx_csv(&rows, &mut f)
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(path, e))
        }
        None => {
            write_approx_csv(&rows, &mut io::stdout().lock()).map_err(|e| Error::io("stdout", e))
        }
    }
}

fn cmd_gen(args: &GenArgs, output_dir: Option<&Path>) -> Result<()> {
    let stream = args.generator.source(1000, 1)?.load()?;
    let path = output_path(output_dir, args.out.as_deref(), "generated.csv")?;
    stream.write_csv(&path)?;
    println!("{} samples written to {}", stream.len(), path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let dir = cli.output_dir.as_deref();
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, dir),
        Command::Monitor(a) => cmd_monitor(a, dir),
        Command::Bench(a) => cmd_bench(a, dir),
        Command::ApproxError(a) => cmd_approx_error(a),
        Command::Gen(a) => cmd_gen(a, dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
