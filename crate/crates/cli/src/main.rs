//! `posi`: fits, bootstrap quantiles, confidence regions, tests and
//! simulation experiments from the command line.
//!
//! Exit codes: 0 success, 2 usage or argument error, 3 data error,
//! 4 capability or work-budget limit.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use posi_core::bootstrap::estimate_quantiles;
use posi_core::data::load_dataset;
use posi_core::moments::sample_moments;
use posi_core::ols::fit;
use posi_core::regions::{dagger_volume, test_hypothesis, TestVariant};
use posi_core::simulate::experiment::{
    run_experiment, run_max_t_comparison, write_events_csv, ExperimentConfig, ExperimentKind, ExperimentReport,
};
use posi_core::{
    BootstrapConfig, Dataset, Design, Error, IngestOptions, ModelIndex, MomentPair, QuantilePair, QuantilePolicy,
    RegionKind, RegionSpec, ResponseColumn,
};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "posi", version, about = "Simultaneous post-selection confidence regions for least squares")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Least-squares fit on one submodel.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Bootstrap quantiles of the deviation statistics.
    Quantiles {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        boot: BootArgs,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Describe a confidence region, or test membership of --theta.
    Region {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        boot: BootArgs,
        /// Region kind: finite, dagger, rip, lassoFinite, lassoDagger, sqrtLassoFinite, sqrtLassoDagger.
        #[arg(long, default_value = "dagger")]
        kind: RegionKind,
        /// Comma-separated point to test for membership.
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<String>,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Test H0: beta_M = theta (zero by default) by region inversion.
    Test {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        boot: BootArgs,
        /// Region inverted by the test: finite or dagger.
        #[arg(long, default_value = "dagger")]
        kind: String,
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<String>,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Closed-form volume of the dagger region.
    Volume {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        boot: BootArgs,
        #[arg(long, default_value = "dagger")]
        kind: RegionKind,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Run the experiment described by a JSON config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Per-replication event table (CSV), coverage experiments only.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Monte Carlo points for finite-region volumes on the first replication.
        #[arg(long = "mc-volume")]
        mc_volume: Option<usize>,
        #[command(flatten)]
        out: OutputArg,
    },
    /// Compare max-|t| boxes with dagger regions on a fixed design.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: OutputArg,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Numeric CSV, one observation per row.
    #[arg(long)]
    input: PathBuf,
    /// The first row is a header.
    #[arg(long)]
    header: bool,
    /// Response column: first, last or a 1-based index.
    #[arg(long, default_value = "last")]
    response: ResponseColumn,
    /// Prepend a column of ones as covariate 1.
    #[arg(long)]
    intercept: bool,
}

#[derive(Debug, Args)]
struct ModelArg {
    /// Comma-separated 1-based covariate indices, e.g. 1,3.
    #[arg(long)]
    model: String,
}

#[derive(Debug, Args)]
struct BootArgs {
    #[arg(long)]
    alpha: f64,
    /// Bootstrap replicates (at least 100).
    #[arg(long = "B")]
    b: usize,
    #[arg(long)]
    seed: u64,
    /// Quantile policy: common-threshold or marginal-search.
    #[arg(long, default_value = "common-threshold")]
    policy: QuantilePolicy,
    /// Treat covariates as fixed (bootstrap the cross-moments only).
    #[arg(long = "fixed-design")]
    fixed_design: bool,
    /// Cap on bootstrap work B·n·q.
    #[arg(long = "work-budget")]
    work_budget: Option<f64>,
}

#[derive(Debug, Args)]
struct OutputArg {
    /// Write JSON here (atomically) instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_vector(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| usage(format!("--theta entry {t:?}: {e}"))))
        .collect()
}

impl DataArgs {
    fn load(&self) -> posi_core::Result<Dataset> {
        let opts = IngestOptions { has_header: self.header, response: self.response, intercept: self.intercept };
        load_dataset(&self.input, &opts)
    }
}

impl BootArgs {
    fn config(&self) -> posi_core::Result<BootstrapConfig> {
        let mut c = BootstrapConfig::new(self.b, self.alpha, self.seed)?
            .with_policy(self.policy)
            .with_design(if self.fixed_design { Design::Fixed } else { Design::Random });
        if let Some(w) = self.work_budget {
            c = c.with_work_budget(w);
        }
        c.validate()?;
        Ok(c)
    }
}

/// An error together with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_limit_error() {
            4
        } else if e.is_data_error() {
            3
        } else {
            2
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::from(Error::Io(e))
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Failure::from(e.error))?;
    Ok(())
}

fn emit<T: Serialize>(value: &T, out: &OutputArg) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    match &out.output {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

struct Prepared {
    data: Dataset,
    moments: MomentPair,
    model: ModelIndex,
}

fn prepare(data: &DataArgs, model: &ModelArg) -> Result<Prepared, Failure> {
    let data = data.load()?;
    let model = ModelIndex::parse(&model.model, data.p())?;
    let moments = sample_moments(&data);
    Ok(Prepared { data, moments, model })
}

fn mean_y_sq(data: &Dataset) -> f64 {
    data.y().dot(data.y()) / data.n() as f64
}

#[derive(Serialize)]
struct Membership {
    contains: bool,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fit { data, model, out } => {
            let p = prepare(&data, &model)?;
            emit(&fit(&p.moments, &p.model)?, &out)
        }
        Command::Quantiles { data, boot, out } => {
            let config = boot.config()?;
            let data = data.load()?;
            emit(&estimate_quantiles(&data, &config)?, &out)
        }
        Command::Region { data, model, boot, kind, theta, out } => {
            let config = boot.config()?;
            let p = prepare(&data, &model)?;
            let q: QuantilePair = estimate_quantiles(&p.data, &config)?;
            let region = RegionSpec::build(kind, &p.moments, &p.model, q, Some(mean_y_sq(&p.data)))?;
            match theta {
                Some(t) => emit(&Membership { contains: region.contains(&parse_vector(&t)?.into())? }, &out),
                None => emit(&region.to_json(), &out),
            }
        }
        Command::Test { data, model, boot, kind, theta, out } => {
            let variant = match kind.as_str() {
                "finite" => TestVariant::Finite,
                "dagger" => TestVariant::Dagger,
                other => return Err(usage(format!("test supports --kind finite or dagger, got {other:?}"))),
            };
            let config = boot.config()?;
            let p = prepare(&data, &model)?;
            let q = estimate_quantiles(&p.data, &config)?;
            let f = fit(&p.moments, &p.model)?;
            let theta0 = match theta {
                Some(t) => parse_vector(&t)?,
                None => vec![0.0; p.model.len()],
            };
            emit(&test_hypothesis(&f, &p.moments, &q, variant, &theta0.into())?, &out)
        }
        Command::Volume { data, model, boot, kind, out } => {
            if kind != RegionKind::Dagger {
                return Err(usage(format!("volume unavailable for kind={kind}; use simulate --mc-volume")));
            }
            let config = boot.config()?;
            let p = prepare(&data, &model)?;
            let q = estimate_quantiles(&p.data, &config)?;
            let region = RegionSpec::build(kind, &p.moments, &p.model, q, None)?;
            emit(&dagger_volume(&region)?, &out)
        }
        Command::Simulate { config, events, mc_volume, out } => {
            let mut cfg = read_config(&config)?;
            if mc_volume.is_some() {
                cfg.mc_volume_points = mc_volume;
            }
            if events.is_some() && cfg.experiment != ExperimentKind::Coverage {
                return Err(usage("--events applies to coverage experiments only"));
            }
            let report = run_experiment(&cfg)?;
            if let (Some(path), ExperimentReport::Coverage(r)) = (&events, &report) {
                let mut buf = Vec::new();
                write_events_csv(&r.events, &mut buf)?;
                write_atomic(path, &buf)?;
            }
            emit(&report, &out)
        }
        Command::Compare { config, out } => {
            let mut cfg = read_config(&config)?;
            cfg.experiment = ExperimentKind::MaxT;
            emit(&run_max_t_comparison(&cfg)?, &out)
        }
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid experiment config {}: {e}", path.display())))
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("POSI_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| usage(format!("POSI_THREADS must be a count, got {raw:?}")))?;
    // 0 keeps rayon's default
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
