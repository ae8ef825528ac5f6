mod commands;
mod config;
mod plot;

use clap::{Args, Parser, Subcommand, ValueEnum};
use commands::ExitStatus;
use config::RunConfig;
use cstmm::experiment::NuSpec;
use cstmm::mixture_fit::ShapeKind;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "cstmm", version, about = "Mask-based blind speech separation with complex spherical Student's t mixtures")]
struct Cli {
    /// Worker threads for mixture- and frequency-level parallelism (outputs do not depend on it).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a JSON-lines manifest into a dataset directory.
    Mix {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = cstmm::mixgen::DEFAULT_SAMPLE_RATE)]
        sample_rate: u32,
    },
    /// Separate one multichannel WAV into N source WAVs.
    Separate {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Also write the aligned masks (CSTMASK1 format).
        #[arg(long)]
        masks: bool,
        /// Use the dedicated cACGMM reference instead of the cSTMM fit.
        #[arg(long, value_enum, default_value_t = Model::Cstmm)]
        model: Model,
    },
    /// Paired ν sweep over a materialized dataset.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ν grid, e.g. `1,M` or `0.5,1,2,M,inf`.
        #[arg(long, value_delimiter = ',')]
        nu_list: Option<Vec<NuSpec>>,
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Inclusion checks: ν = M vs cACGMM, large ν vs the Bingham and Watson limits.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        large_nu: Option<f64>,
        /// Also compare against the high-concentration update at ν = ∞.
        #[arg(long)]
        hca_limits: bool,
    },
    /// SDR / SDRi of estimate WAVs against reference WAVs (matched by sorted file name).
    Eval {
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Mixture WAV; its channel 0 gives the input SDR.
        #[arg(long)]
        mixture: Option<PathBuf>,
        #[arg(long, default_value_t = cstmm::evaluation::DEFAULT_FILTER_LEN)]
        filter_len: usize,
        /// CSV destination (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SDRi-vs-ν curves from a sweep report as SVG.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Model {
    Cstmm,
    Cacg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ShapeArg {
    Full,
    Rank1,
}

/// Flags shared by the run commands; each overrides the config file.
#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration (a previous run's `config.toml` reproduces it).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $CSTMM_OUTPUT_DIR/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Materialized dataset directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Degrees of freedom: a positive number, `M`, or `inf`.
    #[arg(long)]
    nu: Option<NuSpec>,
    #[arg(long, value_enum)]
    shape: Option<ShapeArg>,
    #[arg(long)]
    sources: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmstart: Option<usize>,
    #[arg(long)]
    kmeans_attempts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    filter_len: Option<usize>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.dataset {
            c.dataset = Some(v.clone());
        }
        if let Some(v) = self.nu {
            c.nu = v;
        }
        if let Some(v) = self.shape {
            c.shape = match v {
                ShapeArg::Full => ShapeKind::Full,
                ShapeArg::Rank1 => ShapeKind::RankOne,
            };
        }
        if let Some(v) = self.sources {
            c.fit.sources = v;
        }
        if let Some(v) = self.iters {
            c.fit.iters = v;
        }
        if let Some(v) = self.warmstart {
            c.fit.warmstart = v;
        }
        if let Some(v) = self.kmeans_attempts {
            c.fit.kmeans_attempts = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.epsilon {
            c.fit.epsilon = Some(v);
        }
        if let Some(v) = self.filter_len {
            c.filter_len = v;
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitStatus> {
    if let Some(j) = cli.jobs {
        anyhow::ensure!(j >= 1, "--jobs must be >= 1");
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    match cli.command {
        Command::Mix { manifest, common, sample_rate } => {
            let cfg = common.resolve()?;
            let out = cfg.resolve_output(common.out.as_deref(), "mix");
            commands::mix(&manifest, &out, cfg.seed, sample_rate)
        }
        Command::Separate { input, common, masks, model } => {
            let mut cfg = common.resolve()?;
            cfg.write_masks |= masks;
            cfg.validate()?;
            let out = cfg.resolve_output(common.out.as_deref(), "separate");
            commands::separate(&input, &cfg, &out, model == Model::Cacg)
        }
        Command::Sweep { common, nu_list, baseline } => {
            let mut cfg = common.resolve()?;
            if let Some(v) = nu_list {
                cfg.nu_list = v;
                cfg.arms.clear();
            }
            if baseline.is_some() {
                cfg.baseline = baseline;
            }
            cfg.validate()?;
            let out = cfg.resolve_output(common.out.as_deref(), "sweep");
            commands::sweep(&cfg, &out)
        }
        Command::Recover { common, large_nu, hca_limits } => {
            let mut cfg = common.resolve()?;
            if let Some(v) = large_nu {
                cfg.large_nu = v;
            }
            cfg.hca_limits |= hca_limits;
            cfg.validate()?;
            let out = cfg.resolve_output(common.out.as_deref(), "recover");
            commands::recover(&cfg, &out)
        }
        Command::Eval { estimates, references, mixture, filter_len, out } => {
            commands::eval(&estimates, &references, mixture.as_deref(), filter_len, out.as_deref())
        }
        Command::Plot { report, out } => commands::plot(&report, &out),
    }
}

/// Error chain without repeating causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.is_empty() {
            msg = text;
        } else if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(ExitStatus::Clean) => ExitCode::SUCCESS,
        Ok(ExitStatus::RecordFailures(n)) => {
            eprintln!("{n} record-level failure(s); see the report");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
