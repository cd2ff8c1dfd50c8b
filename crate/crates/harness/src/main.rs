use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use contobs_harness::{
    run_audit, run_check, run_experiment, target_factory, AuditConfig, AuditTarget, ExperimentConfig,
    MechanismKind, NeighborMode, NoiseSetting, StreamSource,
};

#[derive(Parser)]
#[command(name = "contobs", version, about = "Run, check and audit private continual-observation mechanisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seeded multi-trial run with error statistics against the exact oracle.
    Run(RunArgs),
    /// Structural checks (segment counts, gaps, caps, growth) over many trials.
    Check(RunArgs),
    /// Empirical likelihood-ratio audit on a fixed pair of neighboring streams.
    Audit(AuditArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    mechanism: MechanismKind,
    /// Comma-separated query set, e.g. "max,quantile:0.5,topkval:3".
    #[arg(long, default_value = "max")]
    queries: String,
    /// Generator spec such as "bernoulli:p=0.3", or the path of a stream file.
    #[arg(long, default_value = "bernoulli:p=0.5")]
    stream: String,
    #[arg(long, short = 'd', default_value_t = 2)]
    d: usize,
    /// Stream length.
    #[arg(long = "T", default_value_t = 1024)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    beta: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// "live", "disabled" or "recorded:<path>".
    #[arg(long = "noise-mode", default_value = "live")]
    noise_mode: NoiseSetting,
    /// Bound on query values; each trial's realized maximum when omitted.
    #[arg(long)]
    cmax: Option<usize>,
    /// Overrides the threshold step of bounded mechanisms.
    #[arg(long)]
    k: Option<f64>,
    /// Number of leading trials whose full output series is exported.
    #[arg(long, default_value_t = 0)]
    series: usize,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn config(&self) -> ExperimentConfig {
        let stream = if Path::new(&self.stream).is_file() {
            StreamSource::File(PathBuf::from(&self.stream))
        } else {
            StreamSource::Generator(self.stream.clone())
        };
        ExperimentConfig {
            mechanism: self.mechanism,
            queries: self.queries.clone(),
            stream,
            d: self.d,
            horizon: self.horizon,
            epsilon: self.eps,
            delta: self.delta,
            beta: self.beta,
            trials: self.trials,
            seed: self.seed,
            noise: self.noise_mode.clone(),
            c_max: self.cmax,
            k_override: self.k,
            series_trials: self.series,
        }
    }
}

#[derive(Args)]
struct AuditArgs {
    /// "laplace", "bounded" or "bounded-mutant".
    #[arg(long, default_value = "laplace")]
    target: AuditTarget,
    /// Rows of x separated by commas, each a 0/1 string, e.g. "1,1,1,1".
    #[arg(long)]
    x: String,
    /// "event:<t>:<row>" or "independent:<t or ->,..." (one entry per column).
    #[arg(long)]
    neighbor: String,
    #[arg(long, default_value_t = 1.0)]
    eps: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long = "bin-width", default_value_t = 1.0)]
    bin_width: f64,
    #[arg(long, default_value_t = AuditConfig::MIN_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bins with fewer hits on the numerator side are skipped.
    #[arg(long = "min-count", default_value_t = 1000)]
    min_count: u64,
    /// Threshold step of the bounded targets.
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_bits(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            _ => bail!("'{s}' is not a 0/1 string"),
        })
        .collect()
}

fn parse_neighbor(s: &str) -> Result<NeighborMode> {
    if let Some(rest) = s.strip_prefix("event:") {
        let (t, row) = rest.split_once(':').context("expected event:<t>:<row>")?;
        return Ok(NeighborMode::Event {
            t: t.parse().context("bad time in neighbor spec")?,
            row: parse_bits(row)?,
        });
    }
    if let Some(rest) = s.strip_prefix("independent:") {
        let flips = rest
            .split(',')
            .map(|f| match f.trim() {
                "-" => Ok(None),
                t => t.parse().map(Some).context("bad flip time in neighbor spec"),
            })
            .collect::<Result<_>>()?;
        return Ok(NeighborMode::Independent { flips });
    }
    bail!("unknown neighbor spec '{s}'")
}

impl AuditArgs {
    fn config(&self) -> Result<AuditConfig> {
        Ok(AuditConfig {
            target: self.target,
            x: self.x.split(',').map(|r| r.trim().to_string()).collect(),
            neighbor: parse_neighbor(&self.neighbor)?,
            epsilon: self.eps,
            delta: self.delta,
            bin_width: self.bin_width,
            trials: self.trials,
            seed: self.seed,
            min_count: self.min_count,
            k: self.k,
        })
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let pass = match cli.command {
        Command::Run(args) => {
            let r = run_experiment(&args.config())?;
            r.write(&args.out)?;
            let s = &r.summary;
            println!(
                "{} trials: empirical alpha {:.3} at beta {:.3}, median error {:.3}, max error {:.3}",
                s.trials, s.empirical_alpha, s.beta, s.max_error.median, s.max_error.max
            );
            true
        }
        Command::Check(args) => {
            let r = run_check(&args.config())?;
            r.write(&args.out)?;
            for c in &r.summary.claims {
                println!(
                    "{:<10} {}/{} violations (fraction {:.4}, allowed {:.4}) {}",
                    c.claim,
                    c.violations,
                    c.trials,
                    c.fraction,
                    c.allowed,
                    if c.pass { "ok" } else { "VIOLATED" }
                );
            }
            r.summary.pass
        }
        Command::Audit(args) => {
            let cfg = args.config()?;
            let r = run_audit(&cfg, &*target_factory(&cfg))?;
            r.write(&args.out)?;
            let s = &r.summary;
            println!(
                "max ratio {:.4} vs e^eps {:.4}; {} bins tested, {} failed: {}",
                s.max_ratio,
                cfg.epsilon.exp(),
                s.bins_tested,
                s.bins_failed,
                if s.pass { "PASS" } else { "FAIL" }
            );
            s.pass
        }
    };
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
