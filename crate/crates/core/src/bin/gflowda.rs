use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gflowda::data::save_domain_csv;
use gflowda::enumerable::{run_proportionality, EnumerableInstance};
use gflowda::experiment::{
    emit_report, load_runs, prepare, run_all, transfer_policy, ExperimentConfig, Strategy, TransferMode,
};
use gflowda::policy::TrainConfig;
use gflowda::theory::check_bound_family;
use gflowda::Error;

#[derive(Parser)]
#[command(name = "gflowda", version, about = "Active sample selection for domain adaptation with generative flow networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Gflowda,
    Random,
    Entropy,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Frozen,
    FineTune,
}

#[derive(Subcommand)]
enum Command {
    /// Write the source, pool and evaluation domains as CSV.
    Generate(Common),
    /// Run the configured strategy on every seed and write the report.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
    },
    /// Select on a scenario with a saved policy network.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "fine-tune")]
        mode: ModeArg,
    },
    /// Check the target-risk bound on random exact scenarios.
    BoundCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        scenarios: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a policy on the six-point instance and compare its sampling
    /// distribution with the normalized rewards.
    ProportionalityTest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20000)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit report files from a saved runs.json.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(Error),
    Assertion(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e)
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate(common) => {
            let cfg = load_config(&common)?;
            for &seed in &cfg.seeds {
                let p = prepare(&cfg, seed)?;
                let dir = cfg.output_dir.join(format!("seed_{seed}"));
                fs::create_dir_all(&dir).map_err(Error::from)?;
                save_domain_csv(&p.source, &dir.join("source.csv"))?;
                save_domain_csv(&p.pool, &dir.join("target.csv"))?;
                save_domain_csv(&p.eval, &dir.join("eval.csv"))?;
                println!("wrote {}", dir.display());
            }
        }
        Command::Run { common, strategy } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = strategy {
                cfg.strategy = match s {
                    StrategyArg::Gflowda => Strategy::Gflowda,
                    StrategyArg::Random => Strategy::Random,
                    StrategyArg::Entropy => Strategy::Entropy,
                };
            }
            let runs = run_all(&cfg)?;
            for (r, net) in &runs {
                if let Some(net) = net {
                    fs::create_dir_all(&cfg.output_dir).map_err(Error::from)?;
                    net.save(&cfg.output_dir.join(format!("policy_seed{}.json", r.seed)))?;
                }
                println!(
                    "{} seed {}: accuracy {:.4} jsd {:.4} classes {} reward {:.4}",
                    r.strategy, r.seed, r.accuracy, r.jsd, r.classes_discovered, r.reward.value
                );
            }
            let results: Vec<_> = runs.into_iter().map(|(r, _)| r).collect();
            emit_report(&results, &cfg.output_dir)?;
        }
        Command::Transfer {
            common,
            checkpoint,
            mode,
        } => {
            let cfg = load_config(&common)?;
            let mode = match mode {
                ModeArg::Frozen => TransferMode::Frozen,
                ModeArg::FineTune => TransferMode::FineTune,
            };
            let mut results = Vec::new();
            for &seed in &cfg.seeds {
                let (r, _) = transfer_policy(&checkpoint, &cfg, mode, seed)?;
                println!(
                    "{} seed {}: accuracy {:.4} jsd {:.4} reward {:.4}",
                    r.strategy, r.seed, r.accuracy, r.jsd, r.reward.value
                );
                results.push(r);
            }
            emit_report(&results, &cfg.output_dir)?;
        }
        Command::BoundCheck { seed, scenarios, out } => {
            let summary = check_bound_family(scenarios, seed, 1e-9)?;
            if let Some(dir) = out {
                write_json(&dir, "bound_check.json", &summary)?;
            }
            println!(
                "{} scenarios, {} violations, min slack {:.3e}",
                summary.scenarios, summary.violations, summary.min_slack
            );
            if summary.violations > 0 {
                return Err(Failure::Assertion(format!("{} bound violations", summary.violations)));
            }
        }
        Command::ProportionalityTest { seed, samples, out } => {
            let instance = EnumerableInstance::reference();
            let cfg = TrainConfig {
                plateau_tolerance: None,
                ..TrainConfig::default()
            };
            let (net, _, report) = run_proportionality(&instance, &cfg, samples, seed)?;
            if let Some(dir) = out {
                write_json(&dir, "proportionality.json", &report)?;
                net.save(&dir.join("policy.json"))?;
            }
            println!(
                "{} episodes, total variation {:.4}, max conservation gap {:.4}",
                report.episodes, report.total_variation, report.max_conservation_gap
            );
            if report.total_variation > 0.05 || report.max_conservation_gap > 0.05 {
                return Err(Failure::Assertion("proportionality tolerance exceeded".into()));
            }
        }
        Command::Report { runs, out } => {
            let results = load_runs(&runs)?;
            emit_report(&results, &out)?;
            println!("wrote {} runs to {}", results.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Assertion(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(2)
        }
    }
}
