use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pogm::acceptance;
use pogm::diagnostics::{pairwise_kl_b1, Metric};
use pogm::domains::write_csv;
use pogm::model::ModelState;
use pogm::runner::config::ExperimentConfig;
use pogm::runner::run::{evaluate, load_checkpoint, prepare};
use pogm::runner::sweep::summary_csv;
use pogm::runner::{compare, run, sweep, Axis};
use pogm::PogmError;

#[derive(Parser)]
#[command(name = "pogm", version, about = "Multi-domain training with gradient matching")]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the task's domains to a CSV file.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every configured seed and write metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tau: Option<usize>,
    },
    /// Repeat a run across values of one hyperparameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// alpha, E or kappa.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tau: Option<usize>,
    },
    /// Align the per-round metrics of several configs.
    Compare {
        /// Repeat once per config.
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the comparison tables.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau: Option<usize>,
    },
    /// Evaluate a saved checkpoint against its config's data.
    Diag {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the acceptance checks.
    Selftest {
        /// Scratch directory for experiment outputs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, seed: Option<u64>, out: Option<PathBuf>, tau: Option<usize>) -> pogm::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if let Some(t) = tau {
        cfg.tau = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &PogmError) -> u8 {
    if e.is_io() {
        3
    } else if e.is_numeric() {
        2
    } else {
        1
    }
}

fn execute(cli: Cli) -> pogm::Result<u8> {
    match cli.command {
        Command::GenData { config, seed, out } => {
            let cfg = load(&config, seed, None, None)?;
            let data = cfg.datasets(cfg.seeds[0])?;
            let file = std::fs::File::create(&out)?;
            write_csv(std::io::BufWriter::new(file), &data)?;
            log::info!("wrote {} domains to {}", data.len(), out.display());
            Ok(0)
        }
        Command::Run { config, seed, out, tau } => {
            let cfg = load(&config, seed, out, tau)?;
            let records = run(&cfg)?;
            let mut failed = false;
            for r in &records {
                match (&r.failure, r.final_test) {
                    (Some(f), _) => {
                        failed = true;
                        eprintln!("seed {}: failed: {}", r.seed, f.message);
                    }
                    (None, Some(t)) => println!(
                        "seed {}: test {} {:.4}",
                        r.seed,
                        if t.acc.is_some() { "acc" } else { "loss" },
                        t.acc.unwrap_or(t.loss)
                    ),
                    (None, None) => {}
                }
            }
            log::info!("outputs in {}", cfg.output_dir.join(cfg.hash()).display());
            Ok(if failed { 2 } else { 0 })
        }
        Command::Sweep { config, axis, values, seed, out, tau } => {
            let cfg = load(&config, seed, out, tau)?;
            let axis: Axis = axis.parse()?;
            let rows = sweep(&cfg, axis, &values)?;
            let text = summary_csv(&rows);
            let path = cfg
                .output_dir
                .join(format!("sweep-{}-{}.csv", axis.name(), cfg.hash()));
            pogm::runner::output::write_atomic(&path, text.as_bytes())?;
            print!("{text}");
            Ok(0)
        }
        Command::Compare { config, seed, out, tau } => {
            let configs = config
                .iter()
                .map(|p| load(p, seed, None, tau))
                .collect::<pogm::Result<Vec<_>>>()?;
            let cmp = compare(&configs, &out)?;
            for c in &cmp.correlations {
                println!("{} seed {}: angle correlation {:.4}", c.label, c.seed, c.correlation);
            }
            log::info!("{} metric tables in {}", cmp.series.len(), out.display());
            Ok(0)
        }
        Command::Diag { config, checkpoint, seed } => {
            let cfg = load(&config, seed, None, None)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let data = prepare(&cfg, cfg.seeds[0])?;
            let model = ModelState::from_params(ckpt.spec, ckpt.params)?;
            let test = evaluate(&model, &[&data.target_test])?;
            let mut out = serde_json::json!({
                "round": ckpt.round,
                "test_acc": test.acc,
                "test_loss": test.loss,
            });
            if test.acc.is_some() {
                out[Metric::KlB1.name()] = pairwise_kl_b1(&model, &data.source_train)?.into();
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(0)
        }
        Command::Selftest { out } => {
            let scratch;
            let dir = match out {
                Some(d) => d,
                None => {
                    scratch = tempfile::tempdir()?;
                    scratch.path().to_path_buf()
                }
            };
            let outcomes = acceptance::run_all(&dir)?;
            for o in &outcomes {
                println!("{o}");
            }
            Ok(if outcomes.iter().all(|o| o.passed) { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
