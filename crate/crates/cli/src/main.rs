//! Command-line front end: synthetic data generation, cross-validated training,
//! checkpoint evaluation, ablation suites and gradient checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use urolith::check::{full_model, op_suite, CheckResult};
use urolith::config::{Experiment, GeneratorConfig, ModelConfig};
use urolith::data::{generate_dataset, prepare, read_dataset, write_dataset, Prepared};
use urolith::harness::{
    ablation_csv, evaluate, export_run, load_checkpoint, run_ablation, run_cv, save_checkpoint, Suite,
};
use urolith::losses::LossWeights;
use urolith::Error;

#[derive(Parser)]
#[command(name = "urolith", version, about = "Stone infection classification on synthetic CT and clinical records")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort to a directory.
    Generate {
        /// Generator settings (`key = value` lines); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated training; writes logs, metrics and one checkpoint per fold.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on every case of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run one ablation suite and write `ablation_<suite>.csv`.
    Ablate {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op, and optionally the whole model.
    Gradcheck {
        #[arg(long)]
        full: bool,
        /// Random inputs per op.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Sampled parameter coordinates for the full-model check.
        #[arg(long, default_value_t = FULL_MODEL_COORDS)]
        coords: usize,
    },
}

const FULL_MODEL_COORDS: usize = 400;
const FD_EPS: f64 = 1e-6;

/// Failure reported as a single `error kind=<tag> message=<json string>` line.
struct Failure {
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { kind: e.kind(), message: e.to_string() }
    }
}

impl Failure {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Failure { kind, message: message.into() }
    }
}

type CliResult<T> = Result<T, Failure>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
}

fn experiment(path: Option<&Path>) -> CliResult<Experiment> {
    match path {
        Some(p) => Ok(Experiment::parse(&read_text(p)?)?),
        None => Ok(Experiment::default()),
    }
}

fn load_prepared(dir: &Path, exp: &Experiment) -> CliResult<Vec<Prepared>> {
    let data = read_dataset(dir)?;
    Ok(prepare(&data, exp.model.volume_side, exp.train.window_lo, exp.train.window_hi)?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::new("io", format!("{}: {e}", dir.display())))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("na".into(), |x| format!("{x:.4}"))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = match config {
                Some(p) => GeneratorConfig::parse(&read_text(&p)?)?,
                None => GeneratorConfig::default(),
            };
            let data = generate_dataset(&cfg)?;
            write_dataset(&out, &data)?;
            let positives = data.samples.iter().filter(|s| s.label).count();
            println!("generated {} samples ({positives} infectious) in {}", data.samples.len(), out.display());
        }
        Command::Train { data, config, out } => {
            let exp = experiment(config.as_deref())?;
            let prepared = load_prepared(&data, &exp)?;
            let cv = run_cv(&exp.model, &exp.train, &prepared)?;
            create_dir(&out)?;
            export_run(&out, &cv, &exp.echo())?;
            for f in &cv.folds {
                save_checkpoint(&out.join(format!("fold{}.json", f.fold)), &f.model, &exp.train, f.fold, f.best_epoch)?;
                println!(
                    "fold {} best_epoch {} acc {:.4} auc {} dice {}",
                    f.fold,
                    f.best_epoch,
                    f.report.acc,
                    fmt_opt(f.report.auc),
                    fmt_opt(f.report.dice)
                );
            }
            for (name, ms) in &cv.summary {
                match ms {
                    Some(m) => println!("{name} {:.4} ± {:.4}", m.mean, m.std),
                    None => println!("{name} na"),
                }
            }
        }
        Command::Eval { checkpoint, data } => {
            let (model, manifest) = load_checkpoint(&checkpoint)?;
            let exp = Experiment { model: model.network.config().clone(), train: manifest.train.clone() };
            let prepared = load_prepared(&data, &exp)?;
            let refs: Vec<&Prepared> = prepared.iter().collect();
            let ev = evaluate(&model, &refs, &LossWeights::INITIAL, &exp.train)?;
            let json = serde_json::to_string(&ev.report).map_err(|e| Failure::new("json", e.to_string()))?;
            println!("{json}");
        }
        Command::Ablate { suite, data, config, out } => {
            let suite: Suite = suite.parse()?;
            let base = experiment(config.as_deref())?;
            let prepared = load_prepared(&data, &base)?;
            let rows = run_ablation(suite, &base, &prepared)?;
            create_dir(&out)?;
            let path = out.join(format!("ablation_{}.csv", Suite::NAMES[suite as usize]));
            fs::write(&path, ablation_csv(suite, &rows)).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))?;
            for r in &rows {
                println!("{} acc {} dice {}", r.label, fmt_opt(r.outcome.mean("acc")), fmt_opt(r.outcome.mean("dice")));
            }
        }
        Command::Gradcheck { full, seeds, coords } => {
            let t0 = Instant::now();
            let mut results: Vec<CheckResult> = op_suite(seeds)?;
            if full {
                results.push(full_model(&ModelConfig::default(), 0, coords, FD_EPS)?);
            }
            let failed = results.iter().filter(|r| !r.passed()).count();
            for r in &results {
                let verdict = if r.passed() { "ok" } else { "FAIL" };
                print!("{verdict} {} max_rel_err {:.3e} tol {:.0e}", r.name, r.max_rel_err, r.tolerance);
                if let Some(u) = r.unresolved {
                    print!(
                        " | {} of {} coords below {:.1e}: max_abs_err {:.2e} tol {:.2e}",
                        u.count, u.checked, u.floor, u.max_abs_err, u.abs_tolerance
                    );
                }
                println!();
            }
            println!("{} checks, {failed} failed, {:.1}s", results.len(), t0.elapsed().as_secs_f64());
            if failed > 0 {
                return Err(Failure::new("gradcheck", format!("{failed} of {} checks above tolerance", results.len())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            report(&Failure::new("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::FAILURE
        }
    }
}

fn report(f: &Failure) {
    let msg = serde_json::to_string(&f.message.replace('\n', " ")).unwrap_or_default();
    eprintln!("error kind={} message={msg}", f.kind);
}
