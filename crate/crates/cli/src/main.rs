mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use phat_core::data::{load_csv, split, synth_mixed, write_csv, SplitRatios};
use phat_core::model::PhatModel;
use phat_core::numerics::Tensor;
use phat_core::periodicity::detect_periods;
use phat_core::training::{evaluate, log_csv, train_with, GradcheckOptions, Metrics};
use phat_core::{presets, verify};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "phat", version, about = "Period-bucketed attention forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitChoice {
    All,
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Report the dominant periods of every variate as JSON.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        topk: usize,
        /// Analyse only the final T samples.
        #[arg(long)]
        lookback: Option<usize>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train from a JSON run config; writes checkpoint, metrics and manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Score checkpoints on a CSV; prints dataset, horizon, mse, mae.
    Eval {
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitChoice,
        /// Train:val:test proportions used by --split.
        #[arg(long, default_value = "7,1,2")]
        ratios: String,
    },
    /// Run the oracle and invariant checks.
    Verify {
        /// Only run checks whose name contains this.
        #[arg(long)]
        filter: Option<String>,
        /// Fault injection: perturb analytic gradients in the gradient check.
        #[arg(long)]
        corrupt_gradient: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Gradient check of the reference model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scalars to probe; omit to check every parameter.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        corrupt_gradient: bool,
    },
    /// Write the mixed-period synthetic dataset as CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        per_group: usize,
        #[arg(long, default_value_t = 4096)]
        length: usize,
    },
    /// List presets, or print one as JSON.
    Presets { name: Option<String> },
}

/// Failures that are the caller's fault exit with 2, failed runs with 1.
enum Failure {
    Usage(anyhow::Error),
    Failed(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let training = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<phat_core::Error>(),
                Some(phat_core::Error::Training(_))
            )
        });
        if training {
            Failure::Failed(e)
        } else {
            Failure::Usage(e)
        }
    }
}

impl From<phat_core::Error> for Failure {
    fn from(e: phat_core::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Failed(e)) => {
            eprintln!("failed: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Detect {
            input,
            topk,
            lookback,
            out,
        } => detect(&input, topk, lookback, out.as_deref()),
        Command::Train {
            config,
            out,
            epochs,
            seed,
            quiet,
        } => train(&config, out, epochs, seed, quiet),
        Command::Eval {
            checkpoint,
            input,
            split,
            ratios,
        } => eval(&checkpoint, &input, split, &ratios),
        Command::Verify {
            filter,
            corrupt_gradient,
            seed,
            json,
        } => run_verify(filter, corrupt_gradient, seed, json),
        Command::Gradcheck {
            seed,
            samples,
            tolerance,
            corrupt_gradient,
        } => run_gradcheck(seed, samples, tolerance, corrupt_gradient),
        Command::Synth {
            out,
            seed,
            per_group,
            length,
        } => {
            let (ds, groups) = synth_mixed(seed, per_group, length)?;
            write_csv(&ds, &out).with_context(|| format!("writing {}", out.display()))?;
            eprintln!(
                "wrote {} variates × {} steps; roles {groups:?}",
                ds.num_variates(),
                ds.len()
            );
            Ok(())
        }
        Command::Presets { name } => {
            match name {
                Some(n) => println!(
                    "{}",
                    serde_json::to_string_pretty(&presets::get(&n)?.config)
                        .map_err(anyhow::Error::from)?
                ),
                None => {
                    for p in presets::all() {
                        println!("{:<24} {}", p.name, p.description);
                    }
                }
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct PeriodRecord<'a> {
    variate: usize,
    column: &'a str,
    rank: usize,
    period: usize,
    bin: usize,
    magnitude: f64,
    significant: bool,
}

fn detect(
    input: &Path,
    topk: usize,
    lookback: Option<usize>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let ds = load_csv(input).with_context(|| format!("loading {}", input.display()))?;
    let values = match lookback {
        Some(t) if t > ds.len() => {
            return Err(Failure::Usage(anyhow::anyhow!(
                "lookback {t} exceeds the {} samples",
                ds.len()
            )))
        }
        Some(t) => {
            let (c, s) = (ds.num_variates(), ds.len());
            let data = (0..c)
                .flat_map(|i| ds.values.row(i)[s - t..].to_vec())
                .collect();
            Tensor::new(vec![c, t], data)?
        }
        None => ds.values.clone(),
    };
    let prof = detect_periods(&values, topk)?;
    let mut records = Vec::new();
    for (v, cands) in prof.variates.iter().enumerate() {
        for (rank, c) in cands.iter().enumerate() {
            records.push(PeriodRecord {
                variate: v,
                column: &ds.columns[v],
                rank,
                period: c.period,
                bin: c.bin,
                magnitude: c.magnitude,
                significant: c.significant,
            });
        }
    }
    let text = serde_json::to_string_pretty(&records).map_err(anyhow::Error::from)?;
    match out {
        Some(p) => {
            std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn train(
    path: &Path,
    out: Option<PathBuf>,
    epochs: Option<usize>,
    seed: Option<u64>,
    quiet: bool,
) -> Result<(), Failure> {
    let mut run = RunConfig::read(path)?;
    let mut cfg = run.resolve()?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = out.or_else(|| run.out.clone()).ok_or_else(|| {
        Failure::Usage(anyhow::anyhow!(
            "no output directory: pass --out or set `out`"
        ))
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let ds = run.load_data(base)?;

    let outcome = train_with(&ds, &cfg, |e| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  train_mse {:.6}  val_mse {:.6}  val_mae {:.6}",
                e.epoch, e.train_mse, e.val_mse, e.val_mae
            );
        }
    })?;
    let test = evaluate(&outcome.model, &outcome.prepared.test).ok();

    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    outcome.model.save(out.join("checkpoint.json"))?;
    std::fs::write(out.join("metrics.csv"), log_csv(&outcome.log))
        .context("writing metrics.csv")?;
    run.train = Some(cfg.clone());
    run.preset = None;
    run.out = Some(out.clone());
    let manifest = json!({
        "config": run,
        "seed": cfg.seed,
        "git_describe": git_describe(),
        "version": env!("CARGO_PKG_VERSION"),
        "dataset": ds.name,
        "variates": ds.num_variates(),
        "periods": outcome.model.buckets.periods(),
        "parameters": outcome.model.count_params(),
        "best_epoch": outcome.best_epoch,
        "test": test,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(anyhow::Error::from)?;
    std::fs::write(out.join("manifest.json"), text + "\n").context("writing manifest.json")?;
    if !quiet {
        eprintln!(
            "wrote checkpoint.json, metrics.csv, manifest.json to {}",
            out.display()
        );
    }
    Ok(())
}

fn parse_ratios(s: &str) -> anyhow::Result<SplitRatios> {
    let parts: Vec<usize> = s
        .split([',', ':'])
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("ratios {s:?} are not integers"))?;
    match parts.as_slice() {
        [a, b, c] => Ok(SplitRatios([*a, *b, *c])),
        _ => bail!("ratios need three parts, got {s:?}"),
    }
}

fn eval(
    checkpoints: &[PathBuf],
    input: &Path,
    which: SplitChoice,
    ratios: &str,
) -> Result<(), Failure> {
    let ds = load_csv(input).with_context(|| format!("loading {}", input.display()))?;
    let series = match which {
        SplitChoice::All => ds.values.clone(),
        other => {
            let sp = split(&ds, parse_ratios(ratios)?)?;
            match other {
                SplitChoice::Train => sp.train,
                SplitChoice::Val => sp.val,
                _ => sp.test,
            }
        }
    };
    let mut rows: Vec<(usize, Metrics)> = Vec::new();
    for path in checkpoints {
        let model = PhatModel::load(path).with_context(|| format!("loading {}", path.display()))?;
        let x = match &model.scaler {
            Some(s) => s.transform(&series)?,
            None => series.clone(),
        };
        let m = evaluate(&model, &x).with_context(|| format!("evaluating {}", path.display()))?;
        rows.push((model.config.horizon, m));
    }
    let mut stdout = std::io::stdout().lock();
    let mut emit = || -> std::io::Result<()> {
        writeln!(stdout, "dataset,horizon,mse,mae")?;
        for (h, m) in &rows {
            writeln!(stdout, "{},{h},{:.6},{:.6}", ds.name, m.mse, m.mae)?;
        }
        Ok(())
    };
    emit().context("writing results")?;
    Ok(())
}

fn run_verify(
    filter: Option<String>,
    corrupt_gradient: bool,
    seed: u64,
    json: bool,
) -> Result<(), Failure> {
    let opts = verify::VerifyOptions {
        filter,
        corrupt_gradient,
        seed,
    };
    let results = verify::run(&opts)?;
    if results.is_empty() {
        return Err(Failure::Usage(anyhow::anyhow!(
            "no check matches the filter"
        )));
    }
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&results).map_err(anyhow::Error::from)?
        );
    } else {
        println!(
            "{:<18} {:<6} {:>7} {:>11} {:>11}  detail",
            "check", "status", "cases", "max_abs", "max_rel"
        );
        for r in &results {
            println!(
                "{:<18} {:<6} {:>7} {:>11.3e} {:>11.3e}  {}",
                r.name,
                if r.passed { "ok" } else { "FAIL" },
                r.report.cases_run,
                r.report.max_abs_error,
                r.report.max_rel_error,
                r.detail
            );
        }
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Failed(anyhow::anyhow!(
            "checks failed: {}",
            failed.join(", ")
        )))
    }
}

fn run_gradcheck(
    seed: u64,
    samples: Option<usize>,
    tolerance: f64,
    corrupt: bool,
) -> Result<(), Failure> {
    let model = verify::reference_model(seed)?;
    let c = model.num_variates();
    let (t, l) = (model.config.lookback, model.config.horizon);
    let x = Tensor::new(
        vec![c, t],
        (0..c * t)
            .map(|i| ((i * 7 + 3) as f64 * 0.37).sin())
            .collect(),
    )?;
    let y = Tensor::new(
        vec![c, l],
        (0..c * l)
            .map(|i| ((i * 5 + 1) as f64 * 0.23).cos())
            .collect(),
    )?;
    let opts = GradcheckOptions {
        samples,
        tolerance,
        seed,
        corrupt,
        ..Default::default()
    };
    let report = phat_core::training::gradcheck(&model, &x, &y, &opts)?;
    println!("{:<28} {:>7} {:>11}", "parameter", "checked", "max_rel");
    for e in &report.entries {
        println!("{:<28} {:>7} {:>11.3e}", e.name, e.checked, e.max_rel_error);
    }
    if report.passed() {
        println!(
            "max relative error {:.3e} < {tolerance:e}",
            report.max_rel_error()
        );
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|e| e.name.as_str()).collect();
        Err(Failure::Failed(anyhow::anyhow!(
            "gradient check failed for {}",
            names.join(", ")
        )))
    }
}
