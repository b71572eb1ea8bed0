//! `semcom` — the experiment front end.
//!
//! Subcommands: `train` one `(alpha, beta)` configuration, `sweep` the full
//! grid, `verify` the dataset-free property suite, `plot` the trade-off
//! figure from a results file, and `fetch-data` to download and check the
//! dataset archive.
//!
//! Exit codes: 0 on success, 1 on runtime failure (or any failed property in
//! `verify`), 2 on invalid configuration or arguments.

mod fetch;
mod plot;

use clap::{Parser, Subcommand};
use semcom_core::data::{resolve_dataset_root, Dataset, Split};
use semcom_core::evaluation::{evaluate, load_records, persist_record};
use semcom_core::training::{sweep, SweepEvent, Trainer};
use semcom_core::verify::{self, VerifyScale};
use semcom_core::{Error, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "semcom",
    version,
    about = "Multi-user semantic communication experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one (alpha, beta) configuration and evaluate it.
    Train(TrainArgs),
    /// Run the full (alpha, beta) grid with checkpoint resume.
    Sweep(SweepArgs),
    /// Run the dataset-free property suite.
    Verify(VerifyArgs),
    /// Render the three-panel trade-off figure from a results file.
    Plot(PlotArgs),
    /// Download, checksum, extract, and structurally verify the dataset.
    FetchData(fetch::FetchArgs),
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Experiment config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reconstruction weight override.
    #[arg(long)]
    alpha: Option<f64>,
    /// SSIM weight override.
    #[arg(long)]
    beta: Option<f64>,
    /// Channel SNR override (dB; `inf` for a noiseless channel).
    #[arg(long)]
    snr_db: Option<f64>,
    /// End-to-end (phase 1) epochs override.
    #[arg(long)]
    epochs_e2e: Option<usize>,
    /// Decoder-only (phase 2) epochs override.
    #[arg(long)]
    epochs_decoder: Option<usize>,
    /// Experiment seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory override (beats config and environment).
    #[arg(long)]
    dataset_root: Option<PathBuf>,
    /// Shorthand for the 30/30-epoch desk-scale schedule.
    #[arg(long)]
    desk_scale: bool,
    /// Also evaluate with a noiseless channel and record the baseline.
    #[arg(long)]
    baseline: bool,
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dataset_root: Option<PathBuf>,
    /// Parallel per-pair workers.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct VerifyArgs {
    /// fast (interactive) or thorough (10^6-sample budgets).
    #[arg(long, default_value = "fast")]
    scale: String,
    /// Write the machine-readable report here as well.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(clap::Args)]
struct PlotArgs {
    /// Results file produced by train/sweep.
    #[arg(long)]
    results: PathBuf,
    /// Output image (.svg).
    #[arg(long)]
    out: PathBuf,
}

/// Failures that should exit 2 (bad configuration/arguments) vs 1 (runtime).
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Argument(_) | Error::UnsupportedConfiguration(_) => 2,
        _ => 1,
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn open_datasets(
    cfg: &ExperimentConfig,
    flag: Option<&PathBuf>,
) -> Result<(Dataset, Dataset), Error> {
    let root = flag
        .cloned()
        .or_else(|| resolve_dataset_root(cfg.dataset_root.as_deref()))
        .ok_or_else(|| {
            Error::Config(format!(
                "dataset_root is not set (config key `dataset_root`, flag --dataset-root, \
                 or environment variable {})",
                semcom_core::data::DATASET_DIR_ENV
            ))
        })?;
    let train = Dataset::load(&root, Split::Train)?;
    let test = Dataset::load(&root, Split::Test)?;
    Ok((train, test))
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let mut cfg = load_config(args.config.as_ref())?;
    if args.desk_scale {
        cfg.epochs_phase1 = 30;
        cfg.epochs_phase2 = 30;
    }
    if let Some(v) = args.alpha {
        cfg.set("alpha", &v.to_string())?;
    }
    if let Some(v) = args.beta {
        cfg.set("beta", &v.to_string())?;
    }
    if let Some(v) = args.snr_db {
        cfg.set("snr_db", &v.to_string())?;
    }
    if let Some(v) = args.epochs_e2e {
        cfg.epochs_phase1 = v;
    }
    if let Some(v) = args.epochs_decoder {
        cfg.epochs_phase2 = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.out {
        cfg.out_dir = v;
    }
    cfg.validate()?;
    let (train, test) = open_datasets(&cfg, args.dataset_root.as_ref())?;

    let config = cfg.train_config(cfg.alpha, cfg.beta);
    let hash = config.config_hash();
    let run_dir = cfg.out_dir.join(format!("run-{hash}"));
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    cfg.save(&run_dir.join("config.txt"))?;
    eprintln!(
        "training alpha={} beta={} for {}+{} epochs in {}",
        cfg.alpha,
        cfg.beta,
        cfg.epochs_phase1,
        cfg.epochs_phase2,
        run_dir.display()
    );
    let start = std::time::Instant::now();
    let mut trainer = Trainer::new(config, &train).with_run_dir(&run_dir);
    trainer.on_epoch = Some(Box::new(|log| {
        eprintln!(
            "  phase {} epoch {:>4}: loss {:.6} (mse {:.5}, ssim {:.4}, ce {:.4}) [{:.1}s]",
            log.phase,
            log.epoch,
            log.mean_total,
            log.mean_mse,
            log.mean_ssim,
            log.mean_cross_entropy,
            log.wall_time_s
        );
    }));
    let mut ckpt = trainer.train_two_phase()?;

    let results_path = cfg.out_dir.join("results.txt");
    let existing = if results_path.is_file() {
        load_records(&results_path)?
    } else {
        Vec::new()
    };
    let emit = |record: &semcom_core::MetricsRecord| -> Result<(), Error> {
        persist_record(record, &run_dir.join("metrics.txt"))?;
        if existing
            .iter()
            .any(|r| r.config_hash == record.config_hash && r.noiseless == record.noiseless)
        {
            eprintln!("results.txt already has this record; not duplicating");
        } else {
            persist_record(record, &results_path)?;
        }
        println!("{}", record.to_line());
        Ok(())
    };

    let mut record = evaluate(&mut ckpt, &test, false)?;
    record.wall_time_s = start.elapsed().as_secs_f64();
    emit(&record)?;
    if args.baseline {
        let baseline = evaluate(&mut ckpt, &test, true)?;
        emit(&baseline)?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let mut cfg = load_config(args.config.as_ref())?;
    if args.desk_scale {
        cfg.epochs_phase1 = 30;
        cfg.epochs_phase2 = 30;
    }
    if let Some(v) = args.out {
        cfg.out_dir = v;
    }
    if let Some(v) = args.jobs {
        cfg.jobs = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    let (train, test) = open_datasets(&cfg, args.dataset_root.as_ref())?;
    let total = cfg.alphas.len() * cfg.betas.len();
    eprintln!(
        "sweeping {} x {} = {total} pairs with {} worker(s) into {}",
        cfg.alphas.len(),
        cfg.betas.len(),
        cfg.jobs,
        cfg.out_dir.display()
    );
    let records = sweep(&cfg, &train, &test, &mut |event| match event {
        SweepEvent::Skipped { alpha, beta } => {
            eprintln!("  (alpha={alpha}, beta={beta}) already recorded; skipping")
        }
        SweepEvent::Started { alpha, beta } => eprintln!("  training (alpha={alpha}, beta={beta})"),
        SweepEvent::Finished { record } => eprintln!(
            "  done (alpha={}, beta={}): accuracy {:.4}, psnr {:.2} dB, ssim {:.4}",
            record.alpha, record.beta, record.accuracy, record.psnr_db, record.ssim
        ),
        SweepEvent::Failed {
            alpha,
            beta,
            message,
        } => {
            eprintln!("  FAILED (alpha={alpha}, beta={beta}): {message}")
        }
    })?;
    eprintln!(
        "{} record(s) in {}",
        records.len(),
        cfg.out_dir.join("results.txt").display()
    );
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<bool, Error> {
    let scale = VerifyScale::parse(&args.scale).ok_or_else(|| {
        Error::Argument(format!("unknown scale {:?} (fast|thorough)", args.scale))
    })?;
    let report = verify::run(scale);
    print!("{}", report.to_machine_lines());
    if let Some(path) = args.report {
        std::fs::write(&path, report.to_machine_lines()).map_err(|e| Error::io(&path, e))?;
    }
    for r in report.results.iter().filter(|r| !r.passed) {
        eprintln!("FAILED {}: {}", r.name, r.observed);
    }
    Ok(report.all_passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<bool, Error> = match cli.command {
        Command::Train(args) => cmd_train(args).map(|()| true),
        Command::Sweep(args) => cmd_sweep(args).map(|()| true),
        Command::Verify(args) => cmd_verify(args),
        Command::Plot(args) => plot::cmd_plot(&args.results, &args.out).map(|()| true),
        Command::FetchData(args) => fetch::cmd_fetch(args).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
