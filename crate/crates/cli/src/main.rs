//! `ccid`: simulate flows, build datasets, train, evaluate, ablate and
//! identify congestion-control algorithms from one command line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ccid_core::ccsim::read_trace;
use ccid_core::models::{EpochLog, ModelCheckpoint};
use ccid_core::pipeline::{
    build_datasets, evaluate_checkpoint, identify, load_traces, run_ablation, simulate_to_dir,
    train_model, DatasetSplits, ExperimentConfig, Identification,
};
use ccid_core::preprocess::Dataset;
use ccid_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

const CONFIG_FILE: &str = "config.json";

#[derive(Parser, Debug)]
#[command(name = "ccid", version, about = "Passive TCP congestion-control identification")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true, env = "CCID_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's.
    #[arg(long, global = true, env = "CCID_SEED")]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true, env = "CCID_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the parameter sweep and write traces plus a manifest.
    Simulate,
    /// Turn a trace directory into normalized train/valid/test datasets.
    BuildDataset {
        #[arg(long, env = "CCID_TRACES")]
        traces: PathBuf,
    },
    /// Train a classifier on a dataset directory.
    Train {
        #[arg(long, env = "CCID_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "CCID_EPOCHS")]
        epochs: Option<usize>,
        /// Start from this checkpoint's weights.
        #[arg(long)]
        init: Option<PathBuf>,
        /// With --init, draw a fresh output layer.
        #[arg(long, requires = "init")]
        reinit_output: bool,
        /// Per-epoch CSV log (default: next to the checkpoint).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Confusion matrix and per-class metrics of a checkpoint on a dataset file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Retrain on channel subsets of a dataset directory.
    Ablate {
        #[arg(long, env = "CCID_DATASET")]
        dataset: PathBuf,
        #[arg(long, env = "CCID_EPOCHS")]
        epochs: Option<usize>,
        /// Comma-separated channel subset; repeatable.
        #[arg(long = "subset")]
        subsets: Vec<String>,
    },
    /// Classify one trace CSV, window by window, with a flow-level vote.
    Identify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::UnknownChannel(_)
        | Error::Version { .. }
        | Error::Format { .. }
        | Error::Scenario(_)
        | Error::Shape { .. }
        | Error::LengthMismatch(..) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(common: &Common, fallback: Option<&Path>) -> Result<ExperimentConfig> {
    let path = match (&common.config, fallback) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) if p.exists() => p.to_path_buf(),
        _ => return Err(Error::config("--config", "required")),
    };
    let mut cfg = ExperimentConfig::load(&path).map_err(|e| match e {
        Error::Io(io) => Error::config("--config", format!("{}: {io}", path.display())),
        e => e,
    })?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_path(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::config("--out", "required"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.cmd {
        Command::Simulate => {
            let cfg = load_config(common, None)?;
            let out = out_path(common)?;
            let m = simulate_to_dir(&cfg, out)?;
            println!(
                "{} traces written to {} (config {})",
                m.flows.len(),
                out.display(),
                &m.config_hash[..12]
            );
        }
        Command::BuildDataset { traces } => {
            let (manifest, flows) = load_traces(&traces)?;
            let mut cfg = match &common.config {
                Some(_) => load_config(common, None)?,
                None => manifest.config,
            };
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            let out = out_path(common)?;
            let data = build_datasets(&flows, &cfg)?;
            data.save(out)?;
            write_text(&out.join(CONFIG_FILE), &serde_json::to_string_pretty(&cfg)?)?;
            print_splits(&data);
        }
        Command::Train {
            dataset,
            epochs,
            init,
            reinit_output,
            log,
        } => {
            let mut cfg = load_config(common, Some(&dataset.join(CONFIG_FILE)))?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cfg.validate()?;
            let out = out_path(common)?;
            let train = Dataset::load(&dataset.join("train.ccds"))?;
            let valid_path = dataset.join("valid.ccds");
            let valid = if valid_path.exists() {
                Some(Dataset::load(&valid_path)?)
            } else {
                None
            };
            let init = init.map(|p| ModelCheckpoint::load(&p)).transpose()?;
            let log_path = log.unwrap_or_else(|| out.with_extension("epochs.csv"));
            let mut log_file = EpochWriter::create(&log_path)?;
            let ck = train_model(
                &cfg,
                &train,
                valid.as_ref(),
                init.as_ref(),
                reinit_output,
                &mut |e| log_file.write(e),
            )?;
            log_file.finish()?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            ck.save(out)?;
            let last = ck.log.last();
            println!(
                "checkpoint {} (best epoch {}, train accuracy {:.4})",
                out.display(),
                ck.best_epoch.unwrap_or(0),
                last.map_or(0.0, |e| e.train_accuracy)
            );
        }
        Command::Evaluate {
            checkpoint,
            dataset,
        } => {
            let ck = ModelCheckpoint::load(&checkpoint)?;
            let data = Dataset::load(&dataset)?;
            let report = evaluate_checkpoint(&ck, &data)?;
            print!("{}", report.to_text());
            if let Some(out) = &common.out {
                fs::create_dir_all(out)?;
                write_text(&out.join("report.json"), &report.to_json()?)?;
                write_text(&out.join("confusion.csv"), &report.confusion.to_csv())?;
                write_text(&out.join("metrics.csv"), &report.metrics_csv())?;
            }
        }
        Command::Ablate {
            dataset,
            epochs,
            subsets,
        } => {
            let mut cfg = load_config(common, Some(&dataset.join(CONFIG_FILE)))?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if !subsets.is_empty() {
                cfg.ablation = subsets
                    .iter()
                    .map(|s| s.split(',').map(|c| c.trim().to_string()).collect())
                    .collect();
            }
            cfg.validate()?;
            let data = load_splits(&dataset)?;
            let report = run_ablation(&cfg, &data, &cfg.ablation_subsets())?;
            print!("{}", report.to_text());
            if let Some(out) = &common.out {
                fs::create_dir_all(out)?;
                write_text(&out.join("ablation.json"), &report.to_json()?)?;
                write_text(&out.join("ablation.csv"), &report.to_csv())?;
            }
        }
        Command::Identify {
            checkpoint,
            trace,
            json,
        } => {
            let ck = ModelCheckpoint::load(&checkpoint)?;
            let t = read_trace(&trace)?;
            let id = identify(&ck, &t)?;
            let text = if json {
                serde_json::to_string_pretty(&id)? + "\n"
            } else {
                identification_text(&id)
            };
            print!("{text}");
            if let Some(out) = &common.out {
                write_text(out, &serde_json::to_string_pretty(&id)?)?;
            }
        }
    }
    Ok(())
}

fn load_splits(dir: &Path) -> Result<DatasetSplits> {
    let train = Dataset::load(&dir.join("train.ccds"))?;
    let test = Dataset::load(&dir.join("test.ccds"))?;
    let valid_path = dir.join("valid.ccds");
    let valid = if valid_path.exists() {
        Dataset::load(&valid_path)?
    } else {
        Dataset {
            split: "valid".into(),
            samples: Vec::new(),
            ..train.clone()
        }
    };
    let stats = train
        .stats
        .clone()
        .ok_or_else(|| Error::format(dir.join("train.ccds"), "dataset is not normalized"))?;
    let split = serde_json::from_str(&fs::read_to_string(dir.join("split.json"))?)?;
    Ok(DatasetSplits {
        train,
        valid,
        test,
        split,
        stats,
        skipped: Vec::new(),
    })
}

fn print_splits(d: &DatasetSplits) {
    for (name, ds, traces) in [
        ("train", &d.train, d.split.train.len()),
        ("valid", &d.valid, d.split.valid.len()),
        ("test", &d.test, d.split.test.len()),
    ] {
        println!("{name:>5}: {traces:>4} traces, {:>6} windows", ds.len());
    }
    if !d.skipped.is_empty() {
        println!("skipped {} short traces", d.skipped.len());
    }
}

fn identification_text(id: &Identification) -> String {
    let mut s = String::new();
    s.push_str(&format!("{:>6}", "window"));
    for l in &id.label_map {
        s.push_str(&format!(" {l:>9}"));
    }
    s.push('\n');
    for (w, p) in id.windows.iter().enumerate() {
        s.push_str(&format!("{w:>6}"));
        for v in p {
            s.push_str(&format!(" {v:>9.4}"));
        }
        s.push('\n');
    }
    s.push_str(&format!("{:>6}", "mean"));
    for v in &id.mean_posterior {
        s.push_str(&format!(" {v:>9.4}"));
    }
    s.push('\n');
    s.push_str(&format!(
        "flow: {} ({} of {} windows)\n",
        id.label,
        id.votes[id.class],
        id.windows.len()
    ));
    s
}

/// Appends one CSV row per epoch as training runs.
struct EpochWriter {
    out: BufWriter<File>,
    err: Option<std::io::Error>,
}

impl EpochWriter {
    fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(
            out,
            "epoch,learning_rate,train_loss,train_accuracy,valid_loss,valid_accuracy"
        )?;
        Ok(EpochWriter { out, err: None })
    }

    fn write(&mut self, e: &EpochLog) {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let r = writeln!(
            self.out,
            "{},{},{},{},{},{}",
            e.epoch,
            e.learning_rate,
            e.train_loss,
            e.train_accuracy,
            opt(e.valid_loss),
            opt(e.valid_accuracy)
        )
        .and_then(|_| self.out.flush());
        log::info!(
            "epoch {:>4}  lr {:.1e}  loss {:.4}  acc {:.4}{}",
            e.epoch,
            e.learning_rate,
            e.train_loss,
            e.train_accuracy,
            e.valid_accuracy
                .map(|a| format!("  valid acc {a:.4}"))
                .unwrap_or_default()
        );
        if let (Err(err), None) = (r, &self.err) {
            self.err = Some(err);
        }
    }

    fn finish(mut self) -> Result<()> {
        match self.err.take() {
            Some(e) => Err(e.into()),
            None => Ok(self.out.flush()?),
        }
    }
}
