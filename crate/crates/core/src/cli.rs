//! Command-line front end: `gen-data`, `preprocess`, `train`, `eval`, `gradcheck`.
//!
//! Configuration resolves in three layers: built-in defaults, then
//! `--config FILE`, then `--set key=value` and per-key flags. The resolved
//! result is written as `run.config` next to every command's outputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{self, generate};
use crate::error::{Error, Result};
use crate::gradcheck::run_suite;
use crate::model::FusionModel;
use crate::params::atomic_write;
use crate::signal::preprocess;
use crate::train::{evaluate, metrics_csv, summary_json, train_with, EvalMode, EvalReport};

macro_rules! overrides {
    ($( $(#[$m:meta])* $name:ident ),* $(,)?) => {
        /// Per-key overrides; each flag mirrors the config key of the same name.
        #[derive(Args, Debug, Default, Clone)]
        pub struct Overrides {
            $( $(#[$m])* #[arg(long, value_name = "VALUE")] pub $name: Option<String>, )*
        }

        impl Overrides {
            pub fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut v = Vec::new();
                $( if let Some(x) = &self.$name { v.push((stringify!($name), x.as_str())); } )*
                v
            }
        }
    };
}

overrides!(
    /// Seed for generation, splitting, initialization, shuffling and dropout.
    seed,
    classes, samples_per_class, steps, d_video, d_audio, noise_sigma,
    audio_informativeness, latent_dim, audio_ratio,
    sample_rate, window_ms, hop_ms, spectral_points,
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    log_compress,
    video_components, audio_components, ratio,
    /// Double the training split with shifted copies.
    #[arg(num_args = 0..=1, default_missing_value = "true")]
    augment,
    max_shift, train_fraction,
    hidden, fused, mlp_hidden,
    /// paper-literal (h = c·tanh(o)) or standard (h = o·tanh(c)).
    variant,
    /// sum or mean.
    pooling,
    /// squared-hinge or literal.
    loss,
    epochs_max, batch_size, learning_rate, momentum, alpha, beta, patience,
    dropout_rate, clip_norm, val_fraction, target_train_accuracy,
    /// audio-visual or video-only.
    mode,
    gradcheck_seeds,
    /// Debug: double the analytic gradient of the named gradcheck block.
    #[arg(num_args = 0..=1, default_missing_value = "linear")]
    corrupt,
    /// Raw container base path (preprocess input).
    input,
    /// Container base path for train / eval.
    data,
    checkpoint,
    /// Output directory.
    out,
);

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat key=value config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Generate a synthetic bimodal dataset into <out>/data.{manifest,bin}.
    GenData(Common),
    /// Split, whiten, center, align (and optionally augment) <input> into <out>/{train,test}.
    Preprocess(Common),
    /// Train on <data>; writes model.ckpt, metrics.csv, summary.json, train.log.
    Train(Common),
    /// Evaluate <checkpoint> on <data> in the selected mode.
    Eval(Common),
    /// Finite-difference gradient checks of every layer and the full model.
    Gradcheck(Common),
}

#[derive(Parser, Debug)]
#[command(name = "amlstm", version, about = "Audio-visual LSTM fusion: data, preprocessing, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(c) | Command::Preprocess(c) | Command::Train(c) | Command::Eval(c) | Command::Gradcheck(c) => c,
        }
    }
}

pub fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &common.config {
        cfg.apply_file(p)?;
    }
    let mut pairs: Vec<(String, String)> = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        pairs.push((k.trim().into(), v.trim().into()));
    }
    pairs.extend(common.overrides.pairs().into_iter().map(|(k, v)| (k.to_string(), v.to_string())));
    if let Some((_, seed)) = pairs.iter().rev().find(|(k, _)| k == "seed") {
        cfg.set("seed", seed)?;
    }
    for (k, v) in pairs.iter().filter(|(k, _)| k != "seed") {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::Config(format!("missing required setting `{key}`")))
}

fn ensure_exists(base: &Path, ext: &str) -> Result<()> {
    let mut p = base.as_os_str().to_owned();
    p.push(ext);
    let p = PathBuf::from(p);
    if p.exists() {
        Ok(())
    } else {
        Err(Error::io(&p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    atomic_write(&out.join("run.config"), cfg.to_text().as_bytes())
}

/// Runs one command, writing human-readable progress to `stdout`.
pub fn execute(cmd: &Command, stdout: &mut dyn std::io::Write) -> Result<()> {
    let cfg = resolve(cmd.common())?;
    let say = |w: &mut dyn std::io::Write, s: String| {
        let _ = w.write_all(s.as_bytes());
    };
    match cmd {
        Command::GenData(_) => {
            let out = require(&cfg.out, "out")?;
            cfg.synth.validate()?;
            let ds = generate(&cfg.synth)?;
            prepare_out(out, &cfg)?;
            data::save(&ds, &out.join("data"))?;
            say(stdout, format!("wrote {} records ({} classes) to {}\n", ds.len(), ds.classes, out.join("data").display()));
        }
        Command::Preprocess(_) => {
            let input = require(&cfg.input, "input")?;
            let out = require(&cfg.out, "out")?;
            cfg.prep.validate()?;
            ensure_exists(input, ".manifest")?;
            let raw = data::load(input)?;
            let (train, test) = preprocess(&raw, &cfg.prep)?;
            prepare_out(out, &cfg)?;
            data::save(&train, &out.join("train"))?;
            data::save(&test, &out.join("test"))?;
            let (dv, da) = train.dims();
            say(
                stdout,
                format!("train {} records, test {} records, video dim {dv}, audio step dim {da}\n", train.len(), test.len()),
            );
        }
        Command::Train(_) => run_train(&cfg, stdout)?,
        Command::Eval(_) => run_eval(&cfg, stdout)?,
        Command::Gradcheck(_) => {
            if cfg.gradcheck_seeds == 0 {
                return Err(Error::Config("gradcheck_seeds must be positive".into()));
            }
            let rep = run_suite(&cfg.suite_config())?;
            let text = rep.to_text();
            if let Some(out) = &cfg.out {
                prepare_out(out, &cfg)?;
                atomic_write(&out.join("gradcheck.txt"), text.as_bytes())?;
            }
            say(stdout, text);
            if !rep.passed() {
                let names: Vec<&str> = rep.failures().map(|b| b.name.as_str()).collect();
                return Err(Error::GradCheck(format!(
                    "max relative error {:.3e} in: {}",
                    rep.max_rel_error(),
                    names.join(", ")
                )));
            }
        }
    }
    Ok(())
}

fn run_train(cfg: &RunConfig, stdout: &mut dyn std::io::Write) -> Result<()> {
    let data_path = require(&cfg.data, "data")?;
    let out = require(&cfg.out, "out")?;
    cfg.train.validate()?;
    cfg.validate_shape()?;
    ensure_exists(data_path, ".manifest")?;
    let train_set = data::load(data_path)?;
    if train_set.is_empty() {
        return Err(Error::Config(format!("{} holds no records", data_path.display())));
    }
    let (dv, da) = train_set.dims();
    let mcfg = cfg.model_config(dv, da, train_set.classes);
    mcfg.validate()?;
    let model = FusionModel::new(mcfg, cfg.seed)?;
    prepare_out(out, cfg)?;

    let ckpt = out.join("model.ckpt");
    let metrics_path = out.join("metrics.csv");
    let mut log = String::new();
    let _ = writeln!(log, "started {}", unix_time());
    let mut history = Vec::new();
    let result = train_with(model, &train_set, None, &cfg.train, |m, best| {
        history.push(m.clone());
        if m.improved {
            best.save(&ckpt)?;
        }
        atomic_write(&metrics_path, metrics_csv(&history).as_bytes())?;
        let _ = writeln!(
            log,
            "epoch {:>4} total {:.6} val_loss {:.6} train_acc {:.4} val_acc {:.4} wall {:.3}s{}",
            m.epoch,
            m.total,
            m.val_loss,
            m.train_accuracy,
            m.val_accuracy,
            m.wall_seconds,
            if m.improved { " *" } else { "" }
        );
        Ok(())
    });
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(log, "aborted: {e}");
            atomic_write(&out.join("train.log"), log.as_bytes())?;
            return Err(e);
        }
    };
    outcome.model.save(&ckpt)?;
    atomic_write(&metrics_path, metrics_csv(&outcome.history).as_bytes())?;
    let json = summary_json(&outcome.summary, cfg.train.alpha, cfg.train.beta, &cfg.portable_entries());
    atomic_write(&out.join("summary.json"), json.as_bytes())?;
    let _ = writeln!(log, "finished {} ({:?})", unix_time(), outcome.summary.stop_reason);
    atomic_write(&out.join("train.log"), log.as_bytes())?;
    let s = &outcome.summary;
    let _ = writeln!(
        stdout,
        "trained {} epochs ({:?}); best epoch {} with {} loss {:.6}; wrote {}",
        s.epochs_run,
        s.stop_reason,
        s.best_epoch,
        s.monitored,
        s.best_monitored_loss,
        ckpt.display()
    );
    Ok(())
}

fn unix_time() -> String {
    let d = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default();
    format!("unix {}.{:03}", d.as_secs(), d.subsec_millis())
}

/// Text block printed by `eval`.
pub fn eval_text(rep: &EvalReport) -> String {
    let mut s = String::new();
    let _ = match rep.mode {
        EvalMode::AudioVisual => writeln!(s, "mode: audio-visual (both streams fed)"),
        EvalMode::VideoOnly => writeln!(s, "mode: video-only (audio stream replaced by all-zero frames)"),
    };
    let _ = writeln!(s, "samples: {}", rep.samples);
    let _ = writeln!(s, "accuracy: {:.6}", rep.accuracy);
    let _ = writeln!(s, "aux_v accuracy: {:.6}", rep.aux_v_accuracy);
    let _ = writeln!(s, "confusion (rows true, columns predicted):");
    for row in &rep.confusion {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
        let _ = writeln!(s, "{}", cells.join(""));
    }
    s
}

fn run_eval(cfg: &RunConfig, stdout: &mut dyn std::io::Write) -> Result<()> {
    let ckpt = require(&cfg.checkpoint, "checkpoint")?;
    let data_path = require(&cfg.data, "data")?;
    if !ckpt.exists() {
        return Err(Error::io(ckpt, std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found")));
    }
    ensure_exists(data_path, ".manifest")?;
    let model = FusionModel::load(ckpt)?;
    let ds = data::load(data_path)?;
    let rep = evaluate(&model, &ds, cfg.mode)?;
    if let Some(out) = &cfg.out {
        prepare_out(out, cfg)?;
        let mut json = serde_json::to_string_pretty(&rep).expect("report is serializable");
        json.push('\n');
        atomic_write(&out.join("eval.json"), json.as_bytes())?;
    }
    let _ = stdout.write_all(eval_text(&rep).as_bytes());
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = stdout.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
