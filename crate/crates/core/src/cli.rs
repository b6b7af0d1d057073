//! The `tfmamba` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench;
use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{self, Dataset, GenerateConfig, Split};
use crate::error::{Error, Result};
use crate::harness::{self, CorruptionMode, Metrics};
use crate::model::{self, TfMamba};

pub const CONFIG_SNAPSHOT: &str = "config.resolved.toml";
pub const CHECKPOINT: &str = "checkpoint.tfck";
pub const BEST_CHECKPOINT: &str = "best.tfck";
pub const GRADCHECK_RTOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "tfmamba", version, about = "Text-enhanced fusion Mamba: data, training, evaluation and cost tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Named preset: mosi, mosei, sims or desk.
    #[arg(long, short)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset directory; generated in memory when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Config override, e.g. `train.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Generate(Common),
    /// Train and write checkpoints, loss curve and config snapshot.
    Train(Common),
    /// Evaluate a checkpoint on the test split at one corruption setting.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fixed missing rate, one of 0.0, 0.1, …, 0.9.
        #[arg(long)]
        rate: Option<f64>,
        /// Erase whole modalities, e.g. `t` or `v,a`.
        #[arg(long)]
        missing: Option<String>,
    },
    /// Metrics at every missing rate plus their average.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Weights to evaluate; freshly initialized weights when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Parameter, MAC and timing report.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        /// Lengths for the TF-Mamba vs TF-Trans table.
        #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64, 128, 256, 512])]
        lengths: Vec<usize>,
        /// Skip wall-clock timing, leaving a fully deterministic report.
        #[arg(long)]
        no_timing: bool,
    },
    /// Finite-difference check of every trainable parameter.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = crate::numerics::DEFAULT_EPS)]
        eps: f64,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate(c) | Command::Train(c) => c,
            Command::Eval { common, .. }
            | Command::Sweep { common, .. }
            | Command::Bench { common, .. }
            | Command::Gradcheck { common, .. } => common,
        }
    }
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(d) = &self.data {
            overrides.push(format!("data.path={}", toml_str(d)));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("output_dir={}", toml_str(o)));
        }
        overrides.extend(self.overrides.iter().cloned());
        RunConfig::resolve(self.preset.as_deref(), self.config.as_deref(), &overrides)
    }
}

fn toml_str(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn main_with(args: impl IntoIterator<Item = impl Into<std::ffi::OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cmd: &Command) -> Result<()> {
    let cfg = cmd.common().resolve()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join(CONFIG_SNAPSHOT), cfg.to_toml()?)?;
    match cmd {
        Command::Generate(_) => cmd_generate(&cfg, &out),
        Command::Train(_) => cmd_train(&cfg, &out),
        Command::Eval {
            checkpoint,
            rate,
            missing,
            ..
        } => cmd_eval(&cfg, &out, checkpoint, *rate, missing.as_deref()),
        Command::Sweep { checkpoint, .. } => cmd_sweep(&cfg, &out, checkpoint.as_deref()),
        Command::Bench {
            reps,
            warmup,
            lengths,
            no_timing,
            ..
        } => cmd_bench(&cfg, &out, lengths, (!no_timing).then_some((*warmup, *reps))),
        Command::Gradcheck { batch, eps, .. } => cmd_gradcheck(&cfg, &out, *batch, *eps),
    }
}

fn generate_config(cfg: &RunConfig) -> GenerateConfig {
    GenerateConfig {
        samples: cfg.data.samples,
        shapes: cfg.data.shapes,
        seed: cfg.data.seed,
        snr: cfg.data.snr,
        label_range: cfg.data.label_range,
    }
}

/// The configured dataset: loaded from `data.path`, else generated.
pub fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = match &cfg.data.path {
        Some(p) => {
            if !p.join(data::MANIFEST).is_file() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("no dataset at {} (missing {})", p.display(), data::MANIFEST),
                )));
            }
            Dataset::load(p)?
        }
        None => data::generate(&generate_config(cfg))?,
    };
    Ok(ds)
}

/// The model for `cfg` sized to the dataset, optionally restored from a
/// checkpoint.
pub fn build_model(cfg: &RunConfig, ds: &Dataset, ckpt: Option<&Path>) -> Result<TfMamba> {
    let mut model = TfMamba::new(&cfg.model, ds.manifest.shapes, cfg.seed)?;
    if let Some(p) = ckpt {
        checkpoint::restore(p, &mut model.store)?;
    }
    Ok(model)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::invalid(format!("json: {e}")))?;
    fs::write(path, s + "\n")?;
    Ok(())
}

fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = data::generate(&generate_config(cfg))?;
    ds.save(out)?;
    ds.export_labels_csv(&out.join("labels.csv"))?;
    let sp = ds.manifest.splits;
    println!(
        "wrote {} samples (train {}, valid {}, test {}) to {}",
        ds.samples.len(),
        sp.train,
        sp.valid,
        sp.test,
        out.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = dataset(cfg)?;
    let mut model = build_model(cfg, &ds, None)?;
    let mut stdout = std::io::stdout();
    let report = harness::train(
        &mut model,
        ds.split(Split::Train),
        ds.split(Split::Valid),
        &ds.unknown_text,
        &cfg.train,
        cfg.seed,
        |e| {
            let valid = e.valid_mae.map(|m| format!(" valid_mae {m:.4}")).unwrap_or_default();
            let _ = writeln!(stdout, "epoch {:>4} loss {:.5} task {:.5} rec {:.5}{valid}", e.epoch, e.loss, e.task, e.rec);
        },
    )?;
    checkpoint::save_checkpoint(&out.join(CHECKPOINT), &model.store)?;
    if let Some(best) = &report.best {
        checkpoint::save_checkpoint(&out.join(BEST_CHECKPOINT), best)?;
    }
    report.write_curve_csv(&out.join("loss.csv"))?;
    println!(
        "{} steps; {} params; checkpoint sha256 {}",
        report.steps,
        model.num_params(),
        checkpoint::file_sha256(&out.join(CHECKPOINT))?
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    checkpoint: String,
    mode: &'a CorruptionMode,
    samples: usize,
    metrics: Metrics,
}

fn cmd_eval(cfg: &RunConfig, out: &Path, ckpt: &Path, rate: Option<f64>, missing: Option<&str>) -> Result<()> {
    let mut ec = cfg.eval.clone();
    if let Some(r) = rate {
        ec.missing_rate = r;
        ec.complete_missing = None;
    }
    if let Some(m) = missing {
        ec.complete_missing = Some(m.to_string());
    }
    let mode = ec.mode()?;
    let ds = dataset(cfg)?;
    let model = build_model(cfg, &ds, Some(ckpt))?;
    let test = ds.split(Split::Test);
    let e = harness::evaluate(
        &model.net,
        &model.store,
        test,
        &ds.unknown_text,
        &mode,
        (cfg.seed, 0),
        ds.manifest.label_range,
    )?;
    let m = &e.metrics;
    println!(
        "Acc-7 {:.4} Acc-5 {:.4} Acc-2 {:.4}/{:.4} F1 {:.4}/{:.4} MAE {:.4} Corr {:.4}",
        m.acc7, m.acc5, m.acc2_pos, m.acc2_nonneg, m.f1_pos, m.f1_nonneg, m.mae, m.corr
    );
    write_json(
        &out.join("eval.json"),
        &EvalRecord {
            checkpoint: ckpt.display().to_string(),
            mode: &mode,
            samples: test.len(),
            metrics: e.metrics.clone(),
        },
    )
}

fn cmd_sweep(cfg: &RunConfig, out: &Path, ckpt: Option<&Path>) -> Result<()> {
    let ds = dataset(cfg)?;
    let model = build_model(cfg, &ds, ckpt)?;
    let report = harness::evaluate_sweep(
        &model.net,
        &model.store,
        ds.split(Split::Test),
        &ds.unknown_text,
        cfg.seed,
        ds.manifest.label_range,
    )?;
    report.write(out, "sweep")?;
    print!("{}", report.to_csv()?);
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, out: &Path, lengths: &[usize], timing: Option<(usize, usize)>) -> Result<()> {
    let ds = dataset(cfg)?;
    let model = build_model(cfg, &ds, None)?;
    let sample = harness::corrupt_sample(
        &ds.samples[0],
        &ds.unknown_text,
        &CorruptionMode::TestFixed(0.0),
        (cfg.seed, 0, 0),
    )?;
    let report = bench::cost_report(&model, &sample, lengths, timing)?;
    fs::write(out.join("cost.json"), report.to_json()? + "\n")?;
    let table = report.to_table();
    fs::write(out.join("cost.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct GradcheckRecord {
    rtol: f64,
    eps: f64,
    coordinates: usize,
    max_rel_error: f64,
    worst: String,
    per_param: Vec<(String, f64)>,
}

fn cmd_gradcheck(cfg: &RunConfig, out: &Path, batch: usize, eps: f64) -> Result<()> {
    let ds = dataset(cfg)?;
    let mut model = build_model(cfg, &ds, None)?;
    let train = ds.split(Split::Train);
    if batch == 0 || batch > train.len() {
        return Err(Error::invalid(format!("batch must lie in 1..={}", train.len())));
    }
    let xs = harness::corrupt(&train[..batch], &ds.unknown_text, &CorruptionMode::TrainUncertain, cfg.seed, 0)?;
    let report = model::gradcheck(&mut model, &xs, cfg.train.lambda, eps)?;
    let worst = format!("{}[{}]", report.worst_param.as_deref().unwrap_or("-"), report.worst_index);
    println!(
        "{} coordinates; max relative error {:.3e} at {worst} (rtol {GRADCHECK_RTOL:e})",
        report.coordinates, report.max_rel_error
    );
    write_json(
        &out.join("gradcheck.json"),
        &GradcheckRecord {
            rtol: GRADCHECK_RTOL,
            eps,
            coordinates: report.coordinates,
            max_rel_error: report.max_rel_error,
            worst,
            per_param: report.per_param.clone(),
        },
    )?;
    report.into_result(GRADCHECK_RTOL).map(|_| ())
}
