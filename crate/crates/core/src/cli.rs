//! Command-line driver.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::attention::{default_retain, AttentionConfig, AttentionKind};
use crate::data::{gen_synthetic, load_sequence, sample_windows, save_sequence, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, export_attention, horizon_frames, load_checkpoint, save_checkpoint, Checkpoint,
    EvalWindow, Metric, EVAL_FPS, LONG_HORIZONS_MS, SHORT_HORIZONS_MS,
};
use crate::model::{
    Forecaster, ModelConfig, ModelParams, PoseSequence, Representation, ZeroVelocity,
};
use crate::numerics::{compare_gradients, finite_diff_gradient};
use crate::predictor::GcnConfig;
use crate::training::{self, loss_log_csv, LossKind, Sample, TrainConfig};

/// Flat run configuration read by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub m: usize,
    pub t: usize,
    pub d: usize,
    pub hidden: usize,
    pub kernel1: usize,
    pub kernel2: usize,
    /// DCT coefficients kept; derived from `m + t` when absent.
    pub retain: Option<usize>,
    pub attention: AttentionKind,
    pub blocks: usize,
    pub width: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Training window length (history plus `T` target frames).
    pub n_train: usize,
    pub stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tc = TrainConfig::default();
        let gc = GcnConfig::default();
        Self {
            m: 10,
            t: 10,
            d: 256,
            hidden: 256,
            kernel1: 6,
            kernel2: 5,
            retain: None,
            attention: AttentionKind::Motion,
            blocks: gc.blocks,
            width: gc.width,
            dropout: gc.dropout,
            lr: tc.lr,
            epochs: tc.epochs,
            batch_size: tc.batch_size,
            gamma: tc.gamma,
            beta1: tc.beta1,
            beta2: tc.beta2,
            eps: tc.eps,
            loss: tc.loss,
            seed: tc.seed,
            n_train: 60,
            stride: 1,
        }
    }
}

impl RunConfig {
    pub fn model_config(&self, pose_dim: usize) -> ModelConfig {
        ModelConfig {
            pose_dim,
            attention: AttentionConfig {
                m: self.m,
                t: self.t,
                d: self.d,
                hidden: self.hidden,
                kernels: (self.kernel1, self.kernel2),
                retain: self
                    .retain
                    .unwrap_or_else(|| default_retain(self.m, self.t)),
                kind: self.attention,
            },
            gcn: GcnConfig {
                blocks: self.blocks,
                width: self.width,
                dropout: self.dropout,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            gamma: self.gamma,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            loss: self.loss,
            seed: self.seed,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "motionatt",
    version,
    about = "Attention-based human motion forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic sequences from a JSON recipe.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on every sequence file in a directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Forecast the continuation of a sequence.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        /// Use only the last N frames of the input.
        #[arg(long)]
        history: Option<usize>,
        #[arg(long)]
        attention: Option<PathBuf>,
    },
    /// Horizon-indexed error over a directory of test sequences.
    Eval {
        #[arg(long, required_unless_present = "zero_velocity")]
        checkpoint: Option<PathBuf>,
        /// Evaluate the zero-velocity baseline instead of a model.
        #[arg(long)]
        zero_velocity: bool,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        history: usize,
        /// Comma-separated millisecond horizons.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<u32>>,
        #[arg(long, value_enum, default_value_t = MetricArg::Auto)]
        metric: MetricArg,
        /// Also report the zero-velocity baseline as a column.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Auto,
    Mpjpe,
    Euler,
}

/// Runs the CLI and returns the process exit code.
pub fn cli_main<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), e.to_string());
            1
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            spec,
            out,
            count,
            seed,
        } => synth(&spec, &out, count, seed),
        Command::Train {
            config,
            data,
            out,
            val,
            log,
            seed,
        } => train(&config, &data, &out, val.as_deref(), log.as_deref(), seed),
        Command::Predict {
            checkpoint,
            input,
            out,
            steps,
            history,
            attention,
        } => predict(
            &checkpoint,
            &input,
            &out,
            steps,
            history,
            attention.as_deref(),
        ),
        Command::Eval {
            checkpoint,
            zero_velocity,
            test,
            history,
            horizons,
            metric,
            baseline,
            out,
        } => {
            let forecaster: Box<dyn Forecaster> = match (&checkpoint, zero_velocity) {
                (_, true) => Box::new(ZeroVelocity),
                (Some(dir), false) => Box::new(load_checkpoint(dir)?.model()?),
                (None, false) => {
                    return Err(Error::invalid(
                        "either --checkpoint or --zero-velocity is required",
                    ))
                }
            };
            eval(
                forecaster.as_ref(),
                &test,
                history,
                horizons,
                metric,
                baseline,
                out.as_deref(),
            )
        }
        Command::Gradcheck {
            seed,
            step,
            tolerance,
        } => gradcheck(seed, step, tolerance),
    }
}

fn synth(spec_path: &Path, out: &Path, count: usize, seed: Option<u64>) -> Result<()> {
    let spec: SyntheticSpec = serde_json::from_slice(&fs::read(spec_path)?)?;
    let base = seed.unwrap_or(spec.seed);
    fs::create_dir_all(out)?;
    for i in 0..count {
        let seq = gen_synthetic(&spec, base.wrapping_add(i as u64))?;
        save_sequence(&seq, &out.join(format!("synth_{i:04}.seq")))?;
    }
    println!("wrote {count} sequences to {}", out.display());
    Ok(())
}

/// All sequence files in `dir`, sorted by name, tagged with the file stem.
fn load_dir(dir: &Path) -> Result<Vec<(String, PoseSequence)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "seq"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptySequence(format!(
            "no .seq files in {}",
            dir.display()
        )));
    }
    paths
        .into_iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((stem, load_sequence(&p)?))
        })
        .collect()
}

fn windows_of(seqs: &[(String, PoseSequence)], len: usize, stride: usize) -> Vec<PoseSequence> {
    seqs.iter()
        .flat_map(|(_, s)| sample_windows(s, len, stride))
        .collect()
}

fn train(
    config: &Path,
    data: &Path,
    out: &Path,
    val: Option<&Path>,
    log: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let mut run: RunConfig = serde_json::from_slice(&fs::read(config)?)?;
    if let Some(s) = seed {
        run.seed = s;
    }
    let seqs = load_dir(data)?;
    let pose_dim = seqs[0].1.pose_dim();
    let model_cfg = run.model_config(pose_dim);
    let train_cfg = run.train_config();
    let windows = windows_of(&seqs, run.n_train, run.stride.max(1));
    if windows.is_empty() {
        return Err(Error::invalid(format!(
            "no sequence has {} frames",
            run.n_train
        )));
    }
    let val_windows = match val {
        Some(dir) => Some(windows_of(&load_dir(dir)?, run.n_train, run.stride.max(1))),
        None => None,
    };
    let params = ModelParams::init(&model_cfg, run.seed)?;
    let outcome = training::train_from(
        params,
        &windows,
        val_windows.as_deref(),
        &model_cfg,
        &train_cfg,
        |e, _| match e.val_loss {
            Some(v) => println!(
                "epoch {} lr {:e} train {:.6} val {:.6}",
                e.epoch, e.lr, e.train_loss, v
            ),
            None => println!("epoch {} lr {:e} train {:.6}", e.epoch, e.lr, e.train_loss),
        },
    )?;
    save_checkpoint(
        &Checkpoint {
            config: model_cfg,
            params: outcome.params,
            seed: run.seed,
            epoch: outcome.epoch,
        },
        out,
    )?;
    if let Some(path) = log {
        fs::write(path, loss_log_csv(&outcome.log))?;
    }
    Ok(())
}

fn predict(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    steps: usize,
    history: Option<usize>,
    attention: Option<&Path>,
) -> Result<()> {
    let model = load_checkpoint(checkpoint)?.model()?;
    let mut seq = load_sequence(input)?;
    if let Some(n) = history {
        if n > seq.len() {
            return Err(Error::InsufficientHistory {
                needed: n,
                got: seq.len(),
            });
        }
        seq = seq.slice(seq.len() - n, seq.len())?;
    }
    let result = model.predict_recursive(&seq, steps)?;
    save_sequence(
        &PoseSequence::new(result.frames, seq.fps(), seq.repr())?,
        out,
    )?;
    if let Some(path) = attention {
        let cfg = &model.config.attention;
        fs::write(
            path,
            export_attention(&result.attention, seq.len(), cfg.m, cfg.t)?,
        )?;
    }
    Ok(())
}

fn eval(
    forecaster: &dyn Forecaster,
    test: &Path,
    history: usize,
    horizons: Option<Vec<u32>>,
    metric: MetricArg,
    baseline: bool,
    out: Option<&Path>,
) -> Result<()> {
    let seqs = load_dir(test)?;
    let fps = seqs[0].1.fps();
    if (fps - EVAL_FPS).abs() > 1e-9 {
        eprintln!("warning: test data is at {fps} fps, horizons assume the data rate");
    }
    let ms = horizons.unwrap_or_else(|| {
        SHORT_HORIZONS_MS
            .iter()
            .chain(&LONG_HORIZONS_MS)
            .copied()
            .collect()
    });
    let horizons = horizon_frames(&ms, fps)?;
    let metric = match metric {
        MetricArg::Mpjpe => Metric::Mpjpe,
        MetricArg::Euler => Metric::EulerAngle,
        MetricArg::Auto => match seqs[0].1.repr() {
            Representation::Coords3d => Metric::Mpjpe,
            Representation::Expmap => Metric::EulerAngle,
        },
    };
    // file stems of the form <action>_<n> group by action
    let windows: Vec<EvalWindow> = seqs
        .into_iter()
        .map(|(stem, sequence)| {
            let action = stem
                .rsplit_once('_')
                .map(|(a, _)| a.to_string())
                .unwrap_or(stem);
            EvalWindow { action, sequence }
        })
        .collect();
    let mut report = evaluate(forecaster, &windows, history, &horizons, metric)?;
    if baseline {
        let zv = evaluate(&ZeroVelocity, &windows, history, &horizons, metric)?;
        report.add_column("zero_velocity", zv.mean_error)?;
    }
    let csv = report.to_csv();
    match out {
        Some(path) => fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    if report.skipped > 0 {
        eprintln!("skipped {} short sequences", report.skipped);
    }
    Ok(())
}

/// Finite-difference check of every parameter of [`ModelConfig::tiny`] under both losses.
pub fn run_gradcheck(
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<Vec<(LossKind, crate::numerics::GradCheckReport)>> {
    use rand::{Rng, SeedableRng};
    let cfg = ModelConfig::tiny();
    let params = ModelParams::init(&cfg, seed)?;
    let span = cfg.attention.span();
    let n = span + 4 + cfg.attention.t;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
    let frames = crate::numerics::Matrix::from_fn(n, cfg.pose_dim, |r, c| {
        (0.3 * r as f64 + c as f64).sin() + 0.1 * rng.random_range(-1.0..1.0)
    });
    let window = PoseSequence::new(frames, 25.0, Representation::Expmap)?;
    let sample = Sample::from_window(&window, &cfg)?;
    let mut reports = Vec::new();
    for kind in [LossKind::Mpjpe3d, LossKind::AngleL1] {
        let (_, grads) = training::backward(&cfg, &params, &sample, kind, None)?;
        let numeric = finite_diff_gradient(
            |p: &ModelParams| training::sample_loss(&cfg, p, &sample, kind).unwrap_or(f64::NAN),
            &params,
            step,
        );
        reports.push((kind, compare_gradients(&grads, &numeric, step, tolerance)));
    }
    Ok(reports)
}

fn gradcheck(seed: u64, step: f64, tolerance: f64) -> Result<()> {
    let reports = run_gradcheck(seed, step, tolerance)?;
    let mut ok = true;
    for (kind, report) in &reports {
        for p in &report.params {
            println!(
                "{kind:?} {} max_rel_error={:.3e} {}",
                p.name,
                p.max_rel_error,
                if p.passed { "ok" } else { "FAIL" }
            );
        }
        ok &= report.passed();
    }
    if ok {
        println!("gradcheck passed");
        Ok(())
    } else {
        Err(Error::NumericFailure {
            location: "gradient check exceeded tolerance".into(),
        })
    }
}
