//! Losses, gradients, Adam and the epoch loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{backward as model_backward, forward, ModelConfig, ModelParams, PoseSequence};
use crate::numerics::{Matrix, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean per-joint Euclidean distance on 3D coordinates.
    Mpjpe3d,
    /// Mean absolute error on angles.
    AngleL1,
}

fn check_same_shape(pred: &Matrix, truth: &Matrix) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::invalid(format!(
            "prediction is {:?}, ground truth is {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    Ok(())
}

/// MPJPE over all frames of `(M+T) x K` matrices with `K = 3J`.
pub fn mpjpe_loss(pred: &Matrix, truth: &Matrix, joints: usize) -> Result<f64> {
    Ok(mpjpe_with_grad(pred, truth, joints, false)?.0)
}

fn mpjpe_with_grad(
    pred: &Matrix,
    truth: &Matrix,
    joints: usize,
    want_grad: bool,
) -> Result<(f64, Option<Matrix>)> {
    check_same_shape(pred, truth)?;
    if joints == 0 || pred.cols() != 3 * joints {
        return Err(Error::invalid(format!(
            "pose dimension {} is not 3 x {joints} joints",
            pred.cols()
        )));
    }
    let frames = pred.rows();
    let scale = 1.0 / (joints * frames) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Matrix::zeros(frames, pred.cols()));
    for t in 0..frames {
        let (p, q) = (pred.row(t), truth.row(t));
        for j in 0..joints {
            let d = [
                p[3 * j] - q[3 * j],
                p[3 * j + 1] - q[3 * j + 1],
                p[3 * j + 2] - q[3 * j + 2],
            ];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            total += norm;
            // subgradient of the norm at zero is zero
            if let (Some(g), true) = (grad.as_mut(), norm > 0.0) {
                let row = g.row_mut(t);
                for a in 0..3 {
                    row[3 * j + a] = scale * d[a] / norm;
                }
            }
        }
    }
    Ok((total * scale, grad))
}

/// Mean absolute error over all entries of `(M+T) x K` matrices.
pub fn angle_l1_loss(pred: &Matrix, truth: &Matrix) -> Result<f64> {
    Ok(angle_l1_with_grad(pred, truth, false)?.0)
}

fn angle_l1_with_grad(
    pred: &Matrix,
    truth: &Matrix,
    want_grad: bool,
) -> Result<(f64, Option<Matrix>)> {
    check_same_shape(pred, truth)?;
    let scale = 1.0 / (pred.rows() * pred.cols()) as f64;
    let diff = pred.sub(truth);
    let loss = diff.as_slice().iter().map(|v| v.abs()).sum::<f64>() * scale;
    let grad = want_grad.then(|| {
        diff.map(|v| {
            if v > 0.0 {
                scale
            } else if v < 0.0 {
                -scale
            } else {
                0.0
            }
        })
    });
    Ok((loss, grad))
}

/// Loss and gradient w.r.t. the frame-major prediction.
pub fn loss_with_grad(kind: LossKind, pred: &Matrix, truth: &Matrix) -> Result<(f64, Matrix)> {
    let (loss, grad) = match kind {
        LossKind::Mpjpe3d => mpjpe_with_grad(pred, truth, pred.cols() / 3, true)?,
        LossKind::AngleL1 => angle_l1_with_grad(pred, truth, true)?,
    };
    Ok((loss, grad.expect("gradient requested")))
}

pub fn loss_value(kind: LossKind, pred: &Matrix, truth: &Matrix) -> Result<f64> {
    match kind {
        LossKind::Mpjpe3d => mpjpe_loss(pred, truth, pred.cols() / 3),
        LossKind::AngleL1 => angle_l1_loss(pred, truth),
    }
}

/// One training example: a history and the `M + T` frames it should reconstruct.
#[derive(Debug, Clone)]
pub struct Sample {
    /// `K x N`
    history: Matrix,
    /// `(M + T) x K`
    target: Matrix,
}

impl Sample {
    /// Splits a window into `len − T` history frames and the trailing `T`
    /// future frames; the target covers the last `M` history frames plus the future.
    pub fn from_window(window: &PoseSequence, cfg: &ModelConfig) -> Result<Self> {
        let (m, t) = (cfg.attention.m, cfg.attention.t);
        let n = window.len();
        if n < 2 * t + m {
            return Err(Error::InsufficientHistory {
                needed: 2 * t + m,
                got: n,
            });
        }
        let history = window.frames().rows_range(0, n - t).transpose();
        let target = window.frames().rows_range(n - t - m, n);
        Ok(Self { history, target })
    }

    pub fn target(&self) -> &Matrix {
        &self.target
    }
}

/// Forward-only loss of one sample.
pub fn sample_loss(
    cfg: &ModelConfig,
    params: &ModelParams,
    sample: &Sample,
    kind: LossKind,
) -> Result<f64> {
    let (window, _) = forward(cfg, params, &sample.history, None)?;
    loss_value(kind, &window.transpose(), &sample.target)
}

/// Loss of one sample and its gradient w.r.t. every parameter tensor.
pub fn backward(
    cfg: &ModelConfig,
    params: &ModelParams,
    sample: &Sample,
    kind: LossKind,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, ModelParams)> {
    let (window, trace) = forward(cfg, params, &sample.history, dropout_rng)?;
    let (loss, d_pred) = loss_with_grad(kind, &window.transpose(), &sample.target)?;
    let grads = model_backward(cfg, params, &trace, &d_pred.transpose())?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.0005,
            epochs: 50,
            batch_size: 32,
            gamma: default_gamma(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            loss: LossKind::Mpjpe3d,
            seed: 0,
        }
    }
}

/// Per-epoch decay reaching one tenth of the initial rate at epoch 50.
pub fn default_gamma() -> f64 {
    0.1f64.powf(1.0 / 49.0)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("decay factor must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be positive"));
        }
        Ok(())
    }
}

/// `lr₀ · γ^(epoch − 1)` for 1-based epochs.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let e = epoch.max(1) - 1;
    cfg.lr * cfg.gamma.powi(e as i32)
}

/// Adam moment accumulators mirroring a parameter set.
#[derive(Debug, Clone)]
pub struct OptimizerState<P> {
    pub m: P,
    pub v: P,
    pub step: u64,
}

impl<P: Parameters> OptimizerState<P> {
    pub fn new(params: &P) -> Self {
        let mut zero = params.clone();
        for t in zero.tensors_mut() {
            t.fill(0.0);
        }
        Self {
            m: zero.clone(),
            v: zero,
            step: 0,
        }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step<P: Parameters>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState<P>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let gshapes: Vec<_> = grads.tensors().iter().map(|(_, g)| g.shape()).collect();
    let pshapes: Vec<_> = params.tensors().iter().map(|(_, p)| p.shape()).collect();
    if gshapes != pshapes {
        return Err(Error::invalid("gradient shapes do not match parameters"));
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, (_, g)), m), v) in params.tensors_mut().into_iter().zip(gs).zip(ms).zip(vs) {
        let it = p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice().iter_mut())
            .zip(v.as_mut_slice().iter_mut());
        for (((p, &g), m), v) in it {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were returned.
    pub epoch: usize,
}

/// Trains from a fresh initialisation seeded by `train_cfg.seed`.
///
/// With a validation set the parameters of the epoch with the lowest
/// validation loss are returned, otherwise the final ones.
pub fn train(
    windows: &[PoseSequence],
    validation: Option<&[PoseSequence]>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = ModelParams::init(model_cfg, train_cfg.seed)?;
    train_from(params, windows, validation, model_cfg, train_cfg, |_, _| {})
}

/// Like [`train`] but from given parameters, calling `on_epoch` with the
/// log entry and current parameters after each epoch.
pub fn train_from(
    mut params: ModelParams,
    windows: &[PoseSequence],
    validation: Option<&[PoseSequence]>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &ModelParams),
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::invalid("no training windows"));
    }
    let samples = windows
        .iter()
        .map(|w| Sample::from_window(w, model_cfg))
        .collect::<Result<Vec<_>>>()?;
    let val_samples = validation
        .map(|v| {
            v.iter()
                .map(|w| Sample::from_window(w, model_cfg))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;

    let mut state = OptimizerState::new(&params);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x5eed_5eed);
    let mut log = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=train_cfg.epochs {
        let lr = lr_schedule(epoch, train_cfg);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(train_cfg.batch_size).enumerate() {
            let mut grad_sum = params.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut drop_rng = ChaCha8Rng::seed_from_u64(
                    train_cfg
                        .seed
                        .wrapping_mul(0x9e37_79b9)
                        .wrapping_add((epoch * samples.len() + i) as u64),
                );
                let (loss, g) = backward(
                    model_cfg,
                    &params,
                    &samples[i],
                    train_cfg.loss,
                    Some(&mut drop_rng),
                )
                .map_err(|e| Error::numeric(format!("epoch {epoch} batch {b}: {e}")))?;
                batch_loss += loss;
                for (acc, (_, gi)) in grad_sum.tensors_mut().into_iter().zip(g.tensors()) {
                    acc.add_assign(gi);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for t in grad_sum.tensors_mut() {
                t.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
            }
            adam_step(&mut params, &grad_sum, &mut state, lr, train_cfg)?;
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / samples.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::numeric(format!(
                "epoch {epoch}: training loss is not finite"
            )));
        }
        let val_loss = match &val_samples {
            Some(vs) if !vs.is_empty() => {
                let total = vs
                    .iter()
                    .map(|s| sample_loss(model_cfg, &params, s, train_cfg.loss))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .sum::<f64>();
                Some(total / vs.len() as f64)
            }
            _ => None,
        };
        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(bv, _, _)| v < *bv) {
                best = Some((v, epoch, params.clone()));
            }
        }
        let entry = EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
        };
        on_epoch(&entry, &params);
        log.push(entry);
    }
    Ok(match best {
        Some((_, epoch, p)) => TrainOutcome {
            params: p,
            log,
            epoch,
        },
        None => TrainOutcome {
            params,
            log,
            epoch: train_cfg.epochs,
        },
    })
}

/// `epoch,lr,train_loss[,val_loss]`
pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let with_val = log.iter().any(|e| e.val_loss.is_some());
    let mut out = String::from(if with_val {
        "epoch,lr,train_loss,val_loss\n"
    } else {
        "epoch,lr,train_loss\n"
    });
    for e in log {
        let _ = write!(out, "{},{:e},{}", e.epoch, e.lr, e.train_loss);
        if with_val {
            let _ = write!(
                out,
                ",{}",
                e.val_loss.map_or(String::new(), |v| v.to_string())
            );
        }
        out.push('\n');
    }
    out
}

pub fn write_loss_log(log: &[EpochLog], path: &Path) -> Result<()> {
    std::fs::write(path, loss_log_csv(log))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::NamedTensors;
    use rand::Rng;

    #[test]
    fn mpjpe_examples() {
        let truth = Matrix::from_fn(5, 6, |r, c| (r * 6 + c) as f64);
        assert_eq!(mpjpe_loss(&truth, &truth, 2).unwrap(), 0.0);
        let mut pred = truth.clone();
        pred[(2, 3)] += 3.0;
        pred[(2, 4)] += 4.0;
        assert!((mpjpe_loss(&pred, &truth, 2).unwrap() - 0.5).abs() < 1e-15);
        assert!(mpjpe_loss(&pred, &truth, 3).is_err());
        assert!(mpjpe_loss(&pred.rows_range(0, 4), &truth, 2).is_err());
    }

    #[test]
    fn mpjpe_matches_loop_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let a = Matrix::from_fn(7, 9, |_, _| r.random_range(-10.0..10.0));
        let b = Matrix::from_fn(7, 9, |_, _| r.random_range(-10.0..10.0));
        let mut s = 0.0;
        for t in 0..7 {
            for j in 0..3 {
                let mut sq = 0.0;
                for x in 0..3 {
                    sq += (a[(t, 3 * j + x)] - b[(t, 3 * j + x)]).powi(2);
                }
                s += sq.sqrt();
            }
        }
        assert!((mpjpe_loss(&a, &b, 3).unwrap() - s / 21.0).abs() < 1e-12);
    }

    #[test]
    fn angle_l1_examples() {
        let truth = Matrix::from_fn(3, 4, |r, c| (r + c) as f64 * 0.1);
        assert_eq!(angle_l1_loss(&truth, &truth).unwrap(), 0.0);
        let mut pred = truth.clone();
        pred[(1, 2)] += 2.0;
        assert!((angle_l1_loss(&pred, &truth).unwrap() - 2.0 / 12.0).abs() < 1e-15);

        let mut r = ChaCha8Rng::seed_from_u64(2);
        let a = Matrix::from_fn(6, 5, |_, _| r.random_range(-3.0..3.0));
        let b = Matrix::from_fn(6, 5, |_, _| r.random_range(-3.0..3.0));
        let mut s = 0.0;
        for t in 0..6 {
            for k in 0..5 {
                s += (a[(t, k)] - b[(t, k)]).abs();
            }
        }
        assert!((angle_l1_loss(&a, &b).unwrap() - s / 30.0).abs() < 1e-12);
        assert!(angle_l1_loss(&a, &b.rows_range(0, 5)).is_err());
    }

    #[test]
    fn zero_error_has_zero_gradient() {
        let x = Matrix::from_fn(4, 6, |r, c| (r as f64).sin() + c as f64);
        let (l, g) = loss_with_grad(LossKind::Mpjpe3d, &x, &x).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        let (_, g) = loss_with_grad(LossKind::AngleL1, &x, &x).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert!((lr_schedule(1, &cfg) - 0.0005).abs() < 1e-12);
        assert!((lr_schedule(50, &cfg) - 0.00005).abs() < 1e-12);
        assert!((lr_schedule(25, &cfg) - 0.0005 * 0.1f64.powf(24.0 / 49.0)).abs() < 1e-15);
    }

    fn scalar(v: f64) -> NamedTensors {
        NamedTensors(vec![("theta".into(), Matrix::new(1, 1, vec![v]).unwrap())])
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let cfg = TrainConfig::default();
        let mut p = scalar(1.5);
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &scalar(0.0), &mut s, 0.1, &cfg).unwrap();
        assert_eq!(p.0[0].1[(0, 0)], 1.5);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut p = scalar(0.0);
        let mut s = OptimizerState::new(&p);
        adam_step(&mut p, &scalar(3.7), &mut s, 0.01, &cfg).unwrap();
        assert!((p.0[0].1[(0, 0)] + 0.01).abs() < 1e-8);
    }

    #[test]
    fn adam_minimises_square() {
        let cfg = TrainConfig::default();
        let mut p = scalar(1.0);
        let mut s = OptimizerState::new(&p);
        for _ in 0..100 {
            let theta = p.0[0].1[(0, 0)];
            adam_step(&mut p, &scalar(2.0 * theta), &mut s, 0.1, &cfg).unwrap();
        }
        assert!(p.0[0].1[(0, 0)].abs() < 0.1, "theta = {}", p.0[0].1[(0, 0)]);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let cfg = TrainConfig::default();
        let mut p = scalar(1.0);
        let mut s = OptimizerState::new(&p);
        let g = NamedTensors(vec![("theta".into(), Matrix::zeros(1, 2))]);
        assert!(adam_step(&mut p, &g, &mut s, 0.1, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            lr: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            gamma: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            beta1: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn csv_layout() {
        let log = vec![
            EpochLog {
                epoch: 1,
                lr: 0.0005,
                train_loss: 2.0,
                val_loss: None,
            },
            EpochLog {
                epoch: 2,
                lr: 0.00045,
                train_loss: 1.5,
                val_loss: None,
            },
        ];
        let csv = loss_log_csv(&log);
        assert!(csv.starts_with("epoch,lr,train_loss\n1,5e-4,2\n"), "{csv}");
        let log = vec![EpochLog {
            epoch: 1,
            lr: 0.1,
            train_loss: 2.0,
            val_loss: Some(3.0),
        }];
        assert_eq!(
            loss_log_csv(&log),
            "epoch,lr,train_loss,val_loss\n1,1e-1,2,3\n"
        );
    }
}
