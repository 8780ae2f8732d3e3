//! End-to-end forecaster: attention over the history, last-pose padding,
//! residual DCT prediction, recursive rollout and the zero-velocity baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    attend, attend_backward, AttendTrace, AttentionConfig, AttentionKind, AttentionOutput,
    AttentionParams, ConvEncoderParams,
};
use crate::error::{Error, Result};
use crate::numerics::{DctBasis, Matrix, Parameters};
use crate::predictor::{gcn_forward_traced, GcnConfig, GcnParams, GcnTrace, GraphConvLayer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Coords3d,
    Expmap,
}

impl Representation {
    pub fn token(self) -> &'static str {
        match self {
            Representation::Coords3d => "coords3d",
            Representation::Expmap => "expmap",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        match s {
            "coords3d" => Some(Representation::Coords3d),
            "expmap" => Some(Representation::Expmap),
            _ => None,
        }
    }
}

/// `N x K` pose trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: Matrix,
    fps: f64,
    repr: Representation,
}

impl PoseSequence {
    pub fn new(frames: Matrix, fps: f64, repr: Representation) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if !frames.is_finite() {
            return Err(Error::invalid("pose sequence contains non-finite values"));
        }
        Ok(Self { frames, fps, repr })
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn into_frames(self) -> Matrix {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn pose_dim(&self) -> usize {
        self.frames.cols()
    }

    /// Number of 3-vectors per pose (joint positions or joint rotations).
    pub fn joints(&self) -> usize {
        self.frames.cols() / 3
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn repr(&self) -> Representation {
        self.repr
    }

    /// Frames `start..end` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::invalid(format!(
                "frame range {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        Ok(Self {
            frames: self.frames.rows_range(start, end),
            fps: self.fps,
            repr: self.repr,
        })
    }

    pub fn last_pose(&self) -> &[f64] {
        self.frames.row(self.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub pose_dim: usize,
    pub attention: AttentionConfig,
    pub gcn: GcnConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pose_dim == 0 {
            return Err(Error::invalid("pose dimension must be positive"));
        }
        self.attention.validate()?;
        self.gcn.validate()
    }

    /// Small configuration used by the gradient self-test.
    pub fn tiny() -> Self {
        Self {
            pose_dim: 6,
            attention: AttentionConfig {
                m: 12,
                t: 4,
                d: 8,
                hidden: 8,
                kernels: (6, 5),
                retain: 8,
                kind: AttentionKind::Motion,
            },
            gcn: GcnConfig {
                blocks: 2,
                width: 8,
                dropout: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `None` for frame-wise attention, which has no encoders.
    pub attention: Option<AttentionParams>,
    pub gcn: GcnParams,
}

impl ModelParams {
    /// The predictor draws from its own stream, so both attention variants
    /// share the predictor initialisation for a given seed.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let attention = match cfg.attention.kind {
            AttentionKind::Motion => Some(AttentionParams::init(
                cfg.pose_dim,
                &cfg.attention,
                &mut rng,
            )),
            AttentionKind::FrameWise => None,
        };
        let mut gcn_rng = ChaCha8Rng::seed_from_u64(seed);
        gcn_rng.set_stream(1);
        let gcn = GcnParams::init(cfg.pose_dim, cfg.attention.retain, &cfg.gcn, &mut gcn_rng);
        Ok(Self { attention, gcn })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            attention: self.attention.as_ref().map(|a| AttentionParams {
                query: zero_encoder(&a.query),
                key: zero_encoder(&a.key),
            }),
            gcn: self.gcn.zeros_like(),
        }
    }
}

fn zero_encoder(p: &ConvEncoderParams) -> ConvEncoderParams {
    ConvEncoderParams {
        w1: Matrix::zeros(p.w1.rows(), p.w1.cols()),
        b1: Matrix::zeros(1, p.b1.cols()),
        w2: Matrix::zeros(p.w2.rows(), p.w2.cols()),
        b2: Matrix::zeros(1, p.b2.cols()),
        kernels: p.kernels,
    }
}

fn push_layer<'a>(out: &mut Vec<(String, &'a Matrix)>, prefix: &str, l: &'a GraphConvLayer) {
    out.push((format!("{prefix}.a"), &l.a));
    out.push((format!("{prefix}.w"), &l.w));
    out.push((format!("{prefix}.b"), &l.b));
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        if let Some(att) = &self.attention {
            for (prefix, enc) in [("query", &att.query), ("key", &att.key)] {
                out.push((format!("{prefix}.w1"), &enc.w1));
                out.push((format!("{prefix}.b1"), &enc.b1));
                out.push((format!("{prefix}.w2"), &enc.w2));
                out.push((format!("{prefix}.b2"), &enc.b2));
            }
        }
        push_layer(&mut out, "gcn.input", &self.gcn.input);
        for (i, [l1, l2]) in self.gcn.blocks.iter().enumerate() {
            push_layer(&mut out, &format!("gcn.block{i:02}.0"), l1);
            push_layer(&mut out, &format!("gcn.block{i:02}.1"), l2);
        }
        push_layer(&mut out, "gcn.output", &self.gcn.output);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        if let Some(att) = &mut self.attention {
            for enc in [&mut att.query, &mut att.key] {
                out.extend([&mut enc.w1, &mut enc.b1, &mut enc.w2, &mut enc.b2]);
            }
        }
        for l in self.gcn.layers_mut() {
            out.extend([&mut l.a, &mut l.w, &mut l.b]);
        }
        out
    }
}

/// Repeats the last row of an `M x K` window `t` times.
pub fn pad_last_pose(window: &Matrix, t: usize) -> Result<Matrix> {
    if window.rows() == 0 || window.cols() == 0 {
        return Err(Error::invalid("cannot pad an empty window"));
    }
    if t == 0 {
        return Ok(window.clone());
    }
    let last = window.rows_range(window.rows() - 1, window.rows());
    let mut data = window.as_slice().to_vec();
    for _ in 0..t {
        data.extend_from_slice(last.as_slice());
    }
    Ok(Matrix::from_vec_unchecked(
        window.rows() + t,
        window.cols(),
        data,
    ))
}

/// `T'` copies of the last observed pose.
pub fn zero_velocity_baseline(history: &PoseSequence, frames: usize) -> Matrix {
    let last = history.last_pose();
    Matrix::from_fn(frames, last.len(), |_, c| last[c])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    /// `steps * T` predicted frames, `T' x K`.
    pub frames: Matrix,
    /// One attention output per recursion step.
    pub attention: Vec<AttentionOutput>,
}

pub(crate) struct ForwardTrace {
    history: Matrix,
    attention: AttentionOutput,
    attend: AttendTrace,
    gcn: GcnTrace,
}

/// Single forward pass over a `K x N` history, returning the reconstructed
/// `K x (M + T)` window (last `T` columns are the forecast).
pub(crate) fn forward(
    cfg: &ModelConfig,
    params: &ModelParams,
    history: &Matrix,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(Matrix, ForwardTrace)> {
    let att = &cfg.attention;
    if history.rows() != cfg.pose_dim {
        return Err(Error::invalid(format!(
            "history has pose dimension {}, model expects {}",
            history.rows(),
            cfg.pose_dim
        )));
    }
    let n = history.cols();
    if n < att.span() {
        return Err(Error::InsufficientHistory {
            needed: att.span(),
            got: n,
        });
    }
    let basis = DctBasis::cached(att.span())?;
    let (attention, attend_trace) = attend(history, params.attention.as_ref(), att, &basis)?;

    let query_window = history.cols_range(n - att.m, n);
    let padded = pad_last_pose(&query_window.transpose(), att.t)?.transpose();
    let d = basis.dct_unchecked(&padded, att.retain);

    let dropout = match dropout_rng {
        Some(rng) if cfg.gcn.dropout > 0.0 => {
            Some((cfg.gcn.dropout, rng as &mut dyn rand::RngCore))
        }
        _ => None,
    };
    let (coef, gcn_trace) = gcn_forward_traced(&d, &attention.u, &params.gcn, dropout)?;
    let window = basis.idct_unchecked(&coef);
    if !window.is_finite() {
        return Err(Error::numeric("inverse DCT"));
    }
    Ok((
        window,
        ForwardTrace {
            history: history.clone(),
            attention,
            attend: attend_trace,
            gcn: gcn_trace,
        },
    ))
}

/// Reverse pass from `dL/dwindow` to every parameter.
pub(crate) fn backward(
    cfg: &ModelConfig,
    params: &ModelParams,
    trace: &ForwardTrace,
    d_window: &Matrix,
) -> Result<ModelParams> {
    let att = &cfg.attention;
    let basis = DctBasis::cached(att.span())?;
    // idct is `coef · B_c`, so its adjoint is `· B_cᵀ`
    let d_coef = basis.dct_unchecked(d_window, att.retain);
    let (gcn, d_input) = trace.gcn.backward(&params.gcn, &d_coef);
    let attention = match &params.attention {
        Some(p) => {
            let d_u = d_input.cols_range(att.retain, 2 * att.retain);
            attend_backward(
                &trace.history,
                p,
                att,
                &basis,
                &trace.attention,
                &trace.attend,
                &d_u,
            )
        }
        None => None,
    };
    let grads = ModelParams { attention, gcn };
    for (name, g) in grads.tensors() {
        if !g.is_finite() {
            return Err(Error::numeric(format!("gradient of {name}")));
        }
    }
    Ok(grads)
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let expected = ModelParams::init(&config, 0)?;
        let got = params.tensors();
        let exp = expected.tensors();
        if got.len() != exp.len()
            || got
                .iter()
                .zip(&exp)
                .any(|((gn, g), (en, e))| gn != en || g.shape() != e.shape())
        {
            return Err(Error::invalid(
                "parameters do not match the model configuration",
            ));
        }
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    fn check_history(&self, history: &PoseSequence) -> Result<()> {
        let span = self.config.attention.span();
        if history.len() < span {
            return Err(Error::InsufficientHistory {
                needed: span,
                got: history.len(),
            });
        }
        if history.pose_dim() != self.config.pose_dim {
            return Err(Error::invalid(format!(
                "history has pose dimension {}, model expects {}",
                history.pose_dim(),
                self.config.pose_dim
            )));
        }
        Ok(())
    }

    /// Forecasts the next `T` frames.
    pub fn predict_once(&self, history: &PoseSequence) -> Result<ForecastResult> {
        self.check_history(history)?;
        let (window, trace) = forward(
            &self.config,
            &self.params,
            &history.frames.transpose(),
            None,
        )?;
        let m = self.config.attention.m;
        let frames = window.cols_range(m, window.cols()).transpose();
        Ok(ForecastResult {
            frames,
            attention: vec![trace.attention],
        })
    }

    /// `steps` rounds of prediction, each appending its `T` frames to the history.
    pub fn predict_recursive(
        &self,
        history: &PoseSequence,
        steps: usize,
    ) -> Result<ForecastResult> {
        if steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        self.check_history(history)?;
        let k = self.config.pose_dim;
        let m = self.config.attention.m;
        let mut hist = history.frames.transpose();
        let mut predicted = Vec::with_capacity(steps * self.config.attention.t * k);
        let mut attention = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (window, trace) = forward(&self.config, &self.params, &hist, None)?;
            let future = window.cols_range(m, window.cols());
            predicted.extend_from_slice(future.transpose().as_slice());
            hist = hist.hstack(&future);
            attention.push(trace.attention);
        }
        let frames = Matrix::from_vec_unchecked(predicted.len() / k, k, predicted);
        Ok(ForecastResult { frames, attention })
    }
}

/// Anything that can extend a history by a number of frames.
pub trait Forecaster {
    fn forecast(&self, history: &PoseSequence, frames: usize) -> Result<Matrix>;
}

impl Forecaster for Model {
    fn forecast(&self, history: &PoseSequence, frames: usize) -> Result<Matrix> {
        let t = self.config.attention.t;
        let steps = frames.div_ceil(t).max(1);
        let out = self.predict_recursive(history, steps)?;
        Ok(out.frames.rows_range(0, frames))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroVelocity;

impl Forecaster for ZeroVelocity {
    fn forecast(&self, history: &PoseSequence, frames: usize) -> Result<Matrix> {
        if history.is_empty() {
            return Err(Error::EmptySequence("history has no frames".into()));
        }
        Ok(zero_velocity_baseline(history, frames))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn seq(frames: Matrix) -> PoseSequence {
        PoseSequence::new(frames, 25.0, Representation::Coords3d).unwrap()
    }

    fn random_history(n: usize, k: usize, seed: u64) -> PoseSequence {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        seq(Matrix::from_fn(n, k, |_, _| r.random_range(-50.0..50.0)))
    }

    #[test]
    fn padding() {
        let w = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64);
        assert_eq!(pad_last_pose(&w, 0).unwrap(), w);
        let p = pad_last_pose(&w, 4).unwrap();
        assert_eq!(p.rows(), 7);
        assert_eq!(p.rows_range(0, 3), w);
        for r in 3..7 {
            assert_eq!(p.row(r), w.row(2));
        }
        let single = Matrix::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let p = pad_last_pose(&single, 3).unwrap();
        assert_eq!(p.rows(), 4);
        assert!((0..4).all(|r| p.row(r) == single.row(0)));
    }

    #[test]
    fn pose_sequence_validation() {
        assert!(PoseSequence::new(Matrix::zeros(2, 3), 0.0, Representation::Coords3d).is_err());
        let s = seq(Matrix::from_fn(5, 6, |r, _| r as f64));
        assert_eq!(s.joints(), 2);
        assert_eq!(s.slice(1, 3).unwrap().len(), 2);
        assert!(s.slice(3, 3).is_err());
        assert_eq!(s.last_pose(), &[4.0; 6]);
    }

    #[test]
    fn zeroed_output_layer_gives_zero_velocity() {
        // exact only without DCT truncation
        let mut cfg = ModelConfig::tiny();
        cfg.attention.retain = cfg.attention.m + cfg.attention.t;
        let mut model = Model::init(cfg, 3).unwrap();
        model.params.gcn.zero_output_layer();
        let hist = random_history(22, 6, 1);
        let out = model.predict_once(&hist).unwrap();
        let zv = zero_velocity_baseline(&hist, 4);
        assert!(out.frames.max_abs_diff(&zv) < 1e-9);
    }

    #[test]
    fn constant_history_stays_finite() {
        let model = Model::init(ModelConfig::tiny(), 3).unwrap();
        let hist = seq(Matrix::from_fn(20, 6, |_, c| c as f64 * 10.0));
        let out = model.predict_once(&hist).unwrap();
        assert!(out.frames.is_finite());
        let mut zeroed = model.clone();
        zeroed.params.gcn.zero_output_layer();
        let out = zeroed.predict_once(&hist).unwrap();
        assert!(out.frames.max_abs_diff(&zero_velocity_baseline(&hist, 4)) < 1e-9);
    }

    #[test]
    fn recursive_prefix_and_determinism() {
        let model = Model::init(ModelConfig::tiny(), 8).unwrap();
        let hist = random_history(25, 6, 2);
        let once = model.predict_once(&hist).unwrap();
        let one = model.predict_recursive(&hist, 1).unwrap();
        assert_eq!(once, one);
        let three = model.predict_recursive(&hist, 3).unwrap();
        assert_eq!(three.frames.rows(), 12);
        assert_eq!(three.attention.len(), 3);
        assert_eq!(three.frames.rows_range(0, 4), once.frames);
        // keys grow by T each step
        assert_eq!(
            three.attention[1].scores.len(),
            three.attention[0].scores.len() + 4
        );
        assert_eq!(model.predict_recursive(&hist, 3).unwrap(), three);
        assert_eq!(
            model.forecast(&hist, 10).unwrap(),
            three.frames.rows_range(0, 10)
        );
    }

    #[test]
    fn history_errors() {
        let model = Model::init(ModelConfig::tiny(), 0).unwrap();
        assert!(matches!(
            model.predict_once(&random_history(15, 6, 0)),
            Err(Error::InsufficientHistory {
                needed: 16,
                got: 15
            })
        ));
        assert!(model.predict_once(&random_history(30, 5, 0)).is_err());
        assert!(model
            .predict_recursive(&random_history(30, 6, 0), 0)
            .is_err());
    }

    #[test]
    fn zero_velocity_rows() {
        let hist = random_history(7, 6, 4);
        let zv = zero_velocity_baseline(&hist, 5);
        assert_eq!(zv.shape(), (5, 6));
        assert!((0..5).all(|r| zv.row(r) == hist.last_pose()));
    }

    #[test]
    fn frame_wise_model_has_no_encoders() {
        let mut cfg = ModelConfig::tiny();
        cfg.attention.kind = AttentionKind::FrameWise;
        let model = Model::init(cfg, 1).unwrap();
        assert!(model.params.attention.is_none());
        assert!(model
            .params
            .tensors()
            .iter()
            .all(|(n, _)| n.starts_with("gcn.")));
        let out = model.predict_once(&random_history(30, 6, 5)).unwrap();
        let sum: f64 = out.attention[0].scores.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn model_new_checks_shapes() {
        let cfg = ModelConfig::tiny();
        let params = ModelParams::init(&cfg, 0).unwrap();
        assert!(Model::new(cfg.clone(), params.clone()).is_ok());
        let mut other = cfg.clone();
        other.gcn.width = 9;
        assert!(Model::new(other, params).is_err());
    }
}
