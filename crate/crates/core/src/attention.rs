//! Motion attention: sub-sequence keys and values, convolutional query/key
//! encoders, sum-normalised scores and DCT value aggregation.
//!
//! Shapes follow the trajectory layout used throughout the crate: a window
//! is a `K x L` matrix, one row per pose coordinate, one column per frame.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, DctBasis, Matrix};

/// Denominators at or below this value fall back to uniform scores.
pub const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    /// Learned encoders over `M`-frame windows.
    Motion,
    /// Raw last-frame poses as query and keys.
    FrameWise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// Past window length `M`.
    pub m: usize,
    /// Frames predicted per step `T`.
    pub t: usize,
    pub d: usize,
    pub hidden: usize,
    pub kernels: (usize, usize),
    /// Retained DCT coefficients `c`.
    pub retain: usize,
    pub kind: AttentionKind,
}

impl AttentionConfig {
    pub fn new(m: usize, t: usize) -> Self {
        Self {
            m,
            t,
            d: 256,
            hidden: 256,
            kernels: (6, 5),
            retain: default_retain(m, t),
            kind: AttentionKind::Motion,
        }
    }

    pub fn receptive_field(&self) -> usize {
        self.kernels.0 + self.kernels.1 - 1
    }

    /// Length of every value window.
    pub fn span(&self) -> usize {
        self.m + self.t
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.0 == 0 || self.kernels.1 == 0 {
            return Err(Error::invalid("kernel sizes must be positive"));
        }
        if self.m < self.receptive_field() {
            return Err(Error::invalid(format!(
                "M = {} is shorter than the encoder receptive field {}",
                self.m,
                self.receptive_field()
            )));
        }
        if self.t == 0 || self.d == 0 || self.hidden == 0 {
            return Err(Error::invalid("T, d and hidden must be at least 1"));
        }
        if self.retain == 0 || self.retain > self.span() {
            return Err(Error::invalid(format!(
                "retain {} outside 1..={}",
                self.retain,
                self.span()
            )));
        }
        Ok(())
    }
}

/// 20 coefficients for the 50+10 setting, otherwise no truncation.
pub fn default_retain(m: usize, t: usize) -> usize {
    if m + t == 60 {
        20
    } else {
        m + t
    }
}

/// Key and value frame ranges (0-based, half-open) of one historical sub-sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subsequence {
    pub key: Range<usize>,
    pub value: Range<usize>,
}

/// All `N − M − T + 1` sub-sequences of a history of `n` frames.
pub fn extract_subsequences(n: usize, cfg: &AttentionConfig) -> Result<Vec<Subsequence>> {
    let span = cfg.span();
    if n < span {
        return Err(Error::InsufficientHistory {
            needed: span,
            got: n,
        });
    }
    Ok((0..=n - span)
        .map(|i| Subsequence {
            key: i..i + cfg.m,
            value: i..i + span,
        })
        .collect())
}

/// Two-layer temporal convolution `f_q` / `f_k`.
///
/// `w1` is `hidden x (K * kernel1)` with column index `c * kernel1 + tau`;
/// `w2` is `d x (hidden * kernel2)` laid out the same way. Biases are `1 x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoderParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub kernels: (usize, usize),
}

impl ConvEncoderParams {
    pub fn zeros(pose_dim: usize, cfg: &AttentionConfig) -> Self {
        let (k1, k2) = cfg.kernels;
        Self {
            w1: Matrix::zeros(cfg.hidden, pose_dim * k1),
            b1: Matrix::zeros(1, cfg.hidden),
            w2: Matrix::zeros(cfg.d, cfg.hidden * k2),
            b2: Matrix::zeros(1, cfg.d),
            kernels: cfg.kernels,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(pose_dim: usize, cfg: &AttentionConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(pose_dim, cfg);
        let (k1, k2) = cfg.kernels;
        let bound1 = (6.0 / ((pose_dim * k1 + cfg.hidden * k1) as f64)).sqrt();
        let bound2 = (6.0 / ((cfg.hidden * k2 + cfg.d * k2) as f64)).sqrt();
        p.w1.as_mut_slice()
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound1..bound1));
        p.w2.as_mut_slice()
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-bound2..bound2));
        p
    }

    pub fn pose_dim(&self) -> usize {
        self.w1.cols() / self.kernels.0
    }

    pub fn out_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn receptive_field(&self) -> usize {
        self.kernels.0 + self.kernels.1 - 1
    }

    /// Full `d x (L − receptive + 1)` feature map of a `K x L` input.
    pub fn feature_map(&self, input: &Matrix) -> Result<Matrix> {
        Ok(self.forward_traced(input)?.output)
    }

    pub(crate) fn forward_traced(&self, input: &Matrix) -> Result<EncoderTrace> {
        if input.rows() != self.pose_dim() {
            return Err(Error::invalid(format!(
                "encoder expects {} input channels, got {}",
                self.pose_dim(),
                input.rows()
            )));
        }
        if input.cols() < self.receptive_field() {
            return Err(Error::invalid(format!(
                "window of {} frames is shorter than the receptive field {}",
                input.cols(),
                self.receptive_field()
            )));
        }
        let hidden = conv1d_relu(input, &self.w1, &self.b1, self.kernels.0);
        let output = conv1d_relu(&hidden, &self.w2, &self.b2, self.kernels.1);
        Ok(EncoderTrace {
            input: input.clone(),
            hidden,
            output,
        })
    }

    /// Gradients w.r.t. this encoder given the gradient of its feature map.
    pub(crate) fn backward(&self, trace: &EncoderTrace, d_output: &Matrix) -> ConvEncoderParams {
        let mut grads = ConvEncoderParams {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: Matrix::zeros(1, self.b1.cols()),
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: Matrix::zeros(1, self.b2.cols()),
            kernels: self.kernels,
        };
        let d_hidden = conv1d_relu_backward(
            &trace.hidden,
            &trace.output,
            d_output,
            &self.w2,
            self.kernels.1,
            &mut grads.w2,
            &mut grads.b2,
            true,
        )
        .expect("input gradient requested");
        conv1d_relu_backward(
            &trace.input,
            &trace.hidden,
            &d_hidden,
            &self.w1,
            self.kernels.0,
            &mut grads.w1,
            &mut grads.b1,
            false,
        );
        grads
    }
}

pub(crate) struct EncoderTrace {
    input: Matrix,
    hidden: Matrix,
    pub(crate) output: Matrix,
}

/// Valid (unpadded, stride 1) temporal convolution followed by ReLU.
fn conv1d_relu(input: &Matrix, w: &Matrix, b: &Matrix, k: usize) -> Matrix {
    let (channels, len) = input.shape();
    let out_len = len + 1 - k;
    let mut out = Matrix::zeros(w.rows(), out_len);
    for o in 0..w.rows() {
        let wrow = w.row(o);
        let orow = out.row_mut(o);
        orow.fill(b.as_slice()[o]);
        for c in 0..channels {
            let x = input.row(c);
            for tau in 0..k {
                let wv = wrow[c * k + tau];
                for (ov, xv) in orow.iter_mut().zip(&x[tau..tau + out_len]) {
                    *ov += wv * xv;
                }
            }
        }
        orow.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv1d_relu_backward(
    input: &Matrix,
    output: &Matrix,
    d_output: &Matrix,
    w: &Matrix,
    k: usize,
    dw: &mut Matrix,
    db: &mut Matrix,
    want_input_grad: bool,
) -> Option<Matrix> {
    let channels = input.rows();
    let out_len = output.cols();
    // ReLU subgradient at 0 is 0.
    let d_pre = output.zip_with(d_output, |o, g| if o > 0.0 { g } else { 0.0 });
    let mut d_input = want_input_grad.then(|| Matrix::zeros(channels, input.cols()));
    for o in 0..w.rows() {
        let g = d_pre.row(o);
        if g.iter().all(|&v| v == 0.0) {
            continue;
        }
        db.as_mut_slice()[o] += g.iter().sum::<f64>();
        let wrow = w.row(o);
        for c in 0..channels {
            let x = input.row(c);
            for tau in 0..k {
                dw[(o, c * k + tau)] += dot(g, &x[tau..tau + out_len]);
            }
            if let Some(di) = d_input.as_mut() {
                let drow = di.row_mut(c);
                for tau in 0..k {
                    let wv = wrow[c * k + tau];
                    for (dv, gv) in drow[tau..tau + out_len].iter_mut().zip(g) {
                        *dv += wv * gv;
                    }
                }
            }
        }
    }
    d_input
}

/// `f(window)`: the encoder feature map reduced to its last temporal position.
pub fn encode_window(params: &ConvEncoderParams, window: &Matrix) -> Result<Vec<f64>> {
    let fm = params.feature_map(window)?;
    let last = fm.cols() - 1;
    Ok((0..fm.rows()).map(|r| fm[(r, last)]).collect())
}

/// Sum-normalises non-negative raw scores; uniform when the sum is at most [`SCORE_EPS`].
pub fn normalize_scores(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    if total > SCORE_EPS {
        raw.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

/// Gradient of [`normalize_scores`] w.r.t. the raw scores (zero on the fallback branch).
pub(crate) fn normalize_scores_backward(raw: &[f64], scores: &[f64], d_scores: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    if total <= SCORE_EPS {
        return vec![0.0; raw.len()];
    }
    let mean = dot(scores, d_scores);
    d_scores.iter().map(|g| (g - mean) / total).collect()
}

/// `a_i = q·k_i / Σ_j q·k_j`.
pub fn attention_scores(q: &[f64], keys: &[Vec<f64>]) -> Result<Vec<f64>> {
    if keys.is_empty() {
        return Err(Error::invalid("attention needs at least one key"));
    }
    if let Some(bad) = keys.iter().position(|k| k.len() != q.len()) {
        return Err(Error::invalid(format!(
            "key {bad} has length {} but query has {}",
            keys[bad].len(),
            q.len()
        )));
    }
    let raw: Vec<f64> = keys.iter().map(|k| dot(q, k)).collect();
    Ok(normalize_scores(&raw))
}

/// Frame-wise variant: raw poses as query and keys, negative products clamped to zero.
pub fn frame_wise_scores(last_pose: &[f64], key_poses: &[Vec<f64>]) -> Result<Vec<f64>> {
    if key_poses.is_empty() {
        return Err(Error::invalid("attention needs at least one key"));
    }
    if let Some(bad) = key_poses.iter().position(|k| k.len() != last_pose.len()) {
        return Err(Error::invalid(format!(
            "key pose {bad} has length {} but query has {}",
            key_poses[bad].len(),
            last_pose.len()
        )));
    }
    let raw: Vec<f64> = key_poses
        .iter()
        .map(|k| dot(last_pose, k).max(0.0))
        .collect();
    Ok(normalize_scores(&raw))
}

/// `U = Σ a_i V_i`.
pub fn aggregate_values(scores: &[f64], values: &[Matrix]) -> Result<Matrix> {
    let first = values
        .first()
        .ok_or_else(|| Error::invalid("no values to aggregate"))?;
    if scores.len() != values.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} values",
            scores.len(),
            values.len()
        )));
    }
    let mut u = Matrix::zeros(first.rows(), first.cols());
    for (a, v) in scores.iter().zip(values) {
        if v.shape() != first.shape() {
            return Err(Error::invalid("value shapes differ"));
        }
        u.axpy(*a, v);
    }
    Ok(u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub scores: Vec<f64>,
    /// Aggregated DCT values, `K x c`.
    pub u: Matrix,
}

/// Query and key encoders of the motion variant.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: ConvEncoderParams,
    pub key: ConvEncoderParams,
}

impl AttentionParams {
    /// Both encoders start from the same draw, so initial scores compare
    /// windows under one feature map. They are trained independently.
    pub fn init<R: Rng>(pose_dim: usize, cfg: &AttentionConfig, rng: &mut R) -> Self {
        let query = ConvEncoderParams::init(pose_dim, cfg, rng);
        Self {
            key: query.clone(),
            query,
        }
    }

    /// Independent draws for the two encoders.
    pub fn init_independent<R: Rng>(pose_dim: usize, cfg: &AttentionConfig, rng: &mut R) -> Self {
        let query = ConvEncoderParams::init(pose_dim, cfg, rng);
        let key = ConvEncoderParams::init(pose_dim, cfg, rng);
        Self { query, key }
    }

    pub fn zeros(pose_dim: usize, cfg: &AttentionConfig) -> Self {
        Self {
            query: ConvEncoderParams::zeros(pose_dim, cfg),
            key: ConvEncoderParams::zeros(pose_dim, cfg),
        }
    }
}

pub(crate) struct AttendTrace {
    raw: Vec<f64>,
    query: Option<EncoderTrace>,
    keys: Option<EncoderTrace>,
    q: Vec<f64>,
    /// Feature-map column holding key 0.
    key_offset: usize,
}

/// Scores and aggregated values for a `K x N` history.
///
/// Keys come from one encoder pass over frames `0..N−T`: the feature-map
/// column ending at frame `i + M − 1` is key `i`. Values are aggregated in
/// the time domain and transformed once, which equals `Σ a_i dct(V_i)` by
/// linearity.
pub(crate) fn attend(
    history: &Matrix,
    params: Option<&AttentionParams>,
    cfg: &AttentionConfig,
    basis: &DctBasis,
) -> Result<(AttentionOutput, AttendTrace)> {
    let n = history.cols();
    let subs = extract_subsequences(n, cfg)?;
    let count = subs.len();
    let (raw, trace) = match cfg.kind {
        AttentionKind::Motion => {
            let params = params
                .ok_or_else(|| Error::invalid("motion attention needs encoder parameters"))?;
            let rf = params.query.receptive_field();
            let q_trace = params
                .query
                .forward_traced(&history.cols_range(n - rf, n))?;
            let q: Vec<f64> = (0..q_trace.output.rows())
                .map(|r| q_trace.output[(r, 0)])
                .collect();
            let k_trace = params
                .key
                .forward_traced(&history.cols_range(0, n - cfg.t))?;
            let key_offset = cfg.m - rf;
            let raw: Vec<f64> = (0..count)
                .map(|i| {
                    let col = key_offset + i;
                    (0..q.len()).map(|r| q[r] * k_trace.output[(r, col)]).sum()
                })
                .collect();
            let trace = AttendTrace {
                raw: raw.clone(),
                query: Some(q_trace),
                keys: Some(k_trace),
                q,
                key_offset,
            };
            (raw, trace)
        }
        AttentionKind::FrameWise => {
            let last: Vec<f64> = (0..history.rows()).map(|r| history[(r, n - 1)]).collect();
            let raw: Vec<f64> = subs
                .iter()
                .map(|s| {
                    let f = s.key.end - 1;
                    (0..history.rows())
                        .map(|r| last[r] * history[(r, f)])
                        .sum::<f64>()
                        .max(0.0)
                })
                .collect();
            let trace = AttendTrace {
                raw: raw.clone(),
                query: None,
                keys: None,
                q: Vec::new(),
                key_offset: 0,
            };
            (raw, trace)
        }
    };
    let scores = normalize_scores(&raw);
    let span = cfg.span();
    let mut mixed = Matrix::zeros(history.rows(), span);
    for (i, a) in scores.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        for r in 0..history.rows() {
            let src = &history.row(r)[i..i + span];
            for (m, x) in mixed.row_mut(r).iter_mut().zip(src) {
                *m += a * x;
            }
        }
    }
    let u = basis.dct_unchecked(&mixed, cfg.retain);
    Ok((AttentionOutput { scores, u }, trace))
}

/// Backpropagates `dL/dU` to the encoder parameters. Returns `None` for the
/// frame-wise variant, which has none.
pub(crate) fn attend_backward(
    history: &Matrix,
    params: &AttentionParams,
    cfg: &AttentionConfig,
    basis: &DctBasis,
    out: &AttentionOutput,
    trace: &AttendTrace,
    d_u: &Matrix,
) -> Option<AttentionParams> {
    let (q_trace, k_trace) = match (&trace.query, &trace.keys) {
        (Some(q), Some(k)) => (q, k),
        _ => return None,
    };
    let span = cfg.span();
    // dL/da_i = <dU, V_i> = <dU · B_c, window_i>
    let g = d_u.matmul(&basis.matrix().rows_range(0, cfg.retain));
    let d_scores: Vec<f64> = (0..out.scores.len())
        .map(|i| {
            (0..history.rows())
                .map(|r| dot(g.row(r), &history.row(r)[i..i + span]))
                .sum()
        })
        .collect();
    let d_raw = normalize_scores_backward(&trace.raw, &out.scores, &d_scores);

    let d = trace.q.len();
    let mut d_q = Matrix::zeros(d, 1);
    let mut d_keys = Matrix::zeros(d, k_trace.output.cols());
    for (i, ds) in d_raw.iter().enumerate() {
        if *ds == 0.0 {
            continue;
        }
        let col = trace.key_offset + i;
        for r in 0..d {
            d_q[(r, 0)] += ds * k_trace.output[(r, col)];
            d_keys[(r, col)] += ds * trace.q[r];
        }
    }
    let query = params.query.backward(q_trace, &d_q);
    let key = params.key.backward(k_trace, &d_keys);
    Some(AttentionParams { query, key })
}
