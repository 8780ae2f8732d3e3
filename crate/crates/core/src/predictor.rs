//! Residual graph-convolutional predictor over the `K` pose coordinates.
//!
//! Each layer computes `σ(A·H·W + b)` with a trainable `K x K` adjacency.
//! The network is an input layer, `blocks` residual blocks of two tanh
//! layers, and a linear output layer whose result is added to `D`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConvLayer {
    pub a: Matrix,
    pub w: Matrix,
    /// `1 x F̂`, broadcast over nodes.
    pub b: Matrix,
    pub activation: Activation,
}

impl GraphConvLayer {
    pub fn zeros(
        nodes: usize,
        in_features: usize,
        out_features: usize,
        activation: Activation,
    ) -> Self {
        Self {
            a: Matrix::zeros(nodes, nodes),
            w: Matrix::zeros(in_features, out_features),
            b: Matrix::zeros(1, out_features),
            activation,
        }
    }

    pub fn init<R: Rng>(
        nodes: usize,
        in_features: usize,
        out_features: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut layer = Self::zeros(nodes, in_features, out_features, activation);
        let a_bound = (6.0 / (2 * nodes) as f64).sqrt();
        let w_bound = (6.0 / (in_features + out_features) as f64).sqrt();
        layer
            .a
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-a_bound..a_bound));
        layer
            .w
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-w_bound..w_bound));
        layer
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.a.rows(), self.w.rows(), self.w.cols(), self.activation)
    }

    fn check_input(&self, h: &Matrix) -> Result<()> {
        if h.rows() != self.a.cols() || h.cols() != self.w.rows() {
            return Err(Error::invalid(format!(
                "graph conv expects {}x{} input, got {}x{}",
                self.a.cols(),
                self.w.rows(),
                h.rows(),
                h.cols()
            )));
        }
        Ok(())
    }

    /// Returns `(H·W, output)`.
    fn forward_parts(&self, h: &Matrix) -> (Matrix, Matrix) {
        let hw = h.matmul(&self.w);
        let mut z = self.a.matmul(&hw);
        let bias = self.b.as_slice();
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
        if self.activation == Activation::Tanh {
            z.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
        }
        (hw, z)
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dH`.
    fn backward(
        &self,
        h: &Matrix,
        hw: &Matrix,
        out: &Matrix,
        d_out: &Matrix,
        grad: &mut GraphConvLayer,
    ) -> Matrix {
        let dz = match self.activation {
            Activation::Tanh => out.zip_with(d_out, |y, g| g * (1.0 - y * y)),
            Activation::Identity => d_out.clone(),
        };
        grad.a.add_assign(&dz.matmul_tr(hw));
        for (gb, s) in grad.b.as_mut_slice().iter_mut().zip(dz.col_sums()) {
            *gb += s;
        }
        let d_hw = self.a.tr_matmul(&dz);
        grad.w.add_assign(&h.tr_matmul(&d_hw));
        d_hw.matmul_tr(&self.w)
    }
}

/// `σ(A·H·W + b)`
pub fn graph_conv_forward(h: &Matrix, layer: &GraphConvLayer) -> Result<Matrix> {
    layer.check_input(h)?;
    Ok(layer.forward_parts(h).1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub blocks: usize,
    pub width: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            blocks: 12,
            width: 256,
            dropout: 0.0,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.width == 0 {
            return Err(Error::invalid(
                "GCN needs at least one block and positive width",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub input: GraphConvLayer,
    pub blocks: Vec<[GraphConvLayer; 2]>,
    pub output: GraphConvLayer,
}

impl GcnParams {
    /// `retain` is the number of DCT coefficients `c`; the input is `[D | U]`.
    pub fn init<R: Rng>(nodes: usize, retain: usize, cfg: &GcnConfig, rng: &mut R) -> Self {
        let input = GraphConvLayer::init(nodes, 2 * retain, cfg.width, Activation::Tanh, rng);
        let blocks = (0..cfg.blocks)
            .map(|_| {
                [
                    GraphConvLayer::init(nodes, cfg.width, cfg.width, Activation::Tanh, rng),
                    GraphConvLayer::init(nodes, cfg.width, cfg.width, Activation::Tanh, rng),
                ]
            })
            .collect();
        let output = GraphConvLayer::init(nodes, cfg.width, retain, Activation::Identity, rng);
        Self {
            input,
            blocks,
            output,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input: self.input.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|[a, b]| [a.zeros_like(), b.zeros_like()])
                .collect(),
            output: self.output.zeros_like(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.input.a.rows()
    }

    pub fn retain(&self) -> usize {
        self.output.w.cols()
    }

    pub fn layers(&self) -> impl Iterator<Item = &GraphConvLayer> {
        std::iter::once(&self.input)
            .chain(self.blocks.iter().flatten())
            .chain(std::iter::once(&self.output))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut GraphConvLayer> {
        std::iter::once(&mut self.input)
            .chain(self.blocks.iter_mut().flatten())
            .chain(std::iter::once(&mut self.output))
    }

    /// Zeroes the output layer so the predictor returns `D` unchanged.
    pub fn zero_output_layer(&mut self) {
        self.output.a.fill(0.0);
        self.output.w.fill(0.0);
        self.output.b.fill(0.0);
    }
}

/// Predicted DCT coefficients `D + GCN([D | U])`.
pub fn gcn_forward(d: &Matrix, u: &Matrix, params: &GcnParams) -> Result<Matrix> {
    Ok(gcn_forward_traced(d, u, params, None)?.0)
}

/// Inverted-dropout masks are drawn from `dropout` when given.
pub(crate) fn gcn_forward_traced(
    d: &Matrix,
    u: &Matrix,
    params: &GcnParams,
    mut dropout: Option<(f64, &mut dyn rand::RngCore)>,
) -> Result<(Matrix, GcnTrace)> {
    if d.shape() != u.shape() {
        return Err(Error::invalid(format!(
            "D is {:?} but U is {:?}",
            d.shape(),
            u.shape()
        )));
    }
    let input = d.hstack(u);
    params.input.check_input(&input)?;
    let mut steps = Vec::with_capacity(2 + 2 * params.blocks.len());
    let mut h = input;
    let mut run =
        |layer: &GraphConvLayer, h: &Matrix, idx: usize, drop: bool, steps: &mut Vec<LayerStep>| {
            let (hw, mut out) = layer.forward_parts(h);
            if !out.is_finite() {
                return Err(Error::numeric(format!("predictor layer {idx}")));
            }
            let mut mask = None;
            if drop {
                if let Some((p, rng)) = dropout.as_mut() {
                    if *p > 0.0 {
                        let keep = 1.0 / (1.0 - *p);
                        let m = Matrix::from_fn(out.rows(), out.cols(), |_, _| {
                            if rng.random::<f64>() < *p {
                                0.0
                            } else {
                                keep
                            }
                        });
                        out = out.hadamard(&m);
                        mask = Some(m);
                    }
                }
            }
            steps.push(LayerStep {
                input: h.clone(),
                hw,
                out: out.clone(),
                mask,
            });
            Ok(out)
        };
    let mut idx = 0;
    h = run(&params.input, &h, idx, true, &mut steps)?;
    for [l1, l2] in &params.blocks {
        idx += 1;
        let y = run(l1, &h, idx, true, &mut steps)?;
        idx += 1;
        let z = run(l2, &y, idx, true, &mut steps)?;
        h = z.add(&h);
    }
    idx += 1;
    let delta = run(&params.output, &h, idx, false, &mut steps)?;
    Ok((d.add(&delta), GcnTrace { steps }))
}

pub(crate) struct LayerStep {
    input: Matrix,
    hw: Matrix,
    /// Post-activation, post-dropout output.
    out: Matrix,
    mask: Option<Matrix>,
}

pub(crate) struct GcnTrace {
    steps: Vec<LayerStep>,
}

impl GcnTrace {
    /// Gradients for every layer plus `dL/d[D | U]` through the network
    /// (excluding the direct residual path to `D`).
    pub(crate) fn backward(&self, params: &GcnParams, d_pred: &Matrix) -> (GcnParams, Matrix) {
        let mut grads = params.zeros_like();
        let steps = &self.steps;
        let layer_back = |layer: &GraphConvLayer,
                          step: &LayerStep,
                          d_out: &Matrix,
                          grad: &mut GraphConvLayer| {
            // the activation derivative needs the pre-dropout output
            let (out, d_out) = match &step.mask {
                Some(m) => {
                    let pre = step
                        .out
                        .zip_with(m, |o, k| if k == 0.0 { 0.0 } else { o / k });
                    (pre, d_out.hadamard(m))
                }
                None => (step.out.clone(), d_out.clone()),
            };
            layer.backward(&step.input, &step.hw, &out, &d_out, grad)
        };

        let last = steps.len() - 1;
        let mut d_h = layer_back(&params.output, &steps[last], d_pred, &mut grads.output);
        for (b, ([l1, l2], [g1, g2])) in params
            .blocks
            .iter()
            .zip(grads.blocks.iter_mut())
            .enumerate()
            .rev()
        {
            let s1 = &steps[1 + 2 * b];
            let s2 = &steps[2 + 2 * b];
            let d_y = layer_back(l2, s2, &d_h, g2);
            let d_in = layer_back(l1, s1, &d_y, g1);
            d_h = d_h.add(&d_in);
        }
        let d_input = layer_back(&params.input, &steps[0], &d_h, &mut grads.input);
        (grads, d_input)
    }

    #[cfg(test)]
    fn activations(&self) -> impl Iterator<Item = &Matrix> {
        self.steps.iter().map(|s| &s.out)
    }
}
