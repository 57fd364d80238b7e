//! Minimal one-hidden-layer network with analytic gradients.
//!
//! `out = W2 * tanh(W1 * x + b1) + b2`, trained with plain SGD plus L2 decay
//! on the weights. This is all the function approximation the marginal and
//! copula parameter heads need; there is no autograd, the backward pass is
//! written out by hand and checked against finite differences in tests.

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use rand::Rng;

/// Layer sizes of the fixed two-layer architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Layout {
    pub fn new(input: usize, hidden: usize, output: usize) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::InvalidConfig(format!(
                "layer sizes must be >= 1, got {input}x{hidden}x{output}"
            )));
        }
        Ok(Layout { input, hidden, output })
    }
}

/// Hidden-layer activation tag. Output is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

/// Weights and biases of one network.
///
/// `w1` is `hidden x input` row-major, `w2` is `output x hidden` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layout: Layout,
    pub activation: Activation,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Loss gradients with the same shape as [`NetworkParams`].
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl GradientSet {
    pub fn zeros(layout: Layout) -> Self {
        GradientSet {
            w1: vec![0.0; layout.hidden * layout.input],
            b1: vec![0.0; layout.hidden],
            w2: vec![0.0; layout.output * layout.hidden],
            b2: vec![0.0; layout.output],
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += b;
        }
        for (a, b) in self.b2.iter_mut().zip(&other.b2) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
        {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|v| v.is_finite())
    }
}

/// Initializes a network: weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
/// biases zero. Deterministic for a given seed.
pub fn mlp_init(layout: Layout, seed: u64) -> NetworkParams {
    let mut rng = seeded_rng(seed);
    let lim1 = 1.0 / (layout.input as f64).sqrt();
    let lim2 = 1.0 / (layout.hidden as f64).sqrt();
    let w1 = (0..layout.hidden * layout.input)
        .map(|_| rng.random_range(-lim1..lim1))
        .collect();
    let w2 = (0..layout.output * layout.hidden)
        .map(|_| rng.random_range(-lim2..lim2))
        .collect();
    NetworkParams {
        layout,
        activation: Activation::Tanh,
        w1,
        b1: vec![0.0; layout.hidden],
        w2,
        b2: vec![0.0; layout.output],
    }
}

impl NetworkParams {
    /// Forward pass returning the output vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_full(x)?.1)
    }

    /// Forward pass returning `(hidden activations, output)`; trainers reuse
    /// the hidden vector in the backward pass.
    pub fn forward_full(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let Layout { input, hidden, output } = self.layout;
        if x.len() != input {
            return Err(Error::Shape(format!(
                "network expects input of length {input}, got {}",
                x.len()
            )));
        }
        let mut h = vec![0.0; hidden];
        for j in 0..hidden {
            let row = &self.w1[j * input..(j + 1) * input];
            let mut p = self.b1[j];
            for (w, xi) in row.iter().zip(x) {
                p += w * xi;
            }
            h[j] = p.tanh();
        }
        let mut out = vec![0.0; output];
        for o in 0..output {
            let row = &self.w2[o * hidden..(o + 1) * hidden];
            let mut acc = self.b2[o];
            for (w, hj) in row.iter().zip(&h) {
                acc += w * hj;
            }
            out[o] = acc;
        }
        Ok((h, out))
    }

    /// Gradients of `grad_out . output(x)` with respect to every parameter.
    pub fn backward(&self, x: &[f64], grad_out: &[f64]) -> Result<GradientSet> {
        let (h, _) = self.forward_full(x)?;
        self.backward_from_hidden(x, &h, grad_out)
    }

    /// Backward pass given the hidden activations from [`forward_full`].
    ///
    /// [`forward_full`]: NetworkParams::forward_full
    pub fn backward_from_hidden(
        &self,
        x: &[f64],
        hidden: &[f64],
        grad_out: &[f64],
    ) -> Result<GradientSet> {
        let Layout { input, hidden: nh, output } = self.layout;
        if grad_out.len() != output || hidden.len() != nh || x.len() != input {
            return Err(Error::Shape(format!(
                "backward shapes: x {} (want {input}), hidden {} (want {nh}), grad_out {} (want {output})",
                x.len(),
                hidden.len(),
                grad_out.len()
            )));
        }
        let mut g = GradientSet::zeros(self.layout);
        g.b2.copy_from_slice(grad_out);
        // d/dh accumulated while filling w2 grads
        let mut dh = vec![0.0; nh];
        for o in 0..output {
            let go = grad_out[o];
            let wrow = &self.w2[o * nh..(o + 1) * nh];
            let grow = &mut g.w2[o * nh..(o + 1) * nh];
            for j in 0..nh {
                grow[j] = go * hidden[j];
                dh[j] += go * wrow[j];
            }
        }
        for j in 0..nh {
            let dp = dh[j] * (1.0 - hidden[j] * hidden[j]);
            g.b1[j] = dp;
            let grow = &mut g.w1[j * input..(j + 1) * input];
            for (gi, xi) in grow.iter_mut().zip(x) {
                *gi = dp * xi;
            }
        }
        Ok(g)
    }

    /// One SGD step: `p <- p - lr * (g + l2 * p)` for weights,
    /// `p <- p - lr * g` for biases.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64, l2: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {lr}")));
        }
        if l2 < 0.0 {
            return Err(Error::InvalidConfig(format!("l2 weight must be >= 0, got {l2}")));
        }
        if !grads.is_finite() {
            return Err(Error::TrainingDiverged {
                stage: "sgd".into(),
                detail: "non-finite gradient".into(),
            });
        }
        for (p, g) in self.w1.iter_mut().zip(&grads.w1) {
            *p -= lr * (g + l2 * *p);
        }
        for (p, g) in self.w2.iter_mut().zip(&grads.w2) {
            *p -= lr * (g + l2 * *p);
        }
        for (p, g) in self.b1.iter_mut().zip(&grads.b1) {
            *p -= lr * g;
        }
        for (p, g) in self.b2.iter_mut().zip(&grads.b2) {
            *p -= lr * g;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .all(|v| v.is_finite())
    }
}
