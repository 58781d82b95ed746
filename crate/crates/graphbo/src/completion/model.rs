//! Per-node representation network and the optimizer that trains it.
//!
//! Every node owns a trainable input embedding; a shared feed-forward stack
//! (tanh hidden layers, linear output) maps embeddings to outputs. With an
//! empty hidden stack the model degenerates to a free matrix — the output
//! *is* the embedding row — which is the best-conditioned mode for pure
//! matrix-completion experiments and doubles as an oracle case for gradient
//! checks.
//!
//! Gradients are hand-written (the rest of the crate needs exact analytic
//! derivatives, finite-difference verified), so the layer zoo is deliberately
//! tiny.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation value `a = act(z)`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub act: Activation,
}

/// Cached per-node activations from a forward pass: `activations[0]` is the
/// embedding row, `activations[l+1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<DVector<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DVector<f64> {
        self.activations.last().expect("non-empty cache")
    }
}

/// Trainable map from node ids to `R^out_dim`.
#[derive(Debug, Clone)]
pub struct NodeRepresentationModel {
    embed: DMatrix<f64>, // n x h, h == out_dim
    layers: Vec<Layer>,
    out_dim: usize,
}

impl NodeRepresentationModel {
    /// Fresh model: embedding width equals the output dimension, hidden
    /// widths as given (tanh), linear output. Embeddings are N(0, 1/h),
    /// weights N(0, 1/fan_in), biases zero.
    pub fn new<R: Rng>(n: usize, hidden: &[usize], out_dim: usize, rng: &mut R) -> Self {
        assert!(out_dim > 0, "output dimension must be positive");
        let h = out_dim;
        let embed_std = 1.0 / (h as f64).sqrt();
        let embed = DMatrix::from_fn(n, h, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            z * embed_std
        });
        let mut layers = Vec::new();
        if !hidden.is_empty() {
            let mut fan_in = h;
            for &width in hidden {
                layers.push(Self::init_layer(width, fan_in, Activation::Tanh, rng));
                fan_in = width;
            }
            layers.push(Self::init_layer(out_dim, fan_in, Activation::Identity, rng));
        }
        Self {
            embed,
            layers,
            out_dim,
        }
    }

    fn init_layer<R: Rng>(out: usize, fan_in: usize, act: Activation, rng: &mut R) -> Layer {
        let std = 1.0 / (fan_in as f64).sqrt();
        let w = DMatrix::from_fn(out, fan_in, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        });
        Layer {
            w,
            b: DVector::zeros(out),
            act,
        }
    }

    /// Rebuild a model from raw parts (checkpoint restore).
    pub fn from_parts(embed: DMatrix<f64>, layers: Vec<Layer>, out_dim: usize) -> Self {
        if layers.is_empty() {
            assert_eq!(embed.ncols(), out_dim);
        } else {
            assert_eq!(layers.last().unwrap().w.nrows(), out_dim);
        }
        Self {
            embed,
            layers,
            out_dim,
        }
    }

    pub fn n(&self) -> usize {
        self.embed.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn embed(&self) -> &DMatrix<f64> {
        &self.embed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Forward pass for one node.
    pub fn forward(&self, u: usize) -> DVector<f64> {
        let mut a = self.embed.row(u).transpose();
        for layer in &self.layers {
            let mut z = &layer.w * a + &layer.b;
            z.apply(|x| *x = layer.act.apply(*x));
            a = z;
        }
        a
    }

    /// Forward pass keeping intermediate activations for backprop.
    pub fn forward_cached(&self, u: usize) -> ForwardCache {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(self.embed.row(u).transpose());
        for layer in &self.layers {
            let prev = activations.last().unwrap();
            let mut z = &layer.w * prev + &layer.b;
            z.apply(|x| *x = layer.act.apply(*x));
            activations.push(z);
        }
        ForwardCache { activations }
    }

    /// Outputs for every node as an n x out_dim matrix.
    pub fn forward_all(&self) -> DMatrix<f64> {
        if self.layers.is_empty() {
            return self.embed.clone();
        }
        let n = self.n();
        let rows = crate::par::map_range(n, |u| self.forward(u));
        let mut out = DMatrix::zeros(n, self.out_dim);
        for (u, row) in rows.into_iter().enumerate() {
            out.row_mut(u).tr_copy_from(&row);
        }
        out
    }

    /// Backpropagate `d_out` (gradient of the loss w.r.t. this node's
    /// output) through the shared layers into `grads`, given the node's
    /// forward cache.
    pub fn backward(
        &self,
        u: usize,
        cache: &ForwardCache,
        d_out: &DVector<f64>,
        grads: &mut ModelGrad,
    ) {
        let mut delta = d_out.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_out = &cache.activations[l + 1];
            for i in 0..delta.len() {
                delta[i] *= layer.act.derivative_from_output(a_out[i]);
            }
            let a_in = &cache.activations[l];
            // dW += delta a_in^T, db += delta.
            let (dw, db) = &mut grads.layers[l];
            dw.ger(1.0, &delta, a_in, 1.0);
            *db += &delta;
            delta = layer.w.tr_mul(&delta);
        }
        let mut row = grads.embed.row_mut(u);
        for k in 0..delta.len() {
            row[k] += delta[k];
        }
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let mut count = self.embed.len();
        for l in &self.layers {
            count += l.w.len() + l.b.len();
        }
        count
    }

    /// Flatten parameters: embedding (column-major), then per layer W
    /// (column-major) and b.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.embed.as_slice());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    /// Inverse of [`Self::params`].
    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let embed_len = self.embed.len();
        let mut off = 0;
        self.embed.as_mut_slice().copy_from_slice(&p[..embed_len]);
        off += embed_len;
        for l in &mut self.layers {
            let wn = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&p[off..off + wn]);
            off += wn;
            let bn = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&p[off..off + bn]);
            off += bn;
        }
    }

    /// Where each parameter group lives inside the flat vector:
    /// `(embed_range, layers_range)`.
    pub fn param_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let e = self.embed.len();
        (0..e, e..self.param_count())
    }
}

/// Gradient accumulator mirroring a model's parameters.
#[derive(Debug, Clone)]
pub struct ModelGrad {
    pub embed: DMatrix<f64>,
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl ModelGrad {
    pub fn zeros_like(model: &NodeRepresentationModel) -> Self {
        Self {
            embed: DMatrix::zeros(model.embed.nrows(), model.embed.ncols()),
            layers: model
                .layers
                .iter()
                .map(|l| {
                    (
                        DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                        DVector::zeros(l.b.len()),
                    )
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrad) {
        self.embed += &other.embed;
        for (mine, theirs) in self.layers.iter_mut().zip(other.layers.iter()) {
            mine.0 += &theirs.0;
            mine.1 += &theirs.1;
        }
    }

    /// Flatten with the same layout as [`NodeRepresentationModel::params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.embed.as_slice());
        for (w, b) in &self.layers {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.embed.iter().all(|x| x.is_finite())
            && self
                .layers
                .iter()
                .all(|(w, b)| w.iter().all(|x| x.is_finite()) && b.iter().all(|x| x.is_finite()))
    }
}

/// Adam over a flat parameter vector (β1 = 0.9, β2 = 0.999, ε = 1e-8,
/// bias-corrected).
#[derive(Debug, Clone)]
pub struct FlatAdam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl FlatAdam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
