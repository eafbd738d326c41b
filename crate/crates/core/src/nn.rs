//! Fixed-topology MLPs with reverse-mode gradients and Adam.
//!
//! The networks here are stacks of affine layers with a Leaky-ReLU between
//! them (never after the last layer; discriminators emit raw logits). There
//! is no general autodiff graph: `forward` caches the per-layer activations
//! and `backward` walks them in reverse, accumulating parameter gradients.
//!
//! Shape mismatches panic with both shapes; calling `backward` without a
//! cached forward panics as well.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::checkpoint::TensorEntry;
use crate::error::{Error, Result};
use crate::matrix::Matrix2D;

/// Conventional negative slope for GAN Leaky-ReLUs.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Elementwise `max(x, slope*x)` for `slope` in `(0, 1)`.
pub fn leaky_relu(x: &Matrix2D, slope: f64) -> Matrix2D {
    assert!(
        slope > 0.0 && slope < 1.0,
        "leaky_relu slope must lie in (0, 1), got {slope}"
    );
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    out
}

/// One affine layer `y = x·Wᵀ + b` with gradient buffers and Adam moments.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: Matrix2D, // out x in
    pub bias: Vec<f64>,
    pub grad_weight: Matrix2D,
    pub grad_bias: Vec<f64>,
    m_weight: Matrix2D,
    v_weight: Matrix2D,
    m_bias: Vec<f64>,
    v_bias: Vec<f64>,
}

impl LinearLayer {
    /// All-zero parameters and state.
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        assert!(in_dim > 0 && out_dim > 0, "layer dims must be positive");
        LinearLayer {
            weight: Matrix2D::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
            grad_weight: Matrix2D::zeros(out_dim, in_dim),
            grad_bias: vec![0.0; out_dim],
            m_weight: Matrix2D::zeros(out_dim, in_dim),
            v_weight: Matrix2D::zeros(out_dim, in_dim),
            m_bias: vec![0.0; out_dim],
            v_bias: vec![0.0; out_dim],
        }
    }

    /// Weights drawn uniformly from `±scale·sqrt(1/in_dim)`, biases zero.
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut layer = Self::zeros(in_dim, out_dim);
        let bound = scale * (1.0 / in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        for w in layer.weight.data_mut() {
            *w = dist.sample(rng);
        }
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// `x·Wᵀ + b` broadcast over batch rows.
    pub fn forward(&self, x: &Matrix2D) -> Matrix2D {
        assert_eq!(
            x.cols(),
            self.in_dim(),
            "linear forward: input has {} columns, layer expects {}",
            x.cols(),
            self.in_dim()
        );
        let mut out = x.matmul_nt(&self.weight);
        out.add_row_broadcast(&self.bias);
        out
    }

    fn zero_grads(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }
}

/// A stack of [`LinearLayer`]s with Leaky-ReLU between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<LinearLayer>,
    slope: f64,
    /// `cache[k]` is the input to layer `k`; `cache[L]` is the final output.
    cache: Option<Vec<Matrix2D>>,
}

impl Mlp {
    /// Builds a network with the given layer widths, e.g. `[2, 128, 128, 2]`.
    pub fn new<R: Rng>(dims: &[usize], slope: f64, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        assert!(slope > 0.0 && slope < 1.0, "slope must lie in (0, 1), got {slope}");
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::new(w[0], w[1], 1.0, rng))
            .collect();
        Mlp { layers, slope, cache: None }
    }

    /// Rescales one layer's weights in place (biases untouched). Used to
    /// widen the generator's initial output spread.
    pub fn scale_layer_weights(&mut self, layer: usize, gain: f64) {
        self.layers[layer].weight.scale(gain);
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, k: usize) -> &LinearLayer {
        &self.layers[k]
    }

    pub fn layer_mut(&mut self, k: usize) -> &mut LinearLayer {
        &mut self.layers[k]
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    fn run_forward(&self, x: &Matrix2D) -> Vec<Matrix2D> {
        assert_eq!(
            x.cols(),
            self.in_dim(),
            "mlp forward: input has {} columns, network expects {}",
            x.cols(),
            self.in_dim()
        );
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&acts[k]);
            acts.push(if k < last { leaky_relu(&z, self.slope) } else { z });
        }
        acts
    }

    /// Forward pass that caches activations for a subsequent [`Mlp::backward`].
    pub fn forward(&mut self, x: &Matrix2D) -> Matrix2D {
        let acts = self.run_forward(x);
        let out = acts[acts.len() - 1].clone();
        self.cache = Some(acts);
        out
    }

    /// Pure forward pass; parameters and cache untouched, safe to call from
    /// multiple threads on a frozen network.
    pub fn infer(&self, x: &Matrix2D) -> Matrix2D {
        let acts = self.run_forward(x);
        acts.into_iter().next_back().unwrap()
    }

    fn backprop(
        layers: &[LinearLayer],
        slope: f64,
        acts: &[Matrix2D],
        grad_out: &Matrix2D,
        mut sink: Option<&mut [(Matrix2D, Vec<f64>)]>,
    ) -> Matrix2D {
        let last = layers.len() - 1;
        assert_eq!(
            grad_out.cols(),
            layers[last].out_dim(),
            "backward: cotangent has {} columns, network emits {}",
            grad_out.cols(),
            layers[last].out_dim()
        );
        assert_eq!(
            grad_out.rows(),
            acts[0].rows(),
            "backward: cotangent batch {} does not match cached batch {}",
            grad_out.rows(),
            acts[0].rows()
        );
        let mut g = grad_out.clone();
        for k in (0..layers.len()).rev() {
            if k != last {
                // acts[k+1] is post-activation; its sign equals the
                // pre-activation sign, which determines the Leaky-ReLU slope.
                for (gv, av) in g.data_mut().iter_mut().zip(acts[k + 1].data()) {
                    if *av < 0.0 {
                        *gv *= slope;
                    }
                }
            }
            if let Some(grads) = sink.as_deref_mut() {
                grads[k].0.add_assign(&g.matmul_tn(&acts[k]));
                for (b, s) in grads[k].1.iter_mut().zip(g.col_sums()) {
                    *b += s;
                }
            }
            g = g.matmul_nn(&layers[k].weight);
        }
        g
    }

    /// Accumulates parameter gradients from `grad_out` and returns the
    /// gradient with respect to the cached input batch.
    ///
    /// Panics if no forward pass has been cached.
    pub fn backward(&mut self, grad_out: &Matrix2D) -> Matrix2D {
        let acts = self
            .cache
            .take()
            .expect("mlp backward called without a cached forward pass");
        let mut scratch: Vec<(Matrix2D, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (Matrix2D::zeros(l.out_dim(), l.in_dim()), vec![0.0; l.out_dim()]))
            .collect();
        let gin = Self::backprop(&self.layers, self.slope, &acts, grad_out, Some(&mut scratch));
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(scratch) {
            layer.grad_weight.add_assign(&gw);
            for (b, s) in layer.grad_bias.iter_mut().zip(gb) {
                *b += s;
            }
        }
        self.cache = Some(acts);
        gin
    }

    /// Gradient with respect to the cached input only; parameter gradient
    /// buffers stay untouched (the network is treated as frozen).
    pub fn backward_input(&self, grad_out: &Matrix2D) -> Matrix2D {
        let acts = self
            .cache
            .as_ref()
            .expect("mlp backward_input called without a cached forward pass");
        Self::backprop(&self.layers, self.slope, acts, grad_out, None)
    }

    /// Pure forward plus input-gradient for a frozen network: returns
    /// `(f(x), cotᵀ·∂f/∂x)` without touching the shared cache, so frozen
    /// predictors can be queried concurrently.
    pub fn forward_and_input_grad(&self, x: &Matrix2D, cot: &Matrix2D) -> (Matrix2D, Matrix2D) {
        let acts = self.run_forward(x);
        let gin = Self::backprop(&self.layers, self.slope, &acts, cot, None);
        let out = acts.into_iter().next_back().unwrap();
        (out, gin)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
    }

    /// Standard Adam update with bias correction, then zeroes the gradient
    /// buffers. `step_index` starts at 1.
    pub fn adam_step(
        &mut self,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step_index: usize,
    ) -> Result<()> {
        assert!(step_index >= 1, "adam step_index starts at 1");
        let c1 = 1.0 - beta1.powi(step_index as i32);
        let c2 = 1.0 - beta2.powi(step_index as i32);
        for (k, layer) in self.layers.iter_mut().enumerate() {
            if !layer.grad_weight.is_finite() || layer.grad_bias.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    phase: "adam",
                    iter: step_index,
                    detail: format!("non-finite gradient in layer {k}"),
                });
            }
            for ((p, g), (m, v)) in layer
                .weight
                .data_mut()
                .iter_mut()
                .zip(layer.grad_weight.data())
                .zip(layer.m_weight.data_mut().iter_mut().zip(layer.v_weight.data_mut()))
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
            for ((p, g), (m, v)) in layer
                .bias
                .iter_mut()
                .zip(&layer.grad_bias)
                .zip(layer.m_bias.iter_mut().zip(&mut layer.v_bias))
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
            layer.zero_grads();
        }
        Ok(())
    }

    /// Parameter tensors named `{prefix}layer{k}.weight` / `.bias`.
    pub fn to_tensors(&self, prefix: &str) -> Vec<TensorEntry> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (k, layer) in self.layers.iter().enumerate() {
            out.push(TensorEntry {
                name: format!("{prefix}layer{k}.weight"),
                dims: vec![layer.out_dim(), layer.in_dim()],
                data: layer.weight.data().to_vec(),
            });
            out.push(TensorEntry {
                name: format!("{prefix}layer{k}.bias"),
                dims: vec![layer.out_dim()],
                data: layer.bias.clone(),
            });
        }
        out
    }

    /// Rebuilds a network from tensors written by [`Mlp::to_tensors`]. Adam
    /// moments start fresh; checkpoints carry parameters only.
    pub fn from_tensors(prefix: &str, tensors: &[TensorEntry], slope: f64) -> Result<Mlp> {
        let mut layers = Vec::new();
        for k in 0.. {
            let wname = format!("{prefix}layer{k}.weight");
            let bname = format!("{prefix}layer{k}.bias");
            let Some(w) = tensors.iter().find(|t| t.name == wname) else {
                break;
            };
            let b = tensors
                .iter()
                .find(|t| t.name == bname)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {bname}")))?;
            if w.dims.len() != 2 {
                return Err(Error::Checkpoint(format!(
                    "tensor {wname} has rank {}, expected 2",
                    w.dims.len()
                )));
            }
            let (out_dim, in_dim) = (w.dims[0], w.dims[1]);
            if b.dims != vec![out_dim] || b.data.len() != out_dim {
                return Err(Error::Checkpoint(format!("tensor {bname} shape mismatch")));
            }
            let mut layer = LinearLayer::zeros(in_dim, out_dim);
            layer.weight = Matrix2D::from_vec(out_dim, in_dim, w.data.clone());
            layer.bias = b.data.clone();
            layers.push(layer);
        }
        if layers.is_empty() {
            return Err(Error::Checkpoint(format!(
                "no layers found under prefix {prefix:?}"
            )));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Checkpoint(
                    "layer dimensions do not chain".to_string(),
                ));
            }
        }
        Ok(Mlp { layers, slope, cache: None })
    }
}
