//! Fully-connected networks with explicit forward and reverse passes.
//!
//! A network is a chain of affine layers `a_l = act(a_{l−1}·W_lᵀ + b_l)`.
//! Batches are row-major (`batch × features`). The forward pass can return a
//! [`ForwardCache`] holding every layer's input and output; [`Mlp::backward`]
//! consumes it to produce parameter gradients and the gradient with respect
//! to the network input. Parameter gradients are summed over the batch, so a
//! mean loss must fold its `1/B` into `grad_out`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Checkpoint format version written by [`Mlp::save`].
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
    /// `scale · tanh(z)`; output range `(−scale, scale)`.
    ScaledTanh(f64),
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
            Activation::ScaledTanh(s) => s * z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
            Activation::ScaledTanh(s) => {
                let t = a / s;
                s * (1.0 - t * t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    /// Bumped on every parameter change; caches remember the value they saw.
    version: u64,
}

/// Per-layer activations saved by a cached forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    output: Array2<f64>,
    version: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// Gradients mirroring an [`Mlp`]'s parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl GradientSet {
    pub fn zeros_like(net: &Mlp) -> Self {
        GradientSet {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (w, b) in &mut self.layers {
            *w *= k;
            *b *= k;
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|(w, b)| w.iter().chain(b.iter()).map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|x| x.is_finite()))
    }

    /// Flattened in the same order as [`Mlp::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }
}

impl Mlp {
    /// Builds a network with `sizes = [in, h1, …, out]`, `hidden` activation on
    /// every layer but the last. Weights and biases are drawn uniformly from
    /// `±1/√fan_in`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound));
                let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..=bound));
                let activation = if k + 1 == n { output } else { hidden };
                Layer {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        Mlp { layers, version: 0 }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Checkpoint("network has no layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Dimension {
                    context: "layer bias",
                    expected: l.out_dim(),
                    got: l.bias.len(),
                });
            }
            if k > 0 && layers[k - 1].out_dim() != l.in_dim() {
                return Err(Error::Dimension {
                    context: "layer chaining",
                    expected: layers[k - 1].out_dim(),
                    got: l.in_dim(),
                });
            }
        }
        Ok(Mlp { layers, version: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    /// Layer widths `[in, h1, …, out]`.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.in_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters flattened layer by layer (weights row-major, then bias).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn set_parameters(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_parameters() {
            return Err(Error::Dimension {
                context: "parameter vector",
                expected: self.n_parameters(),
                got: theta.len(),
            });
        }
        let mut it = theta.iter();
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = *it.next().expect("length checked");
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().expect("length checked");
            }
        }
        self.version += 1;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.in_dim() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.in_dim(),
                got: cols,
            });
        }
        Ok(())
    }

    fn affine(layer: &Layer, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weight.t());
        z += &layer.bias;
        let act = layer.activation;
        z.mapv_inplace(|v| act.apply(v));
        z
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let row = ArrayView2::from_shape((1, x.len()), x).expect("contiguous");
        Ok(self.forward_batch(row)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = Self::affine(&self.layers[0], &x);
        for layer in &self.layers[1..] {
            a = Self::affine(layer, &a.view());
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for layer in &self.layers {
            let next = Self::affine(layer, &a.view());
            inputs.push(a);
            a = next;
        }
        Ok(ForwardCache {
            inputs,
            output: a,
            version: self.version,
        })
    }

    /// Reverse pass. Returns batch-summed parameter gradients and the
    /// gradient with respect to the input rows.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<f64>) -> Result<(GradientSet, Array2<f64>)> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::Checkpoint(
                "stale forward cache: parameters changed since the forward pass".into(),
            ));
        }
        if grad_out.dim() != cache.output.dim() {
            return Err(Error::Dimension {
                context: "backward grad_out",
                expected: cache.output.len(),
                got: grad_out.len(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.to_owned();
        let mut output = cache.output.view();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            delta.zip_mut_with(&output, |d, &a| *d *= act.derivative_from_output(a));
            let input = &cache.inputs[k];
            let dw = delta.t().dot(input);
            let db = delta.sum_axis(Axis(0));
            let next_delta = delta.dot(&layer.weight);
            grads.push((dw, db));
            delta = next_delta;
            output = input.view();
        }
        grads.reverse();
        Ok((GradientSet { layers: grads }, delta))
    }

    /// Single-sample convenience wrapper around [`Mlp::forward_cached`] and
    /// [`Mlp::backward`].
    pub fn gradient(&self, x: &[f64], grad_out: &[f64]) -> Result<(GradientSet, Vec<f64>)> {
        let row = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::parse("input", e))?;
        let cache = self.forward_cached(row)?;
        let g = ArrayView2::from_shape((1, grad_out.len()), grad_out).map_err(|e| Error::parse("grad_out", e))?;
        let (grads, gin) = self.backward(&cache, g)?;
        Ok((grads, gin.into_raw_vec_and_offset().0))
    }

    fn check_grad_shapes(&self, g: &GradientSet) -> Result<()> {
        if g.layers.len() != self.layers.len() {
            return Err(Error::Dimension {
                context: "gradient layers",
                expected: self.layers.len(),
                got: g.layers.len(),
            });
        }
        for (l, (dw, db)) in self.layers.iter().zip(&g.layers) {
            if dw.dim() != l.weight.dim() || db.len() != l.bias.len() {
                return Err(Error::Dimension {
                    context: "gradient shape",
                    expected: l.weight.len() + l.bias.len(),
                    got: dw.len() + db.len(),
                });
            }
        }
        Ok(())
    }

    /// `θ ← θ − lr·g`.
    pub fn sgd_step(&mut self, g: &GradientSet, lr: f64) -> Result<()> {
        self.check_grad_shapes(g)?;
        if !(lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {lr}")));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient passed to sgd_step".into()));
        }
        for (l, (dw, db)) in self.layers.iter_mut().zip(&g.layers) {
            l.weight.scaled_add(-lr, dw);
            l.bias.scaled_add(-lr, db);
        }
        self.version += 1;
        if !self.is_finite() {
            return Err(Error::NonFinite("parameters after sgd_step".into()));
        }
        Ok(())
    }

    /// `θ_self ← τ·θ_online + (1−τ)·θ_self`.
    pub fn soft_update(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("tau must be in (0, 1], got {tau}")));
        }
        if self.sizes() != online.sizes()
            || self
                .layers
                .iter()
                .zip(&online.layers)
                .any(|(a, b)| a.activation != b.activation)
        {
            return Err(Error::Config("soft_update between different architectures".into()));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            if tau == 1.0 {
                t.weight.assign(&o.weight);
                t.bias.assign(&o.bias);
            } else {
                t.weight.zip_mut_with(&o.weight, |x, &y| *x = tau * y + (1.0 - tau) * *x);
                t.bias.zip_mut_with(&o.bias, |x, &y| *x = tau * y + (1.0 - tau) * *x);
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Euclidean distance between the parameter vectors of two equally shaped nets.
    pub fn distance(&self, other: &Mlp) -> f64 {
        self.parameters()
            .iter()
            .zip(other.parameters())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_record(&self) -> MlpRecord {
        MlpRecord {
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    rows: l.out_dim(),
                    cols: l.in_dim(),
                    activation: l.activation,
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_record(rec: &MlpRecord) -> Result<Self> {
        let layers = rec
            .layers
            .iter()
            .map(|l| {
                let weight = Array2::from_shape_vec((l.rows, l.cols), l.weight.clone())
                    .map_err(|e| Error::Checkpoint(format!("weight shape: {e}")))?;
                Ok(Layer {
                    weight,
                    bias: Array1::from(l.bias.clone()),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(path, &MlpCheckpoint {
            format_version: CHECKPOINT_VERSION,
            network: self.to_record(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: MlpCheckpoint = read_checkpoint(path)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        Mlp::from_record(&ck.network)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Serializable architecture + parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MlpCheckpoint {
    format_version: u32,
    network: MlpRecord,
}

pub(crate) fn write_checkpoint<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_checkpoint<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Worst disagreement between backprop and central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_rel_param: f64,
    pub max_rel_input: f64,
}

impl GradientCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_param <= tol && self.max_rel_input <= tol
    }
}

/// Relative error with a floored scale: `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares the gradients of the scalar `L = Σ_k w_k·y_k(x)` computed by
/// [`Mlp::gradient`] with central differences of step `h`.
pub fn finite_difference_check(net: &Mlp, x: &[f64], w: &[f64], h: f64, floor: f64) -> Result<GradientCheck> {
    let (g, g_in) = net.gradient(x, w)?;
    let loss = |m: &Mlp, x: &[f64]| -> Result<f64> { Ok(m.forward(x)?.iter().zip(w).map(|(y, w)| y * w).sum()) };

    let theta = net.parameters();
    let analytic = g.flatten();
    let mut probe = net.clone();
    let mut max_rel_param = 0.0_f64;
    for k in 0..theta.len() {
        let mut t = theta.clone();
        t[k] = theta[k] + h;
        probe.set_parameters(&t)?;
        let up = loss(&probe, x)?;
        t[k] = theta[k] - h;
        probe.set_parameters(&t)?;
        let down = loss(&probe, x)?;
        max_rel_param = max_rel_param.max(relative_error(analytic[k], (up - down) / (2.0 * h), floor));
    }

    let mut max_rel_input = 0.0_f64;
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let up = loss(net, &xp)?;
        xp[k] = x[k] - h;
        let down = loss(net, &xp)?;
        xp[k] = x[k];
        max_rel_input = max_rel_input.max(relative_error(g_in[k], (up - down) / (2.0 * h), floor));
    }
    Ok(GradientCheck {
        max_rel_param,
        max_rel_input,
    })
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum UpdateRule {
    /// Plain gradient descent.
    #[default]
    Sgd,
    /// Adam with the usual bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl UpdateRule {
    pub fn adam() -> Self {
        UpdateRule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Applies an [`UpdateRule`] to one network, keeping any moment estimates.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub rule: UpdateRule,
    pub lr: f64,
    moments: Option<(GradientSet, GradientSet, i32)>,
}

impl Optimizer {
    pub fn new(rule: UpdateRule, lr: f64) -> Self {
        Optimizer { rule, lr, moments: None }
    }

    pub fn sgd(lr: f64) -> Self {
        Optimizer::new(UpdateRule::Sgd, lr)
    }

    pub fn step(&mut self, net: &mut Mlp, g: &GradientSet) -> Result<()> {
        match self.rule {
            UpdateRule::Sgd => net.sgd_step(g, self.lr),
            UpdateRule::Adam { beta1, beta2, eps } => {
                net.check_grad_shapes(g)?;
                if !g.is_finite() {
                    return Err(Error::NonFinite("gradient passed to optimizer".into()));
                }
                let (m, v, t) = self
                    .moments
                    .get_or_insert_with(|| (GradientSet::zeros_like(net), GradientSet::zeros_like(net), 0));
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                let mut step = g.clone();
                for (k, (sw, sb)) in step.layers.iter_mut().enumerate() {
                    let (gw, gb) = &g.layers[k];
                    let (mw, mb) = &mut m.layers[k];
                    let (vw, vb) = &mut v.layers[k];
                    mw.zip_mut_with(gw, |a, &x| *a = beta1 * *a + (1.0 - beta1) * x);
                    mb.zip_mut_with(gb, |a, &x| *a = beta1 * *a + (1.0 - beta1) * x);
                    vw.zip_mut_with(gw, |a, &x| *a = beta2 * *a + (1.0 - beta2) * x * x);
                    vb.zip_mut_with(gb, |a, &x| *a = beta2 * *a + (1.0 - beta2) * x * x);
                    ndarray::Zip::from(sw).and(&*mw).and(&*vw).for_each(|s, &mm, &vv| {
                        *s = (mm / c1) / ((vv / c2).sqrt() + eps);
                    });
                    ndarray::Zip::from(sb).and(&*mb).and(&*vb).for_each(|s, &mm, &vv| {
                        *s = (mm / c1) / ((vv / c2).sqrt() + eps);
                    });
                }
                net.sgd_step(&step, self.lr)
            }
        }
    }
}
