use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Tensor2};
use crate::grid::NormalizedAdjacency;

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "gridbid-network";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Weight initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Uniform in `±1/sqrt(fan_in)`, zero biases.
    FanIn,
    /// Every weight and bias uniform in `[1, 2]`.
    UnitRange,
}

/// Fully connected layer `σ(x·W + b)` with `W` of shape in×out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor2,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Graph convolution `σ(S·H·W)`; `W` is f_in×f_out and does not depend on the node count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayer {
    pub weights: Tensor2,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn forward(&self, input: &Tensor2, adj: &NormalizedAdjacency) -> Result<Tensor2, NnError> {
        if input.rows() != adj.n() {
            return Err(NnError::Shape(format!(
                "{} feature rows for a {}-node graph",
                input.rows(),
                adj.n()
            )));
        }
        let mut z = adj.apply(input).matmul(&self.weights)?;
        z.data_mut()
            .iter_mut()
            .for_each(|v| *v = self.activation.apply(*v));
        Ok(z)
    }
}

/// Layer widths describing a [`Network`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub in_features: usize,
    pub gcn_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub outputs: usize,
}

/// GCN stack, then mean pooling over nodes, then a dense head.
///
/// With no GCN layers the "graph" is whatever rows the features have, and a
/// single-row feature matrix makes this a plain multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub gcn_layers: Vec<GcnLayer>,
    pub head_layers: Vec<DenseLayer>,
}

/// Intermediates kept by [`Network::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `S·H_l` per GCN layer.
    propagated: Vec<Tensor2>,
    /// `S·H_l·W_l` per GCN layer.
    gcn_pre: Vec<Tensor2>,
    n_nodes: usize,
    /// Input to each dense layer; the first is the pooled vector.
    head_inputs: Vec<Vec<f64>>,
    head_pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Smallest `|z|` over pre-activations that feed a ReLU; infinite when there are none.
    /// GCN rows whose propagated input is all zero are skipped: no single weight
    /// perturbation can move them off zero.
    pub fn relu_margin(&self, net: &Network) -> f64 {
        let mut margin = f64::INFINITY;
        for (l, layer) in net.gcn_layers.iter().enumerate() {
            if layer.activation != Activation::Relu {
                continue;
            }
            let (p, z) = (&self.propagated[l], &self.gcn_pre[l]);
            for r in 0..z.rows() {
                if p.row(r).iter().all(|&v| v == 0.0) {
                    continue;
                }
                margin = z.row(r).iter().fold(margin, |m, v| m.min(v.abs()));
            }
        }
        for (layer, z) in net.head_layers.iter().zip(&self.head_pre) {
            if layer.activation == Activation::Relu {
                margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            }
        }
        margin
    }
}

/// Parameter gradients laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub gcn: Vec<Tensor2>,
    pub dense_weights: Vec<Tensor2>,
    pub dense_bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            gcn: net
                .gcn_layers
                .iter()
                .map(|l| Tensor2::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            dense_weights: net
                .head_layers
                .iter()
                .map(|l| Tensor2::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            dense_bias: net
                .head_layers
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }

    /// Same ordering as [`Network::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.gcn {
            out.extend_from_slice(g.data());
        }
        for (w, b) in self.dense_weights.iter().zip(&self.dense_bias) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        let pairs = self
            .gcn
            .iter_mut()
            .chain(self.dense_weights.iter_mut())
            .map(Tensor2::data_mut)
            .chain(self.dense_bias.iter_mut().map(Vec::as_mut_slice))
            .zip(
                other
                    .gcn
                    .iter()
                    .chain(other.dense_weights.iter())
                    .map(Tensor2::data)
                    .chain(other.dense_bias.iter().map(Vec::as_slice)),
            );
        for (dst, src) in pairs {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.gcn
            .iter_mut()
            .chain(self.dense_weights.iter_mut())
            .flat_map(|t| t.data_mut().iter_mut())
            .chain(self.dense_bias.iter_mut().flatten())
            .for_each(|v| *v *= factor);
    }

    pub fn is_zero(&self) -> bool {
        self.flat().iter().all(|&v| v == 0.0)
    }
}

fn sample_tensor(rows: usize, cols: usize, scheme: InitScheme, rng: &mut impl Rng) -> Tensor2 {
    let data = (0..rows * cols)
        .map(|_| match scheme {
            InitScheme::FanIn => {
                let bound = 1.0 / (rows as f64).sqrt();
                rng.random_range(-bound..=bound)
            }
            InitScheme::UnitRange => rng.random_range(1.0..=2.0),
        })
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("sized above")
}

impl Network {
    /// Random network: ReLU on every GCN layer and hidden dense layer, identity on the output.
    pub fn init(shape: &NetworkShape, scheme: InitScheme, rng: &mut impl Rng) -> Self {
        let mut width = shape.in_features;
        let mut gcn_layers = Vec::new();
        for &w in &shape.gcn_widths {
            gcn_layers.push(GcnLayer {
                weights: sample_tensor(width, w, scheme, rng),
                activation: Activation::Relu,
            });
            width = w;
        }
        let mut head_layers = Vec::new();
        let widths = shape.head_widths.iter().map(|&w| (w, Activation::Relu));
        for (w, activation) in widths.chain(std::iter::once((shape.outputs, Activation::Identity)))
        {
            let bias = match scheme {
                InitScheme::FanIn => vec![0.0; w],
                InitScheme::UnitRange => (0..w).map(|_| rng.random_range(1.0..=2.0)).collect(),
            };
            head_layers.push(DenseLayer {
                weights: sample_tensor(width, w, scheme, rng),
                bias,
                activation,
            });
            width = w;
        }
        Self {
            gcn_layers,
            head_layers,
        }
    }

    pub fn in_features(&self) -> usize {
        self.gcn_layers
            .first()
            .map(|l| l.weights.rows())
            .or_else(|| self.head_layers.first().map(|l| l.weights.rows()))
            .unwrap_or(0)
    }

    pub fn outputs(&self) -> usize {
        self.head_layers
            .last()
            .map(|l| l.weights.cols())
            .or_else(|| self.gcn_layers.last().map(|l| l.weights.cols()))
            .unwrap_or(0)
    }

    pub fn shape(&self) -> NetworkShape {
        let head = &self.head_layers;
        NetworkShape {
            in_features: self.in_features(),
            gcn_widths: self.gcn_layers.iter().map(|l| l.weights.cols()).collect(),
            head_widths: head
                .iter()
                .take(head.len().saturating_sub(1))
                .map(|l| l.weights.cols())
                .collect(),
            outputs: self.outputs(),
        }
    }

    /// Checks consecutive layer dimensions.
    pub fn validate(&self) -> Result<(), NnError> {
        let mut width = None;
        let dims = self
            .gcn_layers
            .iter()
            .map(|l| l.weights.shape())
            .chain(self.head_layers.iter().map(|l| l.weights.shape()));
        for (i, (rows, cols)) in dims.enumerate() {
            if let Some(w) = width {
                if w != rows {
                    return Err(NnError::Shape(format!(
                        "layer {i} expects {rows} inputs, previous layer gives {w}"
                    )));
                }
            }
            width = Some(cols);
        }
        for (i, l) in self.head_layers.iter().enumerate() {
            if l.bias.len() != l.weights.cols() {
                return Err(NnError::Shape(format!("dense layer {i} bias length")));
            }
        }
        Ok(())
    }

    pub fn forward(
        &self,
        features: &Tensor2,
        adj: &NormalizedAdjacency,
    ) -> Result<Vec<f64>, NnError> {
        self.forward_cached(features, adj).map(|(out, _)| out)
    }

    pub fn forward_cached(
        &self,
        features: &Tensor2,
        adj: &NormalizedAdjacency,
    ) -> Result<(Vec<f64>, ForwardCache), NnError> {
        if features.cols() != self.in_features() {
            return Err(NnError::Shape(format!(
                "{} feature columns, network expects {}",
                features.cols(),
                self.in_features()
            )));
        }
        if features.rows() != adj.n() {
            return Err(NnError::Shape(format!(
                "{} feature rows for a {}-node graph",
                features.rows(),
                adj.n()
            )));
        }
        let mut propagated = Vec::with_capacity(self.gcn_layers.len());
        let mut gcn_pre = Vec::with_capacity(self.gcn_layers.len());
        let mut h = features.clone();
        for layer in &self.gcn_layers {
            let p = adj.apply(&h);
            let z = p.matmul(&layer.weights)?;
            h = z.clone();
            h.data_mut()
                .iter_mut()
                .for_each(|v| *v = layer.activation.apply(*v));
            propagated.push(p);
            gcn_pre.push(z);
        }
        let mut x = h.column_means();
        let mut head_inputs = Vec::with_capacity(self.head_layers.len());
        let mut head_pre = Vec::with_capacity(self.head_layers.len());
        for layer in &self.head_layers {
            let (n_in, n_out) = layer.weights.shape();
            let mut z = layer.bias.clone();
            for (i, &xi) in x.iter().enumerate().take(n_in) {
                if xi == 0.0 {
                    continue;
                }
                for (zj, w) in z.iter_mut().zip(layer.weights.row(i)) {
                    *zj += xi * w;
                }
            }
            debug_assert_eq!(z.len(), n_out);
            let out = z.iter().map(|&v| layer.activation.apply(v)).collect();
            head_inputs.push(std::mem::replace(&mut x, out));
            head_pre.push(z);
        }
        Ok((
            x,
            ForwardCache {
                propagated,
                gcn_pre,
                n_nodes: features.rows(),
                head_inputs,
                head_pre,
            },
        ))
    }

    /// Reverse pass for the scalar loss whose gradient w.r.t. the output is
    /// `output_grad`. Returns parameter gradients and the gradient w.r.t. the
    /// input features. `S` enters as `Sᵀ = S`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        adj: &NormalizedAdjacency,
        output_grad: &[f64],
    ) -> Result<(Gradients, Tensor2), NnError> {
        let (grads, dx) = self.backward_impl(cache, adj, output_grad, true)?;
        Ok((grads, dx.expect("input gradient requested")))
    }

    /// [`Network::backward`] without the input-feature gradient.
    pub fn backward_params(
        &self,
        cache: &ForwardCache,
        adj: &NormalizedAdjacency,
        output_grad: &[f64],
    ) -> Result<Gradients, NnError> {
        Ok(self.backward_impl(cache, adj, output_grad, false)?.0)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        adj: &NormalizedAdjacency,
        output_grad: &[f64],
        input_grad: bool,
    ) -> Result<(Gradients, Option<Tensor2>), NnError> {
        if cache.propagated.len() != self.gcn_layers.len()
            || cache.head_inputs.len() != self.head_layers.len()
        {
            return Err(NnError::Shape(
                "forward cache does not match network".into(),
            ));
        }
        if output_grad.len() != self.outputs() {
            return Err(NnError::Shape(format!(
                "output gradient has {} entries, network has {} outputs",
                output_grad.len(),
                self.outputs()
            )));
        }
        let mut grads = Gradients::zeros_like(self);

        let mut dx = output_grad.to_vec();
        for (j, layer) in self.head_layers.iter().enumerate().rev() {
            let dz: Vec<f64> = dx
                .iter()
                .zip(&cache.head_pre[j])
                .map(|(d, &z)| d * layer.activation.derivative(z))
                .collect();
            let input = &cache.head_inputs[j];
            let gw = &mut grads.dense_weights[j];
            for (i, &xi) in input.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (g, d) in gw.row_mut(i).iter_mut().zip(&dz) {
                    *g = xi * d;
                }
            }
            grads.dense_bias[j].copy_from_slice(&dz);
            dx = (0..input.len())
                .map(|i| {
                    layer
                        .weights
                        .row(i)
                        .iter()
                        .zip(&dz)
                        .map(|(w, d)| w * d)
                        .sum()
                })
                .collect();
        }

        // Mean pool spreads the pooled gradient evenly over nodes.
        let n = cache.n_nodes;
        let width = dx.len();
        let mut dh = Tensor2::zeros(n, width);
        for r in 0..n {
            for (o, d) in dh.row_mut(r).iter_mut().zip(&dx) {
                *o = d / n as f64;
            }
        }

        for (l, layer) in self.gcn_layers.iter().enumerate().rev() {
            let mut dz = dh;
            for (d, &z) in dz.data_mut().iter_mut().zip(cache.gcn_pre[l].data()) {
                *d *= layer.activation.derivative(z);
            }
            grads.gcn[l] = cache.propagated[l].t_matmul(&dz)?;
            if l == 0 && !input_grad {
                return Ok((grads, None));
            }
            let dp = dz.matmul_t(&layer.weights)?;
            dh = adj.apply(&dp);
        }
        Ok((grads, Some(dh)))
    }

    /// Parameters in a fixed order: GCN weights, then per dense layer weights and bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.gcn_layers {
            out.extend_from_slice(l.weights.data());
        }
        for l in &self.head_layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.gcn_layers
            .iter()
            .map(|l| l.weights.data().len())
            .sum::<usize>()
            + self
                .head_layers
                .iter()
                .map(|l| l.weights.data().len() + l.bias.len())
                .sum::<usize>()
    }

    fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        let gcn = self.gcn_layers.iter_mut().map(|l| l.weights.data_mut());
        let head = self
            .head_layers
            .iter_mut()
            .flat_map(|l| [l.weights.data_mut(), l.bias.as_mut_slice()]);
        gcn.chain(head)
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<(), NnError> {
        if values.len() != self.param_count() {
            return Err(NnError::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            slice.copy_from_slice(&values[offset..offset + slice.len()]);
            offset += slice.len();
        }
        Ok(())
    }

    /// Gradient-descent step `θ ← θ − η·∇`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<(), NnError> {
        let flat = grads.flat();
        if flat.len() != self.param_count() || grads.gcn.len() != self.gcn_layers.len() {
            return Err(NnError::Shape(
                "gradient layout does not match network".into(),
            ));
        }
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            for (p, g) in slice.iter_mut().zip(&flat[offset..]) {
                *p -= lr * g;
            }
            offset += slice.len();
        }
        Ok(())
    }

    /// `θ_self ← τ·θ_source + (1−τ)·θ_self`.
    pub fn soft_update_from(&mut self, source: &Network, tau: f64) -> Result<(), NnError> {
        if self.shape() != source.shape() {
            return Err(NnError::Shape(
                "soft update between different shapes".into(),
            ));
        }
        let src = source.flat_params();
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            for (p, s) in slice.iter_mut().zip(&src[offset..]) {
                *p = if tau == 1.0 {
                    *s
                } else {
                    tau * s + (1.0 - tau) * *p
                };
            }
            offset += slice.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    network: Network,
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<(), NnError> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        network: net.clone(),
    };
    let text =
        serde_json::to_string_pretty(&file).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| NnError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network, NnError> {
    let text = std::fs::read_to_string(path).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    file.network.validate()?;
    Ok(file.network)
}
