//! Small fully connected network with hand-written backpropagation.
//!
//! Layer widths are `[input, hidden..., feature, classes]`. Hidden layers use
//! ReLU. The feature layer and the final (logit) layer are affine with no
//! activation, so the penultimate activation is the sample feature and the
//! last layer maps it to class scores.
//!
//! An optional fixed per-coordinate affine map can be applied to inputs
//! before the first layer. It is not trained.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, DenseMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn forward(&self, input: &DenseMatrix, relu: bool) -> DenseMatrix {
        let (m, out) = (input.rows(), self.weights.rows());
        let mut z = DenseMatrix::zeros(m, out);
        for k in 0..m {
            let x = input.row(k);
            let zr = z.row_mut(k);
            for (o, w) in self.weights.iter_rows().enumerate() {
                let mut v = self.bias[o] + crate::linalg::dot(w, x);
                if relu && v < 0.0 {
                    v = 0.0;
                }
                zr[o] = v;
            }
        }
        z
    }
}

/// `x ↦ (x − shift) / scale`, per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    /// Column means and population standard deviations of `inputs`.
    /// Constant columns get scale 1.
    pub fn standardize(inputs: &DenseMatrix) -> Result<Self> {
        let (m, d) = (inputs.rows(), inputs.cols());
        if m == 0 {
            return Err(Error::InvalidShape("cannot fit scaling on zero rows"));
        }
        let mut shift = vec![0.0; d];
        for r in inputs.iter_rows() {
            for (s, &v) in shift.iter_mut().zip(r) {
                *s += v;
            }
        }
        shift.iter_mut().for_each(|s| *s /= m as f64);
        let mut scale = vec![0.0; d];
        for r in inputs.iter_rows() {
            for ((s, &v), &mu) in scale.iter_mut().zip(r).zip(&shift) {
                *s += (v - mu) * (v - mu);
            }
        }
        for s in &mut scale {
            let sd = libm::sqrt(*s / m as f64);
            *s = if sd > 0.0 { sd } else { 1.0 };
        }
        Self::new(shift, scale)
    }

    pub fn new(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if shift.len() != scale.len() {
            return Err(Error::ShapeMismatch {
                context: "input scaling",
                expected: shift.len(),
                found: scale.len(),
            });
        }
        if !all_finite(&shift) || !scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::NonFiniteInput("input scaling"));
        }
        Ok(Self { shift, scale })
    }

    pub fn apply(&self, inputs: &DenseMatrix) -> DenseMatrix {
        let mut out = inputs.clone();
        for k in 0..out.rows() {
            for ((v, &mu), &s) in out.row_mut(k).iter_mut().zip(&self.shift).zip(&self.scale) {
                *v = (*v - mu) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    init_seed: u64,
    input_scaling: Option<InputScaling>,
}

#[derive(Deserialize)]
struct RawModel {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    init_seed: u64,
    input_scaling: Option<InputScaling>,
}

impl TryFrom<RawModel> for MlpModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        check_dims(&raw.layer_dims)?;
        if raw.layers.len() + 1 != raw.layer_dims.len() {
            return Err(Error::InvalidShape("layer count does not match layer_dims"));
        }
        for (l, layer) in raw.layers.iter().enumerate() {
            let (i, o) = (raw.layer_dims[l], raw.layer_dims[l + 1]);
            if layer.weights.rows() != o || layer.weights.cols() != i || layer.bias.len() != o {
                return Err(Error::InvalidShape("layer parameters do not match layer_dims"));
            }
            if !all_finite(&layer.bias) {
                return Err(Error::NonFiniteInput("bias"));
            }
        }
        let model = MlpModel {
            layer_dims: raw.layer_dims,
            layers: raw.layers,
            init_seed: raw.init_seed,
            input_scaling: None,
        };
        match raw.input_scaling {
            Some(sc) => model.with_input_scaling(InputScaling::new(sc.shift, sc.scale)?),
            None => Ok(model),
        }
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 3 {
        return Err(Error::InvalidShape(
            "need at least input, feature and output widths",
        ));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidShape("layer widths must be positive"));
    }
    Ok(())
}

/// Activations kept from a forward pass for backpropagation.
///
/// `activations[0]` is the (scaled) input, the last entry the logits and the one
/// before it the features.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    activations: Vec<DenseMatrix>,
}

impl ForwardPass {
    pub fn features(&self) -> &DenseMatrix {
        &self.activations[self.activations.len() - 2]
    }

    pub fn logits(&self) -> &DenseMatrix {
        self.activations.last().expect("non-empty")
    }
}

/// Gradients (or velocities) shaped like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<(DenseMatrix, Vec<f64>)>,
}

impl ParamGrads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| {
                    (
                        DenseMatrix::zeros(l.weights.rows(), l.weights.cols()),
                        vec![0.0; l.bias.len()],
                    )
                })
                .collect(),
        }
    }

    /// Weights then bias, layer by layer; same order as [`MlpModel::params_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}

impl MlpModel {
    /// He-normal weights for ReLU layers, `N(0, 1/fan_in)` for the two affine
    /// output layers, zero biases.
    pub fn new(layer_dims: Vec<usize>, init_seed: u64) -> Result<Self> {
        check_dims(&layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let n_layers = layer_dims.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
                let gain = if l + 2 < n_layers { 2.0 } else { 1.0 };
                let dist = Normal::new(0.0, libm::sqrt(gain / fan_in as f64)).expect("valid std");
                Layer {
                    weights: DenseMatrix::from_fn(fan_out, fan_in, |_, _| dist.sample(&mut rng)),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            layer_dims,
            layers,
            init_seed,
            input_scaling: None,
        })
    }

    /// Installs a fixed input map; its width must equal the input width.
    pub fn with_input_scaling(mut self, scaling: InputScaling) -> Result<Self> {
        if scaling.shift.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "input scaling width",
                expected: self.input_dim(),
                found: scaling.shift.len(),
            });
        }
        self.input_scaling = Some(scaling);
        Ok(self)
    }

    pub fn input_scaling(&self) -> Option<&InputScaling> {
        self.input_scaling.as_ref()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.layer_dims[self.layer_dims.len() - 2]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().expect("non-empty")
    }

    fn is_relu(&self, layer: usize) -> bool {
        layer + 2 < self.layers.len()
    }

    pub fn forward(&self, inputs: &DenseMatrix) -> Result<ForwardPass> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "model input",
                expected: self.input_dim(),
                found: inputs.cols(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(match &self.input_scaling {
            Some(sc) => sc.apply(inputs),
            None => inputs.clone(),
        });
        for (l, layer) in self.layers.iter().enumerate() {
            let next = layer.forward(activations.last().expect("non-empty"), self.is_relu(l));
            activations.push(next);
        }
        Ok(ForwardPass { activations })
    }

    /// Parameter gradients given upstream gradients at the feature and logit
    /// layers.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_features: &DenseMatrix,
        grad_logits: &DenseMatrix,
    ) -> Result<ParamGrads> {
        let m = pass.activations[0].rows();
        let feat = pass.features();
        for (ctx, g, want) in [
            ("feature gradient", grad_features, feat),
            ("logit gradient", grad_logits, pass.logits()),
        ] {
            if g.rows() != m || g.cols() != want.cols() {
                return Err(Error::ShapeMismatch {
                    context: ctx,
                    expected: m * want.cols(),
                    found: g.rows() * g.cols(),
                });
            }
        }
        let n_layers = self.layers.len();
        let mut grads = ParamGrads::zeros_like(self);
        let mut delta = grad_logits.clone();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let input = &pass.activations[l];
            let (gw, gb) = &mut grads.layers[l];
            for k in 0..m {
                let d = delta.row(k);
                let x = input.row(k);
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    gb[o] += dv;
                    for (g, &xi) in gw.row_mut(o).iter_mut().zip(x) {
                        *g += dv * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = DenseMatrix::zeros(m, layer.weights.cols());
            for k in 0..m {
                let d = delta.row(k);
                let p = prev.row_mut(k);
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    for (pv, &w) in p.iter_mut().zip(layer.weights.row(o)) {
                        *pv += dv * w;
                    }
                }
            }
            if l == n_layers - 1 {
                prev.axpy(1.0, grad_features);
            }
            if self.is_relu(l - 1) {
                for (pv, &a) in prev.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if a <= 0.0 {
                        *pv = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok(grads)
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        let total: usize = self
            .layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum();
        if params.len() != total {
            return Err(Error::ShapeMismatch {
                context: "flat parameters",
                expected: total,
                found: params.len(),
            });
        }
        let mut rest = params;
        for l in &mut self.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&rest[..nw]);
            rest = &rest[nw..];
            let nb = l.bias.len();
            l.bias.copy_from_slice(&rest[..nb]);
            rest = &rest[nb..];
        }
        Ok(())
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && all_finite(&l.bias))
    }
}

/// SGD with classical momentum: `v ← μv − lr·g; θ ← θ + v`.
#[derive(Debug, Clone)]
pub struct Momentum {
    velocity: ParamGrads,
    momentum: f64,
}

impl Momentum {
    pub fn new(model: &MlpModel, momentum: f64) -> Self {
        Self {
            velocity: ParamGrads::zeros_like(model),
            momentum,
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &ParamGrads, lr: f64) {
        for ((layer, (vw, vb)), (gw, gb)) in model
            .layers
            .iter_mut()
            .zip(&mut self.velocity.layers)
            .zip(&grads.layers)
        {
            vw.scale(self.momentum);
            vw.axpy(-lr, gw);
            layer.weights.axpy(1.0, vw);
            for ((b, v), g) in layer.bias.iter_mut().zip(vb.iter_mut()).zip(gb) {
                *v = self.momentum * *v - lr * g;
                *b += *v;
            }
        }
    }
}
