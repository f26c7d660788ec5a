//! Fully connected ReLU network with identity output and exact backprop.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::matrix::{gemm, Matrix};
use crate::{Error, Result};

/// One affine layer `z = h W^T + b`; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }
}

/// Layer stack; ReLU after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Dense>,
}

/// Gradients share the parameter layout.
pub type MlpGrads = MlpParams;

impl MlpParams {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("mlp.depth", "depth must be at least 1"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias length {} vs {} outputs",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub(crate) fn from_layers_unchecked(layers: Vec<Dense>) -> Self {
        Self { layers }
    }
}

/// Builds `input -> hidden -> ... -> output` with `depth` weight matrices.
pub fn init_mlp(
    input_dim: usize,
    hidden_dim: usize,
    depth: usize,
    output_dim: usize,
    seed: u64,
) -> Result<MlpParams> {
    init_mlp_with_rng(
        input_dim,
        hidden_dim,
        depth,
        output_dim,
        &mut crate::rng::seeded(seed),
    )
}

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
pub fn init_mlp_with_rng<R: Rng + ?Sized>(
    input_dim: usize,
    hidden_dim: usize,
    depth: usize,
    output_dim: usize,
    rng: &mut R,
) -> Result<MlpParams> {
    for (name, v) in [
        ("input_dim", input_dim),
        ("hidden_dim", hidden_dim),
        ("depth", depth),
        ("output_dim", output_dim),
    ] {
        if v == 0 {
            return Err(Error::config(format!("mlp.{name}"), "must be at least 1"));
        }
    }
    let mut dims = Vec::with_capacity(depth + 1);
    dims.push(input_dim);
    dims.extend(std::iter::repeat_n(hidden_dim, depth - 1));
    dims.push(output_dim);

    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            Dense {
                weight: Matrix::from_vec(fan_out, fan_in, data).expect("sized"),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    MlpParams::new(layers)
}

/// Layer inputs recorded by a forward pass, starting at layer `start`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    start: usize,
    inputs: Vec<Matrix>,
}

impl MlpCache {
    pub fn batch(&self) -> usize {
        self.inputs[0].rows()
    }

    pub(crate) fn layer_input(&self, i: usize) -> &Matrix {
        &self.inputs[i]
    }
}

pub fn mlp_forward(params: &MlpParams, x: &Matrix) -> Result<(Matrix, MlpCache)> {
    forward_layers(params, 0, x.clone())
}

pub fn mlp_backward(params: &MlpParams, cache: &MlpCache, grad_output: &Matrix) -> Result<MlpGrads> {
    if cache.start != 0 {
        return Err(Error::Shape("cache does not cover the whole network".into()));
    }
    let (layers, _) = backward_layers(params, cache, grad_output, false)?;
    Ok(MlpParams::from_layers_unchecked(layers))
}

/// Runs layers `start..` on `h`, which is taken as the (already activated)
/// input of layer `start`.
pub(crate) fn forward_layers(
    params: &MlpParams,
    start: usize,
    h: Matrix,
) -> Result<(Matrix, MlpCache)> {
    let layers = &params.layers[start..];
    if h.cols() != layers[0].in_dim() {
        return Err(Error::Shape(format!(
            "input has {} columns, layer {start} expects {}",
            h.cols(),
            layers[0].in_dim()
        )));
    }
    let last = layers.len() - 1;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut h = h;
    for (i, layer) in layers.iter().enumerate() {
        let mut z = Matrix::zeros(h.rows(), layer.out_dim());
        for r in 0..z.rows() {
            z.row_mut(r).copy_from_slice(&layer.bias);
        }
        gemm(&h, false, &layer.weight, true, &mut z, 1.0);
        if i < last {
            z.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        inputs.push(std::mem::replace(&mut h, z));
    }
    Ok((h, MlpCache { start, inputs }))
}

/// Reverse pass over the layers covered by `cache`. Returns their gradients
/// (in order) and, when asked, the gradient w.r.t. the cached input of the
/// first covered layer (no activation mask applied to it).
pub(crate) fn backward_layers(
    params: &MlpParams,
    cache: &MlpCache,
    grad_output: &Matrix,
    want_input_grad: bool,
) -> Result<(Vec<Dense>, Option<Matrix>)> {
    let layers = &params.layers[cache.start.min(params.layers.len())..];
    if cache.inputs.len() != layers.len()
        || cache
            .inputs
            .iter()
            .zip(layers)
            .any(|(h, l)| h.cols() != l.in_dim() || h.rows() != cache.batch())
    {
        return Err(Error::Shape("cache does not match these parameters".into()));
    }
    let last = layers.len() - 1;
    if grad_output.shape() != (cache.batch(), layers[last].out_dim()) {
        return Err(Error::Shape(format!(
            "grad_output is {}x{}, expected {}x{}",
            grad_output.rows(),
            grad_output.cols(),
            cache.batch(),
            layers[last].out_dim()
        )));
    }

    let mut grads: Vec<Dense> = Vec::with_capacity(layers.len());
    let mut g = grad_output.clone();
    let mut input_grad = None;
    for i in (0..layers.len()).rev() {
        let layer = &layers[i];
        let h = &cache.inputs[i];
        let mut dw = Matrix::zeros(layer.out_dim(), layer.in_dim());
        gemm(&g, true, h, false, &mut dw, 0.0);
        let mut db = vec![0.0; layer.out_dim()];
        for r in 0..g.rows() {
            for (acc, v) in db.iter_mut().zip(g.row(r)) {
                *acc += v;
            }
        }
        grads.push(Dense {
            weight: dw,
            bias: db,
        });
        if i > 0 || want_input_grad {
            let mut gh = Matrix::zeros(g.rows(), layer.in_dim());
            gemm(&g, false, &layer.weight, false, &mut gh, 0.0);
            if i > 0 {
                // ReLU mask: the cached input is relu(z), positive iff z > 0.
                for (gv, &hv) in gh.data_mut().iter_mut().zip(h.data()) {
                    if hv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                g = gh;
            } else {
                input_grad = Some(gh);
            }
        }
    }
    grads.reverse();
    Ok((grads, input_grad))
}
