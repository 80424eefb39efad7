use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::seeds::derive_seed;
use eeg2fmri_tensor::nd::{self, NdArray};
use eeg2fmri_tensor::{
    conv_nd, conv_transpose_nd, dense_forward, dropout_forward, glorot_uniform,
    gru_seq2seq_forward, Tensor, TensorError,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("layer {index} ({layer}) cannot follow shape {input:?}: {detail}")]
    ShapeComposition {
        index: usize,
        layer: String,
        input: Vec<usize>,
        detail: String,
    },

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Which pipeline component a network realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkRole {
    EEGEncoder,
    FMRIEncoder,
    Decoder,
    Discriminator,
    TemporalHead,
}

impl NetworkRole {
    pub fn tag(&self) -> &'static str {
        match self {
            NetworkRole::EEGEncoder => "eeg_encoder",
            NetworkRole::FMRIEncoder => "fmri_encoder",
            NetworkRole::Decoder => "decoder",
            NetworkRole::Discriminator => "discriminator",
            NetworkRole::TemporalHead => "temporal_head",
        }
    }
}

/// One layer of a network template. Kernel ranks must match the input rank;
/// Dense/Gru act on the trailing feature axis of [..., features] / [T, features].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv { kernel: Vec<usize>, stride: Vec<usize> },
    ConvTranspose { kernel: Vec<usize>, stride: Vec<usize> },
    Dense { units: usize },
    Gru { hidden: usize },
    Dropout { p: f64 },
    Flatten,
    Reshape { shape: Vec<usize> },
    Permute { axes: Vec<usize> },
    Relu,
    Sigmoid,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::ConvTranspose { .. } => "conv_transpose",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Gru { .. } => "gru",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Permute { .. } => "permute",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
        }
    }
}

/// Layer-by-layer description of one network, with a fixed input shape so
/// the whole composition is checkable before any parameter exists.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub role: NetworkRole,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

fn compose_err(index: usize, layer: &LayerSpec, input: &[usize], detail: String) -> ModelError {
    ModelError::ShapeComposition {
        index,
        layer: layer.name().into(),
        input: input.to_vec(),
        detail,
    }
}

/// Shape algebra for a single layer.
fn layer_output_shape(index: usize, layer: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    let fail = |detail: String| Err(compose_err(index, layer, input, detail));
    match layer {
        LayerSpec::Conv { kernel, stride } => {
            if kernel.len() != input.len() || stride.len() != input.len() {
                return fail(format!("kernel {kernel:?} stride {stride:?} rank mismatch"));
            }
            let mut out = Vec::with_capacity(input.len());
            for ((&d, &k), &s) in input.iter().zip(kernel).zip(stride) {
                if k == 0 || s == 0 || k > d {
                    return fail(format!("kernel {kernel:?} stride {stride:?} vs input"));
                }
                out.push((d - k) / s + 1);
            }
            Ok(out)
        }
        LayerSpec::ConvTranspose { kernel, stride } => {
            if kernel.len() != input.len() || stride.len() != input.len() {
                return fail(format!("kernel {kernel:?} stride {stride:?} rank mismatch"));
            }
            let mut out = Vec::with_capacity(input.len());
            for ((&d, &k), &s) in input.iter().zip(kernel).zip(stride) {
                if k == 0 || s == 0 {
                    return fail(format!("kernel {kernel:?} stride {stride:?} must be positive"));
                }
                out.push((d - 1) * s + k);
            }
            Ok(out)
        }
        LayerSpec::Dense { units } => {
            if input.is_empty() || *units == 0 {
                return fail(format!("dense({units}) needs a trailing feature axis"));
            }
            let mut out = input.to_vec();
            *out.last_mut().unwrap() = *units;
            Ok(out)
        }
        LayerSpec::Gru { hidden } => {
            if input.len() != 2 || *hidden == 0 {
                return fail(format!("gru({hidden}) needs [time, features] input"));
            }
            Ok(vec![input[0], *hidden])
        }
        LayerSpec::Dropout { p } => {
            if !(0.0..=1.0).contains(p) {
                return fail(format!("drop probability {p}"));
            }
            Ok(input.to_vec())
        }
        LayerSpec::Flatten => Ok(vec![nd::numel(input)]),
        LayerSpec::Reshape { shape } => {
            if nd::numel(shape) != nd::numel(input) {
                return fail(format!("reshape to {shape:?} changes element count"));
            }
            Ok(shape.clone())
        }
        LayerSpec::Permute { axes } => {
            let mut seen = vec![false; input.len()];
            if axes.len() != input.len() || axes.iter().any(|&a| {
                if a >= input.len() || seen[a] {
                    true
                } else {
                    seen[a] = true;
                    false
                }
            }) {
                return fail(format!("axes {axes:?} are not a permutation"));
            }
            Ok(axes.iter().map(|&a| input[a]).collect())
        }
        LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
    }
}

impl NetworkSpec {
    /// Walks the whole composition; errors pinpoint the offending layer.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer_output_shape(i, layer, &shape)?;
        }
        Ok(shape)
    }

    /// Trainable scalar count over all layers.
    pub fn param_count(&self) -> Result<usize> {
        let mut shape = self.input_shape.clone();
        let mut count = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            count += match layer {
                LayerSpec::Conv { kernel, .. } | LayerSpec::ConvTranspose { kernel, .. } => {
                    nd::numel(kernel) + 1
                }
                LayerSpec::Dense { units } => shape.last().unwrap() * units + units,
                LayerSpec::Gru { hidden } => {
                    let in_size = shape[1];
                    (in_size + hidden) * 3 * hidden + 3 * hidden
                }
                _ => 0,
            };
            shape = layer_output_shape(i, layer, &shape)?;
        }
        Ok(count)
    }
}

/// One built layer: the spec plus its parameter values, detached from graphs.
#[derive(Debug, Clone)]
pub struct BuiltLayer {
    pub spec: LayerSpec,
    /// (weights, biases) for parameterized layers.
    pub params: Option<(NdArray, NdArray)>,
}

/// A network with initialized parameters, ready to be bound into a graph.
#[derive(Debug, Clone)]
pub struct BuiltNetwork {
    pub spec: NetworkSpec,
    pub layers: Vec<BuiltLayer>,
}

/// Initializes every parameterized layer with fan-based uniform weights and
/// zero biases; layer i draws from its own stream derived from `seed`.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<BuiltNetwork> {
    spec.output_shape()?;
    let mut shape = spec.input_shape.clone();
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, &format!("layer/{i}")));
        let params = match layer {
            LayerSpec::Conv { kernel, .. } | LayerSpec::ConvTranspose { kernel, .. } => {
                let fan = nd::numel(kernel);
                Some((
                    glorot_uniform(kernel.clone(), fan, fan, &mut rng),
                    NdArray::scalar(0.0),
                ))
            }
            LayerSpec::Dense { units } => {
                let in_size = *shape.last().unwrap();
                Some((
                    glorot_uniform(vec![in_size, *units], in_size, *units, &mut rng),
                    NdArray::zeros(vec![*units]),
                ))
            }
            LayerSpec::Gru { hidden } => {
                let in_size = shape[1];
                Some((
                    glorot_uniform(
                        vec![in_size + hidden, 3 * hidden],
                        in_size + hidden,
                        3 * hidden,
                        &mut rng,
                    ),
                    NdArray::zeros(vec![3 * hidden]),
                ))
            }
            _ => None,
        };
        layers.push(BuiltLayer {
            spec: layer.clone(),
            params,
        });
        shape = layer_output_shape(i, layer, &shape)?;
    }
    Ok(BuiltNetwork {
        spec: spec.clone(),
        layers,
    })
}

impl BuiltNetwork {
    /// Lifts parameter values into graph leaves; with `requires_grad` they
    /// collect gradients for one optimizer step.
    pub fn bind(&self, requires_grad: bool) -> BoundNetwork {
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                spec: l.spec.clone(),
                params: l.params.as_ref().map(|(w, b)| {
                    (
                        Tensor::from_nd(w, requires_grad).expect("built weights are valid"),
                        Tensor::from_nd(b, requires_grad).expect("built biases are valid"),
                    )
                }),
            })
            .collect();
        BoundNetwork { layers }
    }

    /// w ← w − lr · scale · grad, reading gradients off the bound leaves.
    /// Returns false (leaving parameters untouched) if any used gradient is
    /// non-finite.
    pub fn apply_step(&mut self, bound: &BoundNetwork, lr: f64, scale: f64) -> bool {
        let mut updates = Vec::new();
        for (built, live) in self.layers.iter().zip(&bound.layers) {
            if let (Some(_), Some((w, b))) = (&built.params, &live.params) {
                let gw = w.grad_or_zeros();
                let gb = b.grad_or_zeros();
                if gw.iter().chain(&gb).any(|g| !g.is_finite()) {
                    return false;
                }
                updates.push((gw, gb));
            }
        }
        let mut it = updates.into_iter();
        for built in self.layers.iter_mut() {
            if let Some((w, b)) = &mut built.params {
                let (gw, gb) = it.next().expect("one update per parameterized layer");
                for (v, g) in w.data.iter_mut().zip(gw) {
                    *v -= lr * scale * g;
                }
                for (v, g) in b.data.iter_mut().zip(gb) {
                    *v -= lr * scale * g;
                }
            }
        }
        true
    }

    /// Clamps every weight and bias into [-c, c] (earth-mover critic rule).
    pub fn clip_weights(&mut self, c: f64) {
        for layer in &mut self.layers {
            if let Some((w, b)) = &mut layer.params {
                for v in w.data.iter_mut().chain(b.data.iter_mut()) {
                    *v = v.clamp(-c, c);
                }
            }
        }
    }

    /// Flat concatenation of all parameter values, in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Some((w, b)) = &layer.params {
                out.extend_from_slice(&w.data);
                out.extend_from_slice(&b.data);
            }
        }
        out
    }
}

/// Graph-side view of a built network for one forward/backward pass.
pub struct BoundNetwork {
    pub layers: Vec<BoundLayer>,
}

pub struct BoundLayer {
    pub spec: LayerSpec,
    pub params: Option<(Tensor, Tensor)>,
}

impl BoundNetwork {
    /// Every bound parameter leaf, in layer order.
    pub fn params(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Some((w, b)) = &layer.params {
                out.push(w.clone());
                out.push(b.clone());
            }
        }
        out
    }
}

/// Whether a pass trains (dropout live, seeded per layer) or infers.
#[derive(Debug, Clone, Copy)]
pub enum ForwardMode {
    Train { dropout_seed: u64 },
    Eval,
}

/// Runs the network on `input`. Dropout layer i draws its mask from
/// derive_seed(dropout_seed, "layer/i") so a fixed seed fixes every mask.
pub fn forward(net: &BoundNetwork, input: &Tensor, mode: ForwardMode) -> Result<Tensor> {
    let mut x = input.clone();
    for (i, layer) in net.layers.iter().enumerate() {
        x = match (&layer.spec, &layer.params) {
            (LayerSpec::Conv { stride, .. }, Some((w, b))) => conv_nd(&x, w, b, stride)?,
            (LayerSpec::ConvTranspose { stride, .. }, Some((w, b))) => {
                conv_transpose_nd(&x, w, b, stride)?
            }
            (LayerSpec::Dense { .. }, Some((w, b))) => dense_forward(&x, w, b)?,
            (LayerSpec::Gru { hidden }, Some((w, b))) => gru_seq2seq_forward(&x, w, b, *hidden)?,
            (LayerSpec::Dropout { p }, None) => match mode {
                ForwardMode::Train { dropout_seed } => {
                    dropout_forward(&x, *p, true, derive_seed(dropout_seed, &format!("layer/{i}")))?
                }
                ForwardMode::Eval => x,
            },
            (LayerSpec::Flatten, None) => x.reshape(vec![x.numel()])?,
            (LayerSpec::Reshape { shape }, None) => x.reshape(shape.clone())?,
            (LayerSpec::Permute { axes }, None) => x.permute(axes)?,
            (LayerSpec::Relu, None) => x.relu()?,
            (LayerSpec::Sigmoid, None) => x.sigmoid()?,
            (spec, _) => {
                return Err(compose_err(
                    i,
                    spec,
                    x.shape(),
                    "layer parameters out of sync with spec".into(),
                ))
            }
        };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_spec() -> NetworkSpec {
        NetworkSpec {
            role: NetworkRole::Decoder,
            input_shape: vec![4],
            layers: vec![LayerSpec::Dense { units: 2 }],
        }
    }

    #[test]
    fn dense_spec_counts_ten_parameters() {
        assert_eq!(dense_spec().param_count().unwrap(), 10);
        assert_eq!(dense_spec().output_shape().unwrap(), vec![2]);
    }

    #[test]
    fn same_seed_builds_bit_identical_parameters() {
        let spec = NetworkSpec {
            role: NetworkRole::EEGEncoder,
            input_shape: vec![3, 5, 4],
            layers: vec![
                LayerSpec::Conv {
                    kernel: vec![2, 2, 1],
                    stride: vec![1, 1, 1],
                },
                LayerSpec::Relu,
                LayerSpec::Permute { axes: vec![2, 0, 1] },
                LayerSpec::Reshape { shape: vec![4, 8] },
                LayerSpec::Dense { units: 3 },
            ],
        };
        let a = build_network(&spec, 99).unwrap();
        let b = build_network(&spec, 99).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        let c = build_network(&spec, 100).unwrap();
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn incompatible_composition_is_rejected_with_layer_context() {
        let spec = NetworkSpec {
            role: NetworkRole::Decoder,
            input_shape: vec![2, 2],
            layers: vec![
                LayerSpec::Relu,
                LayerSpec::Conv {
                    kernel: vec![3, 1],
                    stride: vec![1, 1],
                },
            ],
        };
        match spec.output_shape() {
            Err(ModelError::ShapeComposition { index, layer, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(layer, "conv");
            }
            other => panic!("expected composition error, got {other:?}"),
        }
    }

    #[test]
    fn shape_algebra_matches_layer_formulas() {
        let spec = NetworkSpec {
            role: NetworkRole::FMRIEncoder,
            input_shape: vec![14, 4, 4, 3],
            layers: vec![
                LayerSpec::Conv {
                    kernel: vec![1, 2, 2, 2],
                    stride: vec![1, 1, 1, 1],
                },
                LayerSpec::Relu,
                LayerSpec::Dropout { p: 0.5 },
                LayerSpec::Reshape { shape: vec![14, 18] },
                LayerSpec::Dense { units: 6 },
            ],
        };
        assert_eq!(spec.output_shape().unwrap(), vec![14, 6]);

        let up = NetworkSpec {
            role: NetworkRole::Decoder,
            input_shape: vec![14, 6],
            layers: vec![
                LayerSpec::Dense { units: 12 },
                LayerSpec::Reshape { shape: vec![14, 2, 2, 3] },
                LayerSpec::ConvTranspose {
                    kernel: vec![1, 3, 3, 1],
                    stride: vec![1, 1, 1, 1],
                },
            ],
        };
        assert_eq!(up.output_shape().unwrap(), vec![14, 4, 4, 3]);
    }

    #[test]
    fn forward_matches_manual_dense_and_respects_eval_dropout() {
        let spec = NetworkSpec {
            role: NetworkRole::Decoder,
            input_shape: vec![2],
            layers: vec![
                LayerSpec::Dense { units: 1 },
                LayerSpec::Dropout { p: 1.0 },
            ],
        };
        let mut net = build_network(&spec, 1).unwrap();
        net.layers[0].params = Some((
            NdArray::new(vec![2, 1], vec![2.0, 3.0]).unwrap(),
            NdArray::new(vec![1], vec![1.0]).unwrap(),
        ));
        let bound = net.bind(false);
        let x = Tensor::from_vec(vec![1.0, 1.0], vec![2]).unwrap();
        let eval = forward(&bound, &x, ForwardMode::Eval).unwrap();
        assert_eq!(eval.data(), &[6.0]);
        let trained = forward(&bound, &x, ForwardMode::Train { dropout_seed: 3 }).unwrap();
        assert_eq!(trained.data(), &[0.0]); // p = 1 drops everything
    }

    #[test]
    fn gru_head_preserves_time_axis() {
        let spec = NetworkSpec {
            role: NetworkRole::TemporalHead,
            input_shape: vec![14, 6],
            layers: vec![LayerSpec::Dense { units: 1 }, LayerSpec::Gru { hidden: 3 }],
        };
        assert_eq!(spec.output_shape().unwrap(), vec![14, 3]);
        let net = build_network(&spec, 7).unwrap();
        let x = Tensor::zeros(vec![14, 6]);
        let y = forward(&net.bind(false), &x, ForwardMode::Eval).unwrap();
        assert_eq!(y.shape(), &[14, 3]);
    }

    #[test]
    fn apply_step_moves_against_gradient_and_lr_zero_is_identity() {
        let spec = dense_spec();
        let mut net = build_network(&spec, 5).unwrap();
        let before = net.flat_params();

        let bound = net.bind(true);
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], vec![4]).unwrap();
        let y = forward(&bound, &x, ForwardMode::Eval).unwrap();
        y.sum().unwrap().backward().unwrap();
        let mut frozen = net.clone();
        assert!(frozen.apply_step(&bound, 0.0, 1.0));
        assert_eq!(frozen.flat_params(), before);

        assert!(net.apply_step(&bound, 0.1, 1.0));
        let after = net.flat_params();
        assert_ne!(after, before);
        // dL/db = 1 for both output units: bias moves by exactly -0.1.
        let b_idx = before.len() - 2;
        assert!((after[b_idx] - (before[b_idx] - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn clip_weights_bounds_every_parameter() {
        let mut net = build_network(&dense_spec(), 2).unwrap();
        net.clip_weights(0.01);
        assert!(net.flat_params().iter().all(|v| v.abs() <= 0.01));
    }
}
