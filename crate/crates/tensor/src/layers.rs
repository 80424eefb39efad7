use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Result, TensorError};
use crate::nd::NdArray;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    Dense,
    Gru,
    Dropout,
}

/// Per-layer hyperparameters that are fixed at build time.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerHyper {
    Conv { stride: Vec<usize> },
    ConvTranspose { stride: Vec<usize> },
    Dense,
    /// GRU gate weights are packed as [input_size + hidden, 3 * hidden]
    /// with column blocks ordered update, reset, candidate; biases [3 * hidden].
    Gru { input_size: usize, hidden: usize },
    Dropout { p: f64 },
}

/// Trainable state of one layer, detached from any graph.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub weights: NdArray,
    pub biases: NdArray,
    pub hyper: LayerHyper,
}

impl LayerParams {
    pub fn kind(&self) -> LayerKind {
        match self.hyper {
            LayerHyper::Conv { .. } => LayerKind::Conv,
            LayerHyper::ConvTranspose { .. } => LayerKind::ConvTranspose,
            LayerHyper::Dense => LayerKind::Dense,
            LayerHyper::Gru { .. } => LayerKind::Gru,
            LayerHyper::Dropout { .. } => LayerKind::Dropout,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.numel() + self.biases.numel()
    }
}

/// Fan-based uniform init on [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha12Rng,
) -> NdArray {
    let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen::<f64>() * 2.0 * a - a).collect();
    NdArray { shape, data }
}

/// Affine map along the last axis: [..., in] x [in, out] + [out] -> [..., out].
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if weight.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != weight.shape()[1] {
        return Err(TensorError::shape(
            "dense",
            format!("weight {:?} bias {:?}", weight.shape(), bias.shape()),
        ));
    }
    let (w_in, w_out) = (weight.shape()[0], weight.shape()[1]);
    if input.rank() == 0 || *input.shape().last().unwrap() != w_in {
        return Err(TensorError::shape(
            "dense",
            format!("input {:?} incompatible with weight {:?}", input.shape(), weight.shape()),
        ));
    }
    let lead = input.numel() / w_in;
    let flat = input.reshape(vec![lead, w_in])?;
    let y = flat.matmul(weight)?.add_bias(bias)?;
    let mut out_shape = input.shape()[..input.rank() - 1].to_vec();
    out_shape.push(w_out);
    y.reshape(out_shape)
}

/// Gated recurrent unit over a [T, in] sequence, returning all hidden states
/// as [T, hidden]. h_t = (1 - z_t) * h_{t-1} + z_t * cand_t with sigmoid
/// update/reset gates and a tanh candidate; h_0 = 0.
pub fn gru_seq2seq_forward(
    input: &Tensor,
    weights: &Tensor,
    biases: &Tensor,
    hidden: usize,
) -> Result<Tensor> {
    if input.rank() != 2 {
        return Err(TensorError::shape(
            "gru",
            format!("expected [T, in] input, got {:?}", input.shape()),
        ));
    }
    let (t_len, in_size) = (input.shape()[0], input.shape()[1]);
    if hidden == 0
        || weights.shape() != [in_size + hidden, 3 * hidden]
        || biases.shape() != [3 * hidden]
    {
        return Err(TensorError::shape(
            "gru",
            format!(
                "weights {:?} biases {:?} incompatible with in={} hidden={}",
                weights.shape(),
                biases.shape(),
                in_size,
                hidden
            ),
        ));
    }
    let w = weights.narrow(0, 0, in_size)?;
    let u = weights.narrow(0, in_size, hidden)?;
    let wz = w.narrow(1, 0, hidden)?;
    let wr = w.narrow(1, hidden, hidden)?;
    let wh = w.narrow(1, 2 * hidden, hidden)?;
    let uz = u.narrow(1, 0, hidden)?;
    let ur = u.narrow(1, hidden, hidden)?;
    let uh = u.narrow(1, 2 * hidden, hidden)?;
    let bz = biases.narrow(0, 0, hidden)?;
    let br = biases.narrow(0, hidden, hidden)?;
    let bh = biases.narrow(0, 2 * hidden, hidden)?;

    let mut h = Tensor::zeros(vec![1, hidden]);
    let mut states = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let x_t = input.narrow(0, t, 1)?;
        let z = x_t
            .matmul(&wz)?
            .add(&h.matmul(&uz)?)?
            .add_bias(&bz)?
            .sigmoid()?;
        let r = x_t
            .matmul(&wr)?
            .add(&h.matmul(&ur)?)?
            .add_bias(&br)?
            .sigmoid()?;
        let cand = x_t
            .matmul(&wh)?
            .add(&r.mul(&h)?.matmul(&uh)?)?
            .add_bias(&bh)?
            .tanh()?;
        h = z.one_minus()?.mul(&h)?.add(&z.mul(&cand)?)?;
        states.push(h.clone());
    }
    Tensor::concat0(&states)
}

/// Inverted dropout: each element survives with probability 1 - p and is
/// scaled by 1 / (1 - p); p = 1 zeroes everything. Identity when not
/// training or p = 0. The mask is a constant derived from `seed` alone.
pub fn dropout_forward(input: &Tensor, p: f64, training: bool, seed: u64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(TensorError::InvalidProbability { p });
    }
    if !training || p == 0.0 {
        return Ok(input.clone());
    }
    let mask = if p >= 1.0 {
        vec![0.0; input.numel()]
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let keep_scale = 1.0 / (1.0 - p);
        (0..input.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect()
    };
    let mask = Tensor::from_vec(mask, input.shape().to_vec())?;
    input.mul(&mask)
}
