use crate::error::{Result, TensorError};
use crate::nd::{self};
use crate::tensor::Tensor;

/// Geometry shared by the conv forward and backward loops: flat offsets of
/// every kernel element relative to an output point's input-base index.
struct ConvGeometry {
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    stride: Vec<usize>,
    in_strides: Vec<usize>,
    kernel_offsets: Vec<usize>,
}

fn validate_common(
    op: &'static str,
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: &[usize],
) -> Result<()> {
    if input.rank() == 0 || kernel.rank() != input.rank() {
        return Err(TensorError::shape(
            op,
            format!("input rank {} vs kernel rank {}", input.rank(), kernel.rank()),
        ));
    }
    if stride.len() != input.rank() || stride.iter().any(|&s| s == 0) {
        return Err(TensorError::shape(
            op,
            format!("stride {:?} invalid for rank {}", stride, input.rank()),
        ));
    }
    if input.shape().iter().any(|&d| d == 0) || kernel.shape().iter().any(|&k| k == 0) {
        return Err(TensorError::shape(op, "zero-sized axis"));
    }
    if !bias.is_scalar() {
        return Err(TensorError::shape(
            op,
            format!("bias must be a scalar, got {:?}", bias.shape()),
        ));
    }
    Ok(())
}

fn kernel_offsets(kernel_shape: &[usize], in_strides: &[usize]) -> Vec<usize> {
    let n = nd::numel(kernel_shape);
    let mut offsets = Vec::with_capacity(n);
    let mut coord = vec![0usize; kernel_shape.len()];
    loop {
        offsets.push(nd::flat_index(&coord, in_strides));
        if !nd::next_coord(&mut coord, kernel_shape) {
            break;
        }
    }
    offsets
}

/// Base input index for each output coordinate, in row-major output order.
fn output_bases(geom: &ConvGeometry) -> Vec<usize> {
    let n = nd::numel(&geom.out_shape);
    let mut bases = Vec::with_capacity(n);
    let mut coord = vec![0usize; geom.out_shape.len()];
    loop {
        let base: usize = coord
            .iter()
            .zip(&geom.stride)
            .zip(&geom.in_strides)
            .map(|((c, s), st)| c * s * st)
            .sum();
        bases.push(base);
        if !nd::next_coord(&mut coord, &geom.out_shape) {
            break;
        }
    }
    bases
}

/// Valid N-D cross-correlation with a single kernel and scalar bias:
/// out[o] = bias + sum_k in[o * stride + k] * w[k].
/// Output axis i has length floor((d_i - k_i) / s_i) + 1.
pub fn conv_nd(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: &[usize]) -> Result<Tensor> {
    validate_common("conv", input, kernel, bias, stride)?;
    let mut out_shape = Vec::with_capacity(input.rank());
    for ((&d, &k), &s) in input.shape().iter().zip(kernel.shape()).zip(stride) {
        if k > d {
            return Err(TensorError::shape(
                "conv",
                format!("kernel {:?} exceeds input {:?}", kernel.shape(), input.shape()),
            ));
        }
        out_shape.push((d - k) / s + 1);
    }
    let geom = ConvGeometry {
        in_shape: input.shape().to_vec(),
        out_shape: out_shape.clone(),
        stride: stride.to_vec(),
        in_strides: nd::strides(input.shape()),
        kernel_offsets: kernel_offsets(kernel.shape(), &nd::strides(input.shape())),
    };
    let bases = output_bases(&geom);
    let b = bias.value();
    let x = input.data();
    let w = kernel.data();
    let mut data = Vec::with_capacity(bases.len());
    for &base in &bases {
        let mut acc = b;
        for (j, &off) in geom.kernel_offsets.iter().enumerate() {
            acc += x[base + off] * w[j];
        }
        data.push(acc);
    }

    let input_c = input.clone();
    let kernel_c = kernel.clone();
    let need_dx = input.requires_grad();
    let need_dw = kernel.requires_grad();
    let in_numel = input.numel();
    let w_numel = kernel.numel();
    Tensor::from_op(
        "conv",
        out_shape,
        data,
        vec![input.clone(), kernel.clone(), bias.clone()],
        Box::new(move |_, g| {
            let x = input_c.data();
            let w = kernel_c.data();
            let mut dx = if need_dx { Some(vec![0.0; in_numel]) } else { None };
            let mut dw = if need_dw { Some(vec![0.0; w_numel]) } else { None };
            for (o, &base) in bases.iter().enumerate() {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                if let Some(dx) = dx.as_mut() {
                    for (j, &off) in geom.kernel_offsets.iter().enumerate() {
                        dx[base + off] += go * w[j];
                    }
                }
                if let Some(dw) = dw.as_mut() {
                    for (j, &off) in geom.kernel_offsets.iter().enumerate() {
                        dw[j] += go * x[base + off];
                    }
                }
            }
            let db = g.iter().sum::<f64>();
            vec![dx, dw, Some(vec![db])]
        }),
    )
}

/// Transposed N-D convolution (adjoint of `conv_nd` up to bias):
/// out[i * stride + k] += in[i] * w[k], plus a scalar bias everywhere.
/// Output axis i has length (d_i - 1) * s_i + k_i.
pub fn conv_transpose_nd(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: &[usize],
) -> Result<Tensor> {
    validate_common("conv_transpose", input, kernel, bias, stride)?;
    let mut out_shape = Vec::with_capacity(input.rank());
    for ((&d, &k), &s) in input.shape().iter().zip(kernel.shape()).zip(stride) {
        out_shape.push((d - 1) * s + k);
    }
    // Scatter geometry mirrors conv with input and output roles swapped.
    let out_strides = nd::strides(&out_shape);
    let geom = ConvGeometry {
        in_shape: out_shape.clone(),
        out_shape: input.shape().to_vec(),
        stride: stride.to_vec(),
        in_strides: out_strides.clone(),
        kernel_offsets: kernel_offsets(kernel.shape(), &out_strides),
    };
    let _ = &geom.in_shape;
    let bases = output_bases(&geom); // base output index per input element
    let b = bias.value();
    let x = input.data();
    let w = kernel.data();
    let mut data = vec![b; nd::numel(&out_shape)];
    for (i, &base) in bases.iter().enumerate() {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for (j, &off) in geom.kernel_offsets.iter().enumerate() {
            data[base + off] += xi * w[j];
        }
    }

    let input_c = input.clone();
    let kernel_c = kernel.clone();
    let need_dx = input.requires_grad();
    let need_dw = kernel.requires_grad();
    let in_numel = input.numel();
    let w_numel = kernel.numel();
    Tensor::from_op(
        "conv_transpose",
        out_shape,
        data,
        vec![input.clone(), kernel.clone(), bias.clone()],
        Box::new(move |_, g| {
            let x = input_c.data();
            let w = kernel_c.data();
            let mut dx = if need_dx { Some(vec![0.0; in_numel]) } else { None };
            let mut dw = if need_dw { Some(vec![0.0; w_numel]) } else { None };
            for (i, &base) in bases.iter().enumerate() {
                if let Some(dx) = dx.as_mut() {
                    let mut acc = 0.0;
                    for (j, &off) in geom.kernel_offsets.iter().enumerate() {
                        acc += g[base + off] * w[j];
                    }
                    dx[i] = acc;
                }
                if let Some(dw) = dw.as_mut() {
                    let xi = x[i];
                    if xi != 0.0 {
                        for (j, &off) in geom.kernel_offsets.iter().enumerate() {
                            dw[j] += xi * g[base + off];
                        }
                    }
                }
            }
            let db = g.iter().sum::<f64>();
            vec![dx, dw, Some(vec![db])]
        }),
    )
}
