use crate::error::{Result, TensorError};

/// Plain row-major value array detached from any autodiff graph.
///
/// Used for parameter storage between training steps and for signal
/// payloads before they enter a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NdArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(TensorError::shape(
                "ndarray",
                format!("shape {:?} holds {} values, got {}", shape, numel(&shape), data.len()),
            ));
        }
        Ok(NdArray { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        NdArray {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = numel(&shape);
        NdArray {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        NdArray {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Element count of a shape; the empty shape (rank 0) holds one scalar.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides: stride of the last axis is 1.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * shape[i + 1];
    }
    out
}

/// Flat index of a coordinate under row-major layout.
pub fn flat_index(coord: &[usize], strides: &[usize]) -> usize {
    coord.iter().zip(strides).map(|(c, s)| c * s).sum()
}

/// Advance a row-major coordinate odometer; returns false after the last coordinate.
pub fn next_coord(coord: &mut [usize], shape: &[usize]) -> bool {
    for axis in (0..shape.len()).rev() {
        coord[axis] += 1;
        if coord[axis] < shape[axis] {
            return true;
        }
        coord[axis] = 0;
    }
    false
}

/// Reorder `data` (row-major under `shape`) so axis `axes[i]` of the input
/// becomes axis `i` of the output. Returns the permuted data and shape.
pub fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    assert_eq!(axes.len(), shape.len());
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let n = numel(&out_shape);
    let mut out = vec![0.0; n];
    if n == 0 {
        return (out, out_shape);
    }
    let mut coord = vec![0usize; out_shape.len()];
    for slot in out.iter_mut() {
        let mut src = 0usize;
        for (o_axis, &c) in coord.iter().enumerate() {
            src += c * in_strides[axes[o_axis]];
        }
        *slot = data[src];
        next_coord(&mut coord, &out_shape);
    }
    (out, out_shape)
}

/// Inverse of a permutation given as axis indices.
pub fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[5]), vec![1]);
        assert_eq!(strides(&[]), Vec::<usize>::new());
    }

    #[test]
    fn scalar_shape_holds_one_element() {
        assert_eq!(numel(&[]), 1);
        let s = NdArray::scalar(3.5);
        assert_eq!(s.numel(), 1);
        assert_eq!(s.rank(), 0);
    }

    #[test]
    fn odometer_walks_row_major_order() {
        let shape = [2, 2];
        let mut coord = vec![0, 0];
        let mut seen = vec![coord.clone()];
        while next_coord(&mut coord, &shape) {
            seen.push(coord.clone());
        }
        assert_eq!(seen, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn permute_transposes_matrix() {
        // [[1,2,3],[4,5,6]] transposed.
        let (out, shape) = permute_data(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3], &[1, 0]);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(out, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn shape_data_length_must_agree() {
        assert!(NdArray::new(vec![2, 2], vec![1.0; 3]).is_err());
    }
}
