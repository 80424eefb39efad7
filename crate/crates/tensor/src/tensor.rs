use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, TensorError};
use crate::nd::{self, NdArray};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Backward rule of one op: takes (node output data, upstream gradient) and
/// returns one gradient per parent, `None` for parents that do not need one.
type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Node of a reverse-mode autodiff DAG. Cloning is cheap (shared handle).
///
/// Forward ops build the graph eagerly; `backward` on a scalar root
/// accumulates gradients into every reachable leaf with `requires_grad`.
/// Leaf gradients persist and keep accumulating until `clear_grads`.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn new_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

fn all_finite(data: &[f64]) -> bool {
    data.iter().all(|v| v.is_finite())
}

impl Tensor {
    // ----- constructors -----

    /// Constant leaf. Rejects NaN/Inf payloads and shape/data disagreement.
    pub fn from_vec(data: Vec<f64>, shape: Vec<usize>) -> Result<Tensor> {
        Self::leaf(data, shape, false)
    }

    /// Trainable leaf: participates in gradient accumulation.
    pub fn param(data: Vec<f64>, shape: Vec<usize>) -> Result<Tensor> {
        Self::leaf(data, shape, true)
    }

    pub fn from_nd(nd: &NdArray, requires_grad: bool) -> Result<Tensor> {
        Self::leaf(nd.data.clone(), nd.shape.clone(), requires_grad)
    }

    fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<Tensor> {
        if nd::numel(&shape) != data.len() {
            return Err(TensorError::shape(
                "leaf",
                format!("shape {:?} holds {} values, got {}", shape, nd::numel(&shape), data.len()),
            ));
        }
        if !all_finite(&data) {
            return Err(TensorError::NumericOverflow { op: "leaf" });
        }
        Ok(Tensor {
            inner: Rc::new(Inner {
                id: new_id(),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
            }),
        })
    }

    /// Rank-0 constant. Panics on a non-finite value: scalar constants come
    /// from validated configuration, never from data.
    pub fn scalar(value: f64) -> Tensor {
        assert!(value.is_finite(), "scalar constant must be finite");
        Self::leaf(vec![value], vec![], false).expect("scalar leaf")
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = nd::numel(&shape);
        Self::leaf(vec![0.0; n], shape, false).expect("zeros leaf")
    }

    /// Graph-op constructor: checks the output for NaN/Inf and drops graph
    /// structure when no parent tracks gradients.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Result<Tensor> {
        debug_assert_eq!(nd::numel(&shape), data.len());
        if !all_finite(&data) {
            return Err(TensorError::NumericOverflow { op });
        }
        let requires_grad = parents.iter().any(|p| p.inner.requires_grad);
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Ok(Tensor {
            inner: Rc::new(Inner {
                id: new_id(),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        })
    }

    // ----- accessors -----

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Value of a single-element tensor. Panics otherwise.
    pub fn value(&self) -> f64 {
        assert!(self.is_scalar(), "value() requires a scalar tensor");
        self.inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn to_nd(&self) -> NdArray {
        NdArray {
            shape: self.inner.shape.clone(),
            data: self.inner.data.clone(),
        }
    }

    /// Accumulated gradient, if any backward pass has reached this node.
    /// Only leaves retain gradients; interior nodes always return None.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// Accumulated gradient, or zeros when no path from any loss reached
    /// this node (a disconnected parameter has zero gradient, not an error).
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.grad().unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn reset_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    // ----- graph traversal -----

    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        if !self.inner.requires_grad {
            return order;
        }
        visited.insert(self.id());
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        while let Some((node, idx)) = stack.last_mut() {
            let parents = &node.inner.parents;
            if *idx < parents.len() {
                let p = parents[*idx].clone();
                *idx += 1;
                if p.inner.requires_grad && visited.insert(p.id()) {
                    stack.push((p, 0));
                }
            } else {
                let done = node.clone();
                stack.pop();
                order.push(done);
            }
        }
        order
    }

    /// True when `leaf` is reachable from this node through gradient-tracked
    /// edges, i.e. a backward pass from here would touch it.
    pub fn reaches(&self, leaf: &Tensor) -> bool {
        self.topo_order().iter().any(|n| n.id() == leaf.id())
    }

    /// Reverse-mode sweep from a scalar root. Per-call flow buffers carry
    /// gradients through interior nodes; only leaves persist them, so
    /// repeated backward calls sum leaf gradients without double-counting
    /// interior paths. Call `clear_grads` between independent passes.
    pub fn backward(&self) -> Result<()> {
        if !self.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: self.inner.shape.clone(),
            });
        }
        if !self.inner.requires_grad {
            return Ok(());
        }
        let topo = self.topo_order();
        let mut flows: HashMap<u64, Vec<f64>> = HashMap::new();
        flows.insert(self.id(), vec![1.0]);
        for node in topo.iter().rev() {
            let Some(upstream) = flows.remove(&node.id()) else {
                continue;
            };
            let Some(bw) = &node.inner.backward else {
                accumulate(node, &upstream);
                continue;
            };
            let contribs = bw(&node.inner.data, &upstream);
            debug_assert_eq!(contribs.len(), node.inner.parents.len());
            for (parent, contrib) in node.inner.parents.iter().zip(contribs) {
                if let Some(c) = contrib {
                    if parent.inner.requires_grad {
                        debug_assert_eq!(c.len(), parent.numel());
                        match flows.entry(parent.id()) {
                            std::collections::hash_map::Entry::Occupied(mut e) => {
                                for (acc, v) in e.get_mut().iter_mut().zip(&c) {
                                    *acc += v;
                                }
                            }
                            std::collections::hash_map::Entry::Vacant(e) => {
                                e.insert(c);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Clears gradients on every gradient-tracked node reachable from here.
    pub fn clear_grads(&self) {
        for node in self.topo_order() {
            node.reset_grad();
        }
    }

    // ----- elementwise binary ops -----

    fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(TensorError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a + b)
            .collect();
        Tensor::from_op(
            "add",
            self.inner.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|_, g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "sub")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a - b)
            .collect();
        Tensor::from_op(
            "sub",
            self.inner.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|_, g| {
                vec![
                    Some(g.to_vec()),
                    Some(g.iter().map(|v| -v).collect()),
                ]
            }),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "mul")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| a * b)
            .collect();
        let a = self.clone();
        let b = other.clone();
        Tensor::from_op(
            "mul",
            self.inner.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                let da = g.iter().zip(b.data()).map(|(g, b)| g * b).collect();
                let db = g.iter().zip(a.data()).map(|(g, a)| g * a).collect();
                vec![Some(da), Some(db)]
            }),
        )
    }

    pub fn square(&self) -> Result<Tensor> {
        self.mul(self)
    }

    /// Elementwise sum of n same-shaped tensors as a single graph node.
    pub fn add_n(terms: &[Tensor]) -> Result<Tensor> {
        let first = terms
            .first()
            .ok_or_else(|| TensorError::shape("add_n", "empty term list"))?;
        let shape = first.shape().to_vec();
        for t in terms {
            if t.shape() != shape.as_slice() {
                return Err(TensorError::shape(
                    "add_n",
                    format!("{:?} vs {:?}", shape, t.shape()),
                ));
            }
        }
        let mut data = vec![0.0; first.numel()];
        for t in terms {
            for (acc, v) in data.iter_mut().zip(t.data()) {
                *acc += v;
            }
        }
        let n = terms.len();
        Tensor::from_op(
            "add_n",
            shape,
            data,
            terms.to_vec(),
            Box::new(move |_, g| (0..n).map(|_| Some(g.to_vec())).collect()),
        )
    }

    // ----- elementwise unary ops -----

    pub fn neg(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| -v).collect();
        Tensor::from_op(
            "neg",
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(|_, g| vec![Some(g.iter().map(|v| -v).collect())]),
        )
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(
            "scale",
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |_, g| vec![Some(g.iter().map(|v| v * c).collect())]),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v + c).collect();
        Tensor::from_op(
            "add_scalar",
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(|_, g| vec![Some(g.to_vec())]),
        )
    }

    /// 1 - x, the complement used by gate mixing and entropy losses.
    pub fn one_minus(&self) -> Result<Tensor> {
        self.neg()?.add_scalar(1.0)
    }

    pub fn abs(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.abs()).collect();
        let a = self.clone();
        Tensor::from_op(
            "abs",
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |_, g| {
                // Subgradient 0 at the kink.
                let da = g
                    .iter()
                    .zip(a.data())
                    .map(|(g, x)| {
                        if *x > 0.0 {
                            *g
                        } else if *x < 0.0 {
                            -*g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![Some(da)]
            }),
        )
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.max(0.0)).collect();
        let a = self.clone();
        Tensor::from_op(
            "relu",
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |_, g| {
                let da = g
                    .iter()
                    .zip(a.data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![Some(da)]
            }),
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| stable_sigmoid(x)).collect();
        Tensor::from_op(
            "sigmoid",
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(|y, g| {
                let da = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                vec![Some(da)]
            }),
        )
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.tanh()).collect();
        Tensor::from_op(
            "tanh",
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(|y, g| {
                let da = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                vec![Some(da)]
            }),
        )
    }

    /// Natural log. ln(0) and ln(negative) surface as NumericOverflow.
    pub fn ln(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.ln()).collect();
        let a = self.clone();
        Tensor::from_op(
            "ln",
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |_, g| {
                let da = g.iter().zip(a.data()).map(|(g, x)| g / x).collect();
                vec![Some(da)]
            }),
        )
    }

    /// Elementwise square root; the derivative at exactly 0 is taken as 0.
    pub fn sqrt(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.sqrt()).collect();
        Tensor::from_op(
            "sqrt",
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(|y, g| {
                let da = g
                    .iter()
                    .zip(y)
                    .map(|(g, y)| if *y == 0.0 { 0.0 } else { g * 0.5 / y })
                    .collect();
                vec![Some(da)]
            }),
        )
    }

    // ----- reductions -----

    pub fn sum(&self) -> Result<Tensor> {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![],
            vec![total],
            vec![self.clone()],
            Box::new(move |_, g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(TensorError::shape("mean", "empty tensor"));
        }
        let n = self.numel();
        let m: f64 = self.data().iter().sum::<f64>() / n as f64;
        Tensor::from_op(
            "mean",
            vec![],
            vec![m],
            vec![self.clone()],
            Box::new(move |_, g| vec![Some(vec![g[0] / n as f64; n])]),
        )
    }

    /// Per-row sums of a [r, c] matrix, giving shape [r].
    pub fn row_sums(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(TensorError::shape(
                "row_sums",
                format!("expected rank 2, got {:?}", self.shape()),
            ));
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let data: Vec<f64> = (0..r)
            .map(|i| self.data()[i * c..(i + 1) * c].iter().sum())
            .collect();
        Tensor::from_op(
            "row_sums",
            vec![r],
            data,
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[i];
                    }
                }
                vec![Some(da)]
            }),
        )
    }

    // ----- shape ops -----

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if nd::numel(&shape) != self.numel() {
            return Err(TensorError::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        Tensor::from_op(
            "reshape",
            shape,
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(|_, g| vec![Some(g.to_vec())]),
        )
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::shape(
                "permute",
                format!("axes {:?} do not permute rank {}", axes, rank),
            ));
        }
        let (data, out_shape) = nd::permute_data(self.data(), self.shape(), axes);
        let in_shape = self.shape().to_vec();
        let axes_owned = axes.to_vec();
        Tensor::from_op(
            "permute",
            out_shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |_, g| {
                let inv = nd::inverse_axes(&axes_owned);
                let (dg, back_shape) = nd::permute_data(g, &out_shape, &inv);
                debug_assert_eq!(back_shape, in_shape);
                vec![Some(dg)]
            }),
        )
    }

    /// Contiguous sub-block along one axis: rows [start, start+len) of `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let rank = self.rank();
        if axis >= rank || len == 0 || start + len > self.shape()[axis] {
            return Err(TensorError::shape(
                "narrow",
                format!(
                    "axis {} range {}..{} on shape {:?}",
                    axis,
                    start,
                    start + len,
                    self.shape()
                ),
            ));
        }
        let in_shape = self.shape().to_vec();
        let mut out_shape = in_shape.clone();
        out_shape[axis] = len;
        let in_strides = nd::strides(&in_shape);
        let outer: usize = in_shape[..axis].iter().product();
        let inner: usize = in_strides[axis];
        let mut data = Vec::with_capacity(nd::numel(&out_shape));
        for o in 0..outer {
            let base = o * in_shape[axis] * inner + start * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let in_numel = self.numel();
        let axis_len = in_shape[axis];
        Tensor::from_op(
            "narrow",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut da = vec![0.0; in_numel];
                for o in 0..outer {
                    let dst = o * axis_len * inner + start * inner;
                    let src = o * len * inner;
                    da[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                vec![Some(da)]
            }),
        )
    }

    /// Concatenates same-shaped tensors along axis 0.
    pub fn concat0(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::shape("concat0", "empty part list"))?;
        if first.rank() == 0 {
            return Err(TensorError::shape("concat0", "rank-0 parts"));
        }
        let tail = &first.shape()[1..];
        let mut rows = 0usize;
        for p in parts {
            if p.rank() != first.rank() || &p.shape()[1..] != tail {
                return Err(TensorError::shape(
                    "concat0",
                    format!("{:?} vs {:?}", first.shape(), p.shape()),
                ));
            }
            rows += p.shape()[0];
        }
        let mut out_shape = vec![rows];
        out_shape.extend_from_slice(tail);
        let mut data = Vec::with_capacity(nd::numel(&out_shape));
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
        Tensor::from_op(
            "concat0",
            out_shape,
            data,
            parts.to_vec(),
            Box::new(move |_, g| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut offset = 0usize;
                for &sz in &sizes {
                    out.push(Some(g[offset..offset + sz].to_vec()));
                    offset += sz;
                }
                out
            }),
        )
    }

    // ----- linear algebra -----

    /// Matrix product of [m, k] by [k, n].
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(TensorError::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        let data = matmul_raw(self.data(), other.data(), m, k, n);
        let a = self.clone();
        let b = other.clone();
        Tensor::from_op(
            "matmul",
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                // dA = g . B^T, dB = A^T . g
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * b.data()[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                let mut db = vec![0.0; k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for i in 0..m {
                            acc += a.data()[i * k + p] * g[i * n + j];
                        }
                        db[p * n + j] = acc;
                    }
                }
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// Adds a [n] bias vector along the last axis of a [..., n] tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        if self.rank() == 0 || bias.rank() != 1 || bias.shape()[0] != *self.shape().last().unwrap() {
            return Err(TensorError::shape(
                "add_bias",
                format!("{:?} + {:?}", self.shape(), bias.shape()),
            ));
        }
        let n = bias.numel();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias.data()[i % n])
            .collect();
        Tensor::from_op(
            "add_bias",
            self.inner.shape.clone(),
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |_, g| {
                let mut db = vec![0.0; n];
                for (i, v) in g.iter().enumerate() {
                    db[i % n] += v;
                }
                vec![Some(g.to_vec()), Some(db)]
            }),
        )
    }
}

fn accumulate(t: &Tensor, contrib: &[f64]) {
    let mut slot = t.inner.grad.borrow_mut();
    match slot.as_mut() {
        Some(g) => {
            for (acc, c) in g.iter_mut().zip(contrib) {
                *acc += c;
            }
        }
        None => *slot = Some(contrib.to_vec()),
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn add_and_mul_accumulate_through_shared_node() {
        // y = (x + x) * x = 2x^2, dy/dx = 4x at x = 3 -> 12
        let x = Tensor::param(vec![3.0], vec![]).unwrap();
        let y = x.add(&x).unwrap().mul(&x).unwrap();
        assert_relative_eq!(y.value(), 18.0);
        y.backward().unwrap();
        assert_relative_eq!(x.grad().unwrap()[0], 12.0);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::param(vec![2.0], vec![]).unwrap();
        let y = x.square().unwrap();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_relative_eq!(x.grad().unwrap()[0], 8.0); // 2 passes x 2x
        y.clear_grads();
        assert!(x.grad().is_none());
        assert_eq!(x.grad_or_zeros(), vec![0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let x = Tensor::param(vec![1.0, 2.0], vec![2]).unwrap();
        let y = x.scale(2.0).unwrap();
        match y.backward() {
            Err(TensorError::NotScalar { shape }) => assert_eq!(shape, vec![2]),
            other => panic!("expected NotScalar, got {:?}", other.err()),
        }
    }

    #[test]
    fn disconnected_param_has_zero_grad_and_is_not_reached() {
        let x = Tensor::param(vec![1.0], vec![]).unwrap();
        let w = Tensor::param(vec![5.0], vec![]).unwrap();
        let y = x.square().unwrap();
        y.backward().unwrap();
        assert!(!y.reaches(&w));
        assert!(y.reaches(&x));
        assert!(w.grad().is_none());
        assert_eq!(w.grad_or_zeros(), vec![0.0]);
    }

    #[test]
    fn matmul_matches_hand_example() {
        // [1,1] . [[2],[3]] + [1] = [6]
        let x = Tensor::from_vec(vec![1.0, 1.0], vec![1, 2]).unwrap();
        let w = Tensor::param(vec![2.0, 3.0], vec![2, 1]).unwrap();
        let b = Tensor::param(vec![1.0], vec![1]).unwrap();
        let y = x.matmul(&w).unwrap().add_bias(&b).unwrap();
        assert_eq!(y.shape(), &[1, 1]);
        assert_relative_eq!(y.value(), 6.0);
        y.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn ln_of_zero_reports_overflow() {
        let x = Tensor::param(vec![0.0], vec![]).unwrap();
        match x.ln() {
            Err(TensorError::NumericOverflow { op }) => assert_eq!(op, "ln"),
            other => panic!("expected NumericOverflow, got {:?}", other.err()),
        }
    }

    #[test]
    fn sqrt_at_zero_has_zero_subgradient() {
        let x = Tensor::param(vec![0.0, 4.0], vec![2]).unwrap();
        let y = x.sqrt().unwrap().sum().unwrap();
        y.backward().unwrap();
        let g = x.grad().unwrap();
        assert_eq!(g[0], 0.0);
        assert_relative_eq!(g[1], 0.25);
    }

    #[test]
    fn narrow_and_concat_round_trip() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![3, 2]).unwrap();
        let top = x.narrow(0, 0, 1).unwrap();
        let rest = x.narrow(0, 1, 2).unwrap();
        assert_eq!(top.data(), &[1.0, 2.0]);
        assert_eq!(rest.data(), &[3.0, 4.0, 5.0, 6.0]);
        let back = Tensor::concat0(&[top, rest]).unwrap();
        assert_eq!(back.data(), x.data());
        let loss = back.mul(&back).unwrap().sum().unwrap();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, xi) in g.iter().zip(x.data()) {
            assert_relative_eq!(*gi, 2.0 * xi);
        }
    }

    #[test]
    fn narrow_middle_axis_matches_manual_slice() {
        // shape [2,3,2], take axis 1 range 1..3
        let data: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let x = Tensor::param(data, vec![2, 3, 2]).unwrap();
        let s = x.narrow(1, 1, 2).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.data(), &[2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn permute_backward_returns_to_input_layout() {
        let x = Tensor::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2, 3]).unwrap();
        let t = x.permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        // loss weights each transposed element by its value
        let loss = t.square().unwrap().sum().unwrap();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        for (gi, xi) in g.iter().zip(x.data()) {
            assert_relative_eq!(*gi, 2.0 * xi);
        }
    }

    #[test]
    fn constant_graph_is_folded_away() {
        let a = Tensor::from_vec(vec![1.0, 2.0], vec![2]).unwrap();
        let b = a.scale(3.0).unwrap();
        assert!(!b.requires_grad());
        assert!(b.backward().is_err()); // non-scalar
        let s = b.sum().unwrap();
        s.backward().unwrap(); // no-op on constant graph
        assert!(a.grad().is_none());
    }

    #[test]
    fn leaf_rejects_non_finite_payload() {
        assert!(Tensor::from_vec(vec![f64::NAN], vec![1]).is_err());
        assert!(Tensor::param(vec![f64::INFINITY], vec![1]).is_err());
    }

    #[test]
    fn add_bias_broadcasts_over_leading_axes() {
        let x = Tensor::from_vec(vec![0.0, 0.0, 1.0, 1.0], vec![2, 2]).unwrap();
        let b = Tensor::param(vec![10.0, 20.0], vec![2]).unwrap();
        let y = x.add_bias(&b).unwrap();
        assert_eq!(y.data(), &[10.0, 20.0, 11.0, 21.0]);
        let loss = y.sum().unwrap();
        loss.backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0]);
    }
}
