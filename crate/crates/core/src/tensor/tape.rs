use std::cell::RefCell;
use std::rc::Rc;

use crate::error::Result;

use super::ops::{BinaryKind, ConvFilters, NodeId, Op, ReduceKind, UnaryKind};
use super::sparse::SparseRows;
use super::Tensor;

struct Node {
    shape: Vec<usize>,
    value: Rc<Vec<f64>>,
    op: Op,
    requires_grad: bool,
    is_param: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so every
/// node's inputs precede it.
///
/// A tape is single-threaded; one fit iteration records one tape.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push_leaf(&self, shape: Vec<usize>, value: Rc<Vec<f64>>, param: bool) -> Var<'_> {
        assert_eq!(
            shape.iter().product::<usize>(),
            value.len(),
            "contract violation: leaf shape {shape:?} does not match {} values",
            value.len()
        );
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad: param,
            is_param: param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Trainable leaf; receives a gradient on [`Tape::backward`].
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        self.push_leaf(t.shape().to_vec(), Rc::new(t.data().to_vec()), true)
    }

    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push_leaf(t.shape().to_vec(), Rc::new(t.data().to_vec()), false)
    }

    /// Constant leaf sharing an existing buffer (large bases are not copied).
    pub fn constant_shared(&self, shape: &[usize], data: Rc<Vec<f64>>) -> Var<'_> {
        self.push_leaf(shape.to_vec(), data, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.push_leaf(vec![], Rc::new(vec![v]), false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_op(&self, op: Op, shape: Vec<usize>) -> Result<Var<'_>> {
        let inputs = op.inputs();
        let value = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&[f64]> = inputs.iter().map(|&i| nodes[i].value.as_slice()).collect();
            let shapes: Vec<&[usize]> = inputs.iter().map(|&i| nodes[i].shape.as_slice()).collect();
            op.forward(&vals, &shapes, &shape)?
        };
        debug_assert_eq!(value.len(), shape.iter().product::<usize>(), "{}", op.name());
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            shape,
            value: Rc::new(value),
            op,
            requires_grad,
            is_param: false,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Accumulates d(root)/d(param) into the gradient slot of every
    /// parameter leaf reachable from `root`. Calling it twice without
    /// [`Tape::zero_grad`] doubles the stored gradients.
    pub fn backward(&self, root: Var<'_>) {
        let nodes = self.nodes.borrow();
        assert!(
            nodes[root.id].value.len() == 1,
            "contract violation: backward needs a scalar root, got shape {:?}",
            nodes[root.id].shape
        );
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        adj[root.id] = Some(vec![1.0]);
        let mut grads = self.grads.borrow_mut();
        if grads.len() < nodes.len() {
            grads.resize(nodes.len(), None);
        }
        for id in (0..=root.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if node.is_param {
                    match grads[id].as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => grads[id] = Some(g),
                    }
                }
                continue;
            }
            let inputs = node.op.inputs();
            let vals: Vec<&[f64]> = inputs.iter().map(|&i| nodes[i].value.as_slice()).collect();
            let shapes: Vec<&[usize]> = inputs.iter().map(|&i| nodes[i].shape.as_slice()).collect();
            let needs: Vec<bool> = inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let contribs = node.op.backward(&vals, &shapes, &node.value, &g, &needs);
            for (&input, contrib) in inputs.iter().zip(contribs) {
                let Some(c) = contrib else { continue };
                if !nodes[input].requires_grad {
                    continue;
                }
                match adj[input].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                    None => adj[input] = Some(c),
                }
            }
        }
    }

    /// Accumulated gradient of a parameter leaf, if any was written.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let nodes = self.nodes.borrow();
        grads
            .get(v.id)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::new(nodes[v.id].shape.clone(), g.clone()))
    }

    /// Gradient of a parameter leaf, zeros if nothing reached it.
    pub fn grad_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.grad(v).unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Re-evaluates every node from the leaves, substituting the given leaf
    /// values, and returns the value of `root`. Detached data recorded with
    /// the graph (fragment assignments, sparse maps) is reused as recorded.
    pub fn replay(&self, root: Var<'_>, overrides: &[(Var<'_>, &[f64])]) -> Result<Tensor> {
        let values = self.replay_all(overrides, root.id + 1)?;
        let nodes = self.nodes.borrow();
        Ok(Tensor::new(
            nodes[root.id].shape.clone(),
            values[root.id].as_ref().clone(),
        ))
    }

    fn replay_all(&self, overrides: &[(Var<'_>, &[f64])], upto: usize) -> Result<Vec<Rc<Vec<f64>>>> {
        let nodes = self.nodes.borrow();
        let mut values: Vec<Rc<Vec<f64>>> = Vec::with_capacity(upto);
        for (id, node) in nodes.iter().take(upto).enumerate() {
            let v = match &node.op {
                Op::Leaf => match overrides.iter().find(|(var, _)| var.id == id) {
                    Some((_, data)) => {
                        assert_eq!(data.len(), node.value.len(), "contract violation: override size");
                        Rc::new(data.to_vec())
                    }
                    None => node.value.clone(),
                },
                op => {
                    let inputs = op.inputs();
                    if !inputs.iter().any(|&i| !Rc::ptr_eq(&values[i], &nodes[i].value)) {
                        node.value.clone()
                    } else {
                        let vals: Vec<&[f64]> = inputs.iter().map(|&i| values[i].as_slice()).collect();
                        let shapes: Vec<&[usize]> =
                            inputs.iter().map(|&i| nodes[i].shape.as_slice()).collect();
                        Rc::new(op.forward(&vals, &shapes, &node.shape)?)
                    }
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when a full forward replay from the recorded leaves reproduces
    /// every recorded value bit for bit.
    pub fn replay_is_exact(&self) -> bool {
        let nodes = self.nodes.borrow();
        for (id, node) in nodes.iter().enumerate() {
            if let Op::Leaf = node.op {
                continue;
            }
            let inputs = node.op.inputs();
            let vals: Vec<&[f64]> = inputs.iter().map(|&i| nodes[i].value.as_slice()).collect();
            let shapes: Vec<&[usize]> = inputs.iter().map(|&i| nodes[i].shape.as_slice()).collect();
            match node.op.forward(&vals, &shapes, &node.shape) {
                Ok(v) => {
                    if v.iter().zip(node.value.iter()).any(|(a, b)| a.to_bits() != b.to_bits()) {
                        log::debug!("replay mismatch at node {id} ({})", node.op.name());
                        return false;
                    }
                }
                Err(_) => return false,
            }
        }
        true
    }
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn broadcast_shape(a: &[usize], b: &[usize], op: &str) -> Vec<usize> {
    let (na, nb): (usize, usize) = (a.iter().product(), b.iter().product());
    if a == b || nb == 1 {
        a.to_vec()
    } else if na == 1 {
        b.to_vec()
    } else if is_suffix(b, a) {
        a.to_vec()
    } else if is_suffix(a, b) {
        b.to_vec()
    } else {
        panic!("contract violation: {op} cannot broadcast {a:?} with {b:?}")
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        Tensor::new(nodes[self.id].shape.clone(), nodes[self.id].value.as_ref().clone())
    }

    /// Borrow-free copy of the raw values.
    pub fn data(&self) -> Rc<Vec<f64>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn item(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "contract violation: item() on non-scalar");
        d[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "contract violation: vars from different tapes"
        );
    }

    fn binary(self, kind: BinaryKind, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let shape = broadcast_shape(&self.shape(), &other.shape(), name);
        self.tape.push_op(
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
            },
            shape,
        )
    }

    fn unary(self, kind: UnaryKind) -> Result<Var<'t>> {
        let shape = self.shape();
        self.tape.push_op(Op::Unary { kind, a: self.id }, shape)
    }

    fn infallible(r: Result<Var<'t>>) -> Var<'t> {
        r.expect("op has no domain restrictions")
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryKind::Div, other)
    }

    pub fn max0(self) -> Var<'t> {
        Self::infallible(self.unary(UnaryKind::Max0))
    }

    pub fn exp(self) -> Var<'t> {
        Self::infallible(self.unary(UnaryKind::Exp))
    }

    pub fn log(self) -> Result<Var<'t>> {
        self.unary(UnaryKind::Log)
    }

    pub fn abs(self) -> Var<'t> {
        Self::infallible(self.unary(UnaryKind::Abs))
    }

    pub fn pow_scalar(self, s: f64) -> Result<Var<'t>> {
        self.unary(UnaryKind::PowScalar(s))
    }

    pub fn square(self) -> Var<'t> {
        Self::infallible(self.unary(UnaryKind::PowScalar(2.0)))
    }

    pub fn softplus(self) -> Var<'t> {
        Self::infallible(self.unary(UnaryKind::Softplus))
    }

    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        Self::infallible(self.unary(UnaryKind::Affine { scale, shift }))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.affine(s, 0.0)
    }

    pub fn max_scalar(self, c: f64) -> Var<'t> {
        Self::infallible(self.unary(UnaryKind::MaxScalar(c)))
    }

    pub fn soft_clamp01(self, band: f64) -> Var<'t> {
        Self::infallible(self.unary(UnaryKind::SoftClamp01(band)))
    }

    pub fn soft_cap1(self, band: f64) -> Var<'t> {
        Self::infallible(self.unary(UnaryKind::SoftCap1(band)))
    }

    fn reduce(self, kind: ReduceKind, axes: &[usize]) -> Var<'t> {
        let shape = self.shape();
        for &ax in axes {
            assert!(
                ax < shape.len(),
                "contract violation: axis {ax} invalid for shape {shape:?}"
            );
        }
        let keep: Vec<bool> = (0..shape.len()).map(|d| !axes.contains(&d)).collect();
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(&s, _)| s)
            .collect();
        let count: usize = shape
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| !k)
            .map(|(&s, _)| s)
            .product();
        // output stride contributed by each input dimension
        let mut out_strides = vec![0usize; shape.len()];
        let mut acc = 1;
        for d in (0..shape.len()).rev() {
            if keep[d] {
                out_strides[d] = acc;
                acc *= shape[d];
            }
        }
        let n: usize = shape.iter().product();
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            map.push(idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Self::infallible(self.tape.push_op(
            Op::Reduce {
                kind,
                a: self.id,
                map: Rc::new(map),
                count: count.max(1),
            },
            out_shape,
        ))
    }

    pub fn sum_axes(self, axes: &[usize]) -> Var<'t> {
        self.reduce(ReduceKind::Sum, axes)
    }

    pub fn mean_axes(self, axes: &[usize]) -> Var<'t> {
        self.reduce(ReduceKind::Mean, axes)
    }

    pub fn sum(self) -> Var<'t> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(ReduceKind::Sum, &axes)
    }

    pub fn mean(self) -> Var<'t> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(ReduceKind::Mean, &axes)
    }

    /// Sum over the last axis.
    pub fn sum_last(self) -> Var<'t> {
        let last = self.shape().len() - 1;
        self.reduce(ReduceKind::Sum, &[last])
    }

    /// Euclidean norm of all elements; its gradient at the origin is 0.
    pub fn norm2(self) -> Var<'t> {
        Self::infallible(self.tape.push_op(Op::Norm2 { a: self.id }, vec![]))
    }

    /// `m [r x c]` times `x [c]`.
    pub fn matvec(m: Var<'t>, x: Var<'t>) -> Var<'t> {
        m.same_tape(&x);
        let (ms, xs) = (m.shape(), x.shape());
        assert!(
            ms.len() == 2 && xs.len() == 1 && ms[1] == xs[0],
            "contract violation: matvec dimension mismatch {ms:?} x {xs:?}"
        );
        Self::infallible(m.tape.push_op(Op::MatVec { m: m.id, x: x.id }, vec![ms[0]]))
    }

    fn assert_rows3(&self, op: &str) {
        let s = self.shape();
        assert!(
            s.last() == Some(&3),
            "contract violation: {op} needs a trailing dimension of 3, got {s:?}"
        );
    }

    /// Normalizes each trailing 3-vector; fails on rows shorter than 1e-12.
    pub fn normalize3(self) -> Result<Var<'t>> {
        self.assert_rows3("normalize3");
        let shape = self.shape();
        self.tape.push_op(Op::Normalize3 { a: self.id }, shape)
    }

    pub fn cross3(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(&other);
        self.assert_rows3("cross3");
        assert_eq!(self.shape(), other.shape(), "contract violation: cross3 shapes");
        let shape = self.shape();
        Self::infallible(self.tape.push_op(
            Op::Cross3 {
                a: self.id,
                b: other.id,
            },
            shape,
        ))
    }

    /// Row-wise dot product of two `[.. x 3]` tensors.
    pub fn dot3(self, other: Var<'t>) -> Var<'t> {
        (self * other).sum_last()
    }

    /// Appends a trailing axis of size `k`, repeating each element.
    pub fn expand_last(self, k: usize) -> Var<'t> {
        let mut shape = self.shape();
        shape.push(k);
        Self::infallible(self.tape.push_op(Op::ExpandLast { a: self.id, k }, shape))
    }

    /// Fixed sparse linear map over the leading axis.
    pub fn sparse(self, rows: Rc<SparseRows>) -> Var<'t> {
        let mut shape = self.shape();
        assert!(
            !shape.is_empty() && shape[0] == rows.n_in(),
            "contract violation: sparse map expects {} rows, got {shape:?}",
            rows.n_in()
        );
        shape[0] = rows.n_out();
        Self::infallible(self.tape.push_op(Op::Sparse { a: self.id, rows }, shape))
    }

    pub fn transpose2(self) -> Var<'t> {
        let s = self.shape();
        assert_eq!(s.len(), 2, "contract violation: transpose2 needs a matrix");
        Self::infallible(self.tape.push_op(Op::Transpose2 { a: self.id }, vec![s[1], s[0]]))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.numel(),
            "contract violation: reshape to {shape:?}"
        );
        Self::infallible(self.tape.push_op(Op::Reshape { a: self.id }, shape.to_vec()))
    }

    /// Contiguous flat slice `[offset, offset + numel(shape))` reshaped.
    pub fn narrow(self, offset: usize, shape: &[usize]) -> Var<'t> {
        let len: usize = shape.iter().product();
        assert!(offset + len <= self.numel(), "contract violation: narrow out of range");
        Self::infallible(self.tape.push_op(
            Op::Narrow {
                a: self.id,
                offset,
            },
            shape.to_vec(),
        ))
    }

    /// Columns `[start, start + len)` of the trailing axis.
    pub fn slice_last(self, start: usize, len: usize) -> Var<'t> {
        let mut shape = self.shape();
        let k = *shape.last().expect("contract violation: slice_last on scalar");
        assert!(start + len <= k, "contract violation: slice_last out of range");
        *shape.last_mut().unwrap() = len;
        Self::infallible(self.tape.push_op(Op::SliceLast { a: self.id, start }, shape))
    }

    /// Concatenation along the leading axis.
    pub fn concat(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "contract violation: empty concat");
        let first = parts[0].shape();
        let mut lead = 0;
        for p in parts {
            parts[0].same_tape(p);
            let s = p.shape();
            assert!(
                !s.is_empty() && s[1..] == first[1..],
                "contract violation: concat shapes {first:?} and {s:?}"
            );
            lead += s[0];
        }
        let mut shape = first.clone();
        shape[0] = lead;
        Self::infallible(parts[0].tape.push_op(
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
            },
            shape,
        ))
    }

    /// Samples a `[C x H x W]` texture at `[P x 2]` coordinates in [0,1]^2
    /// (border clamped); returns `[P x C]`.
    pub fn bilinear_sample(tex: Var<'t>, uv: Var<'t>) -> Var<'t> {
        tex.same_tape(&uv);
        let (ts, us) = (tex.shape(), uv.shape());
        assert!(
            ts.len() == 3 && us.len() == 2 && us[1] == 2,
            "contract violation: bilinear_sample shapes {ts:?}, {us:?}"
        );
        Self::infallible(tex.tape.push_op(
            Op::Bilinear {
                tex: tex.id,
                uv: uv.id,
            },
            vec![us[0], ts[0]],
        ))
    }

    pub fn upsample2x(self) -> Var<'t> {
        let s = self.shape();
        assert_eq!(s.len(), 3, "contract violation: upsample2x needs [C x H x W]");
        Self::infallible(
            self.tape
                .push_op(Op::Upsample2x { a: self.id }, vec![s[0], 2 * s[1], 2 * s[2]]),
        )
    }

    /// Same-size convolution with fixed filters (no gradient into them).
    pub fn conv2d(self, filters: Rc<ConvFilters>) -> Var<'t> {
        let s = self.shape();
        assert!(
            s.len() == 3 && s[0] == filters.in_ch,
            "contract violation: conv2d input {s:?} vs {} input channels",
            filters.in_ch
        );
        let shape = vec![filters.out_ch, s[1], s[2]];
        Self::infallible(self.tape.push_op(
            Op::Conv2d {
                img: self.id,
                filters,
            },
            shape,
        ))
    }

    pub fn max_pool2(self) -> Var<'t> {
        let s = self.shape();
        assert!(
            s.len() == 3 && s[1] >= 2 && s[2] >= 2,
            "contract violation: max_pool2 input {s:?}"
        );
        Self::infallible(
            self.tape
                .push_op(Op::MaxPool2 { a: self.id }, vec![s[0], s[1] / 2, s[2] / 2]),
        )
    }

    /// Rotates `[N x 3]` points by the exponential-map vector `rvec [3]`.
    pub fn rotate(points: Var<'t>, rvec: Var<'t>) -> Var<'t> {
        points.same_tape(&rvec);
        points.assert_rows3("rotate");
        assert_eq!(rvec.numel(), 3, "contract violation: rotation vector size");
        let shape = points.shape();
        Self::infallible(points.tape.push_op(
            Op::Rotate {
                points: points.id,
                rvec: rvec.id,
            },
            shape,
        ))
    }

    /// Pinhole projection of camera-space `[N x 3]` points to `[N x 2]` pixels.
    pub fn project(self, focal: f64, cx: f64, cy: f64, near: f64) -> Result<Var<'t>> {
        self.assert_rows3("project");
        let n = self.numel() / 3;
        self.tape.push_op(
            Op::Project {
                points: self.id,
                focal,
                cx,
                cy,
                near,
            },
            vec![n, 2],
        )
    }

    /// Elementwise `self ^ exponent` for a nonnegative base and a scalar
    /// exponent on the tape.
    pub fn pow_tensor(self, exponent: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&exponent);
        assert_eq!(exponent.numel(), 1, "contract violation: exponent must be scalar");
        let shape = self.shape();
        self.tape.push_op(
            Op::PowTensor {
                base: self.id,
                exponent: exponent.id,
            },
            shape,
        )
    }

    /// Writes `[P x 3]` pixel values into a `[3 x H x W]` image at the given
    /// flat pixel indices; other pixels take `background`.
    pub fn composite(
        self,
        pixels: Rc<Vec<usize>>,
        background: [f64; 3],
        height: usize,
        width: usize,
    ) -> Var<'t> {
        let s = self.shape();
        assert!(
            s == [pixels.len(), 3],
            "contract violation: composite values {s:?} for {} pixels",
            pixels.len()
        );
        assert!(pixels.iter().all(|&p| p < height * width));
        Self::infallible(self.tape.push_op(
            Op::Composite {
                values: self.id,
                pixels,
                background,
            },
            vec![3, height, width],
        ))
    }
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $kind:expr) => {
        impl<'t> std::ops::$trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                Var::infallible(self.binary($kind, rhs))
            }
        }
    };
}

impl_binop!(Add, add, BinaryKind::Add);
impl_binop!(Sub, sub, BinaryKind::Sub);
impl_binop!(Mul, mul, BinaryKind::Mul);

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}
