//! Reverse-mode automatic differentiation over 1-D and 2-D tensors.
//!
//! A [`Tensor`] is a shared handle to a node in an acyclic computation
//! graph. Operations record their parents and a backward closure; calling
//! [`Tensor::backward`] on a scalar output accumulates gradients into every
//! parameter leaf by reverse topological traversal. Nodes whose parents
//! carry no gradient are pruned at construction, so evaluation-only code
//! pays nothing for the graph machinery.
//!
//! Graph construction and backward passes are single-threaded per model
//! instance; handles are reference-counted and may not cross threads.

use crate::real::Real;
use crate::rng::Prng;
use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>>>;

struct Inner<T: Real> {
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Shared handle to a computation-graph node.
pub struct Tensor<T: Real> {
    inner: Rc<Inner<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    // ---- constructors ----

    fn leaf(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Self {
        assert_eq!(data.len(), numel_of(&shape), "data length must match shape {shape:?}");
        assert!(!shape.is_empty() && shape.len() <= 2, "tensors are 1-D or 2-D, got {shape:?}");
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// Constant (non-trainable) tensor.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Self {
        Tensor::leaf(data, shape.to_vec(), false)
    }

    /// Trainable leaf: participates in gradient accumulation.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Self {
        Tensor::leaf(data, shape.to_vec(), true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_vec(vec![T::zero(); numel_of(shape)], shape)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::from_vec(vec![T::one(); numel_of(shape)], shape)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor::from_vec(vec![value; numel_of(shape)], shape)
    }

    pub fn scalar(value: T) -> Self {
        Tensor::from_vec(vec![value], &[1])
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        Tensor::from_vec((0..numel_of(shape)).map(f).collect(), shape)
    }

    fn new_node(shape: Vec<usize>, data: Vec<T>, parents: Vec<Tensor<T>>, backward: BackwardFn<T>) -> Self {
        debug_assert_eq!(data.len(), numel_of(&shape));
        if parents.iter().any(|p| p.inner.requires_grad) {
            Tensor {
                inner: Rc::new(Inner {
                    shape,
                    data: RefCell::new(data),
                    grad: RefCell::new(None),
                    requires_grad: true,
                    parents,
                    backward: Some(backward),
                }),
            }
        } else {
            // No gradient can flow here; drop the graph edges entirely.
            Tensor::leaf(data, shape, false)
        }
    }

    // ---- inspection ----

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.inner.shape)
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.rank(), 2, "rows() needs a 2-D tensor, shape {:?}", self.shape());
        self.inner.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.rank(), 2, "cols() needs a 2-D tensor, shape {:?}", self.shape());
        self.inner.shape[1]
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn data_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() needs a single-element tensor, shape {:?}", self.shape());
        self.inner.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn grad_vec(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Overwrite the stored values in place (used by optimizers).
    pub fn set_data(&self, values: &[T]) {
        let mut data = self.inner.data.borrow_mut();
        assert_eq!(values.len(), data.len(), "set_data length mismatch");
        data.copy_from_slice(values);
    }

    /// Copy of the values as a fresh constant leaf, cut off from the graph.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::from_vec(self.data_vec(), &self.inner.shape)
    }

    fn accumulate_grad(&self, contribution: &[T]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, &ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    // ---- backward engine ----

    /// Reverse-mode gradient accumulation from a scalar output. Leaf
    /// gradients add into any previously stored values — call
    /// [`Tensor::clear_grad`] (or an optimizer's zero-grad) between steps —
    /// while interior nodes start each pass fresh.
    pub fn backward(&self) {
        assert_eq!(self.numel(), 1, "backward() needs a scalar output, shape {:?}", self.shape());
        let order = self.topo_order();
        for node in &order {
            if node.inner.backward.is_some() {
                node.clear_grad();
            }
        }
        self.accumulate_grad(&[T::one()]);
        for node in order.iter().rev() {
            let Some(bw) = &node.inner.backward else { continue };
            let out_grad = match node.inner.grad.borrow().clone() {
                Some(g) => g,
                None => continue,
            };
            let contributions = bw(&out_grad);
            debug_assert_eq!(contributions.len(), node.inner.parents.len());
            for (parent, c) in node.inner.parents.iter().zip(&contributions) {
                if parent.inner.requires_grad {
                    debug_assert_eq!(c.len(), parent.numel());
                    parent.accumulate_grad(c);
                }
            }
        }
    }

    /// Iterative post-order DFS: parents appear before children, so the
    /// reversed order visits consumers before producers.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut visited: HashSet<*const Inner<T>> = HashSet::new();
        let mut order = Vec::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(Rc::as_ptr(&node.inner)) {
                continue;
            }
            stack.push((node.clone(), true));
            for p in &node.inner.parents {
                if p.inner.requires_grad {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    // ---- elementwise arithmetic ----

    fn assert_same_shape(&self, other: &Tensor<T>, op: &str) {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op} needs equal shapes, got {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        self.assert_same_shape(other, "add");
        let data = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a + b).collect();
        Tensor::new_node(
            self.inner.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |og| vec![og.to_vec(), og.to_vec()]),
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        self.assert_same_shape(other, "sub");
        let data = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a - b).collect();
        Tensor::new_node(
            self.inner.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |og| vec![og.to_vec(), og.iter().map(|&g| -g).collect()]),
        )
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        self.assert_same_shape(other, "mul");
        let data = self.data().iter().zip(other.data().iter()).map(|(&a, &b)| a * b).collect();
        let a = self.clone();
        let b = other.clone();
        Tensor::new_node(
            self.inner.shape.clone(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |og| {
                let ad = a.data();
                let bd = b.data();
                vec![
                    og.iter().zip(bd.iter()).map(|(&g, &v)| g * v).collect(),
                    og.iter().zip(ad.iter()).map(|(&g, &v)| g * v).collect(),
                ]
            }),
        )
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::new_node(
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |og| vec![og.iter().map(|&g| g * c).collect()]),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| v + c).collect();
        Tensor::new_node(
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |og| vec![og.to_vec()]),
        )
    }

    /// Broadcast-add a 1-D `[n]` bias to every row of a 2-D `[m, n]` tensor.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "add_bias needs a 2-D input, shape {:?}", self.shape());
        assert_eq!(
            bias.shape(),
            &[self.cols()],
            "add_bias needs a [cols] bias, got {:?} for input {:?}",
            bias.shape(),
            self.shape()
        );
        let (m, n) = (self.rows(), self.cols());
        let bd = bias.data();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % n])
            .collect();
        drop(bd);
        Tensor::new_node(
            self.inner.shape.clone(),
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |og| {
                let mut db = vec![T::zero(); n];
                for r in 0..m {
                    for c in 0..n {
                        db[c] += og[r * n + c];
                    }
                }
                vec![og.to_vec(), db]
            }),
        )
    }

    // ---- elementwise nonlinearities ----

    fn unary_op(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Tensor<T> {
        let x: Vec<T> = self.data_vec();
        let y: Vec<T> = x.iter().map(|&v| f(v)).collect();
        let y_saved = y.clone();
        Tensor::new_node(
            self.inner.shape.clone(),
            y,
            vec![self.clone()],
            Box::new(move |og| {
                vec![og
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| g * df(x[i], y_saved[i]))
                    .collect()]
            }),
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary_op(
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary_op(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary_op(|x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        self.unary_op(|x| x.sqrt(), |_, y| T::one() / (T::c(2.0) * y))
    }

    pub fn abs(&self) -> Tensor<T> {
        self.unary_op(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sin(&self) -> Tensor<T> {
        self.unary_op(|x| x.sin(), |x, _| x.cos())
    }

    pub fn cos(&self) -> Tensor<T> {
        self.unary_op(|x| x.cos(), |x, _| -x.sin())
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary_op(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    /// Clamp values to `[lo, hi]`; gradient is zero outside the open
    /// interval (saturated values stop learning).
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        assert!(lo < hi, "clamp needs lo < hi");
        self.unary_op(
            move |x| x.max(lo).min(hi),
            move |x, _| if x > lo && x < hi { T::one() } else { T::zero() },
        )
    }

    // ---- shape manipulation ----

    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            numel_of(shape),
            self.numel(),
            "reshape {:?} -> {shape:?} changes element count",
            self.shape()
        );
        Tensor::new_node(
            shape.to_vec(),
            self.data_vec(),
            vec![self.clone()],
            Box::new(move |og| vec![og.to_vec()]),
        )
    }

    pub fn transpose(&self) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "transpose needs a 2-D tensor, shape {:?}", self.shape());
        let (m, n) = (self.rows(), self.cols());
        let src = self.data();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        drop(src);
        Tensor::new_node(
            vec![n, m],
            data,
            vec![self.clone()],
            Box::new(move |og| {
                // og has shape [n, m]; transpose back to [m, n].
                let mut dg = vec![T::zero(); m * n];
                for j in 0..n {
                    for i in 0..m {
                        dg[i * n + j] = og[j * m + i];
                    }
                }
                vec![dg]
            }),
        )
    }

    /// Contiguous slice along `axis` (rows or columns of a 2-D tensor, or
    /// the sole axis of a 1-D tensor).
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        assert!(axis < self.rank(), "narrow axis {axis} out of range for shape {:?}", self.shape());
        assert!(
            start + len <= self.inner.shape[axis] && len > 0,
            "narrow [{start}, {start}+{len}) exceeds axis {axis} of shape {:?}",
            self.shape()
        );
        let shape = self.inner.shape.clone();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let src = self.data();
        let data: Vec<T> = if self.rank() == 1 || axis == 0 {
            let row = if self.rank() == 1 { 1 } else { shape[1] };
            src[start * row..(start + len) * row].to_vec()
        } else {
            let (m, n) = (shape[0], shape[1]);
            let mut v = Vec::with_capacity(m * len);
            for i in 0..m {
                v.extend_from_slice(&src[i * n + start..i * n + start + len]);
            }
            v
        };
        drop(src);
        let total = self.numel();
        Tensor::new_node(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |og| {
                let mut dg = vec![T::zero(); total];
                if shape.len() == 1 || axis == 0 {
                    let row = if shape.len() == 1 { 1 } else { shape[1] };
                    dg[start * row..(start + len) * row].copy_from_slice(og);
                } else {
                    let (m, n) = (shape[0], shape[1]);
                    for i in 0..m {
                        dg[i * n + start..i * n + start + len]
                            .copy_from_slice(&og[i * len..(i + 1) * len]);
                    }
                }
                vec![dg]
            }),
        )
    }

    /// Concatenate along `axis`. All parts must agree on the other axis.
    pub fn cat(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "cat needs at least one tensor");
        let rank = parts[0].rank();
        assert!(axis < rank, "cat axis {axis} out of range for rank {rank}");
        for p in parts {
            assert_eq!(p.rank(), rank, "cat mixes ranks: {:?} vs {:?}", parts[0].shape(), p.shape());
            for a in 0..rank {
                if a != axis {
                    assert_eq!(
                        p.shape()[a],
                        parts[0].shape()[a],
                        "cat shape mismatch on axis {a}: {:?} vs {:?}",
                        parts[0].shape(),
                        p.shape()
                    );
                }
            }
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total_axis: usize = sizes.iter().sum();
        let mut out_shape = parts[0].inner.shape.clone();
        out_shape[axis] = total_axis;

        let data: Vec<T> = if rank == 1 || axis == 0 {
            parts.iter().flat_map(|p| p.data_vec()).collect()
        } else {
            let m = parts[0].rows();
            let mut v = Vec::with_capacity(m * total_axis);
            let borrowed: Vec<_> = parts.iter().map(|p| p.data_vec()).collect();
            for i in 0..m {
                for (p, d) in parts.iter().zip(&borrowed) {
                    let n = p.cols();
                    v.extend_from_slice(&d[i * n..(i + 1) * n]);
                }
            }
            v
        };
        let parents: Vec<Tensor<T>> = parts.iter().map(|&p| p.clone()).collect();
        let part_numels: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
        let m = if rank == 2 { parts[0].shape()[0] } else { 0 };
        Tensor::new_node(
            out_shape,
            data,
            parents,
            Box::new(move |og| {
                if sizes.len() == 1 {
                    return vec![og.to_vec()];
                }
                if m == 0 || axis == 0 {
                    // Split along the leading axis: contiguous chunks.
                    let mut out = Vec::with_capacity(part_numels.len());
                    let mut offset = 0;
                    for &ne in &part_numels {
                        out.push(og[offset..offset + ne].to_vec());
                        offset += ne;
                    }
                    out
                } else {
                    let mut out: Vec<Vec<T>> =
                        part_numels.iter().map(|&ne| Vec::with_capacity(ne)).collect();
                    for i in 0..m {
                        let mut offset = i * total_axis;
                        for (slot, &w) in sizes.iter().enumerate() {
                            out[slot].extend_from_slice(&og[offset..offset + w]);
                            offset += w;
                        }
                    }
                    out
                }
            }),
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "matmul lhs must be 2-D, shape {:?}", self.shape());
        assert_eq!(other.rank(), 2, "matmul rhs must be 2-D, shape {:?}", other.shape());
        assert_eq!(
            self.cols(),
            other.rows(),
            "matmul inner dims differ: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let (m, k, n) = (self.rows(), self.cols(), other.cols());
        let data = {
            let a = self.data();
            let b = other.data();
            matmul_raw(&a, &b, m, k, n)
        };
        let at = self.clone();
        let bt = other.clone();
        Tensor::new_node(
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |og| {
                let a = at.data();
                let b = bt.data();
                // dA[i,p] = sum_j og[i,j] * B[p,j]
                let mut da = vec![T::zero(); m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = og[i * n + j];
                        if g != T::zero() {
                            for p in 0..k {
                                da[i * k + p] += g * b[p * n + j];
                            }
                        }
                    }
                }
                // dB[p,j] = sum_i A[i,p] * og[i,j]
                let mut db = vec![T::zero(); k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = a[i * k + p];
                        if av != T::zero() {
                            for j in 0..n {
                                db[p * n + j] += av * og[i * n + j];
                            }
                        }
                    }
                }
                vec![da, db]
            }),
        )
    }

    // ---- reductions ----

    /// Sum along `axis` of a 2-D tensor: axis 0 collapses rows (result
    /// `[cols]`), axis 1 collapses columns (result `[rows]`).
    pub fn sum_axis(&self, axis: usize) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "sum_axis needs a 2-D tensor, shape {:?}", self.shape());
        assert!(axis < 2, "sum_axis axis must be 0 or 1");
        let (m, n) = (self.rows(), self.cols());
        let src = self.data();
        let data: Vec<T> = if axis == 0 {
            let mut v = vec![T::zero(); n];
            for i in 0..m {
                for j in 0..n {
                    v[j] += src[i * n + j];
                }
            }
            v
        } else {
            (0..m).map(|i| src[i * n..(i + 1) * n].iter().copied().sum()).collect()
        };
        drop(src);
        let out_shape = vec![if axis == 0 { n } else { m }];
        Tensor::new_node(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |og| {
                let mut dg = vec![T::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        dg[i * n + j] = if axis == 0 { og[j] } else { og[i] };
                    }
                }
                vec![dg]
            }),
        )
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let total: T = self.data().iter().copied().sum();
        let ne = self.numel();
        Tensor::new_node(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |og| vec![vec![og[0]; ne]]),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let ne = self.numel();
        self.sum_all().scale(T::one() / T::from_usize(ne).unwrap())
    }

    // ---- row-wise softmax / normalization ----

    /// Softmax along `axis` (max-subtracted for stability). For a 1-D
    /// tensor use axis 0.
    pub fn softmax(&self, axis: usize) -> Tensor<T> {
        if self.rank() == 1 {
            assert_eq!(axis, 0, "softmax axis must be 0 for 1-D tensors");
            let flat = self.reshape(&[1, self.numel()]);
            return flat.softmax(1).reshape(&[self.numel()]);
        }
        assert!(axis < 2, "softmax axis must be 0 or 1");
        if axis == 0 {
            return self.transpose().softmax(1).transpose();
        }
        let (m, n) = (self.rows(), self.cols());
        let src = self.data();
        let mut y = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for j in 0..n {
                let e = (row[j] - mx).exp();
                y[i * n + j] = e;
                z += e;
            }
            for j in 0..n {
                y[i * n + j] /= z;
            }
        }
        drop(src);
        let y_saved = y.clone();
        Tensor::new_node(
            vec![m, n],
            y,
            vec![self.clone()],
            Box::new(move |og| {
                // dx = y * (og - sum_j og_j y_j) per row.
                let mut dg = vec![T::zero(); m * n];
                for i in 0..m {
                    let mut dot = T::zero();
                    for j in 0..n {
                        dot += og[i * n + j] * y_saved[i * n + j];
                    }
                    for j in 0..n {
                        dg[i * n + j] = y_saved[i * n + j] * (og[i * n + j] - dot);
                    }
                }
                vec![dg]
            }),
        )
    }

    /// Row-wise layer normalization with learned affine parameters:
    /// `y = (x - mean) / sqrt(var + eps) * gamma + beta`, statistics taken
    /// over each row (biased variance).
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Tensor<T> {
        assert_eq!(self.rank(), 2, "layer_norm needs a 2-D input, shape {:?}", self.shape());
        let (m, n) = (self.rows(), self.cols());
        assert_eq!(gamma.shape(), &[n], "layer_norm gamma must be [{n}], got {:?}", gamma.shape());
        assert_eq!(beta.shape(), &[n], "layer_norm beta must be [{n}], got {:?}", beta.shape());
        let src = self.data();
        let g = gamma.data();
        let b = beta.data();
        let mut y = vec![T::zero(); m * n];
        let mut xhat = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        let nf = T::from_usize(n).unwrap();
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean: T = row.iter().copied().sum::<T>() / nf;
            let var: T = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let xh = (row[j] - mean) * is;
                xhat[i * n + j] = xh;
                y[i * n + j] = xh * g[j] + b[j];
            }
        }
        drop(src);
        drop(g);
        drop(b);
        let gamma_t = gamma.clone();
        Tensor::new_node(
            vec![m, n],
            y,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |og| {
                let g = gamma_t.data();
                let nf = T::from_usize(n).unwrap();
                let mut dx = vec![T::zero(); m * n];
                let mut dgamma = vec![T::zero(); n];
                let mut dbeta = vec![T::zero(); n];
                for i in 0..m {
                    let mut mean_gy = T::zero();
                    let mut mean_gy_xh = T::zero();
                    for j in 0..n {
                        let gy = og[i * n + j] * g[j];
                        mean_gy += gy;
                        mean_gy_xh += gy * xhat[i * n + j];
                        dgamma[j] += og[i * n + j] * xhat[i * n + j];
                        dbeta[j] += og[i * n + j];
                    }
                    mean_gy /= nf;
                    mean_gy_xh /= nf;
                    for j in 0..n {
                        let gy = og[i * n + j] * g[j];
                        dx[i * n + j] = inv_std[i] * (gy - mean_gy - xhat[i * n + j] * mean_gy_xh);
                    }
                }
                vec![dx, dgamma, dbeta]
            }),
        )
    }

    // ---- stochastic regularization ----

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`; in
    /// evaluation mode (or at rate 0) this is the identity. The mask comes
    /// from the supplied seeded generator, so runs are reproducible.
    pub fn dropout(&self, rate: f64, training: bool, rng: &mut Prng) -> Tensor<T> {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1), got {rate}");
        if !training || rate == 0.0 {
            return self.clone();
        }
        let keep = T::c(1.0 - rate);
        let mask: Vec<T> = (0..self.numel())
            .map(|_| if rng.uniform_f64() < rate { T::zero() } else { T::one() / keep })
            .collect();
        let data = self.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Tensor::new_node(
            self.inner.shape.clone(),
            data,
            vec![self.clone()],
            Box::new(move |og| vec![og.iter().zip(&mask).map(|(&g, &m)| g * m).collect()]),
        )
    }
}

fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
    }
    out
}

/// Strictly-lower-triangular ones matrix as a constant tensor; multiplying
/// `[n, 1]` values by it computes an exclusive prefix sum differentiably.
pub fn exclusive_prefix_sum_matrix<T: Real>(n: usize) -> Tensor<T> {
    Tensor::from_fn(&[n, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        if j < i {
            T::one()
        } else {
            T::zero()
        }
    })
}
