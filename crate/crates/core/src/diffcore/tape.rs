//! Recorded-operation tape for reverse-mode gradients.
//!
//! Every differentiable computation in the pipeline is expressed as a
//! sequence of matrix-level operations pushed onto a [`Tape`]. Each push
//! stores the forward value; [`Tape::backward`] then walks the tape in
//! reverse and accumulates gradients into every leaf that requires one.
//! Leaf gradients accumulate across repeated `backward` calls until
//! [`Tape::zero_grads`] is called.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{SparseMatrix, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

/// Elementwise nonlinearities with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary<T> {
    Tanh,
    Artanh,
    Relu,
    LeakyRelu(T),
    Exp,
    Log,
}

impl<T: Scalar> Unary<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Unary::Tanh => "tanh",
            Unary::Artanh => "artanh",
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Exp => "exp",
            Unary::Log => "log",
        }
    }

    /// Applies the function, rejecting inputs outside its domain.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        let op = self.name();
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let y = match *self {
                    Unary::Tanh => v.tanh(),
                    Unary::Artanh => {
                        if !(v.abs() < T::one()) {
                            return Err(Error::NumericDomain { op, index: i });
                        }
                        v.atanh()
                    }
                    Unary::Relu => v.max(T::zero()),
                    Unary::LeakyRelu(s) => {
                        if v > T::zero() {
                            v
                        } else {
                            v * s
                        }
                    }
                    Unary::Exp => v.exp(),
                    Unary::Log => {
                        if !(v > T::zero()) {
                            return Err(Error::NumericDomain { op, index: i });
                        }
                        v.ln()
                    }
                };
                Ok(y)
            })
            .collect()
    }

    fn derivative(&self, x: T, y: T) -> T {
        match *self {
            Unary::Tanh => T::one() - y * y,
            Unary::Artanh => T::one() / (T::one() - x * x),
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::LeakyRelu(s) => {
                if x > T::zero() {
                    T::one()
                } else {
                    s
                }
            }
            Unary::Exp => y,
            Unary::Log => T::one() / x,
        }
    }
}

/// A row map of the form `y = a(‖x‖) · x`.
///
/// `coeffs(r)` returns `(a(r), a'(r) / r)`; the second term drives the
/// rank-one part of the Jacobian `a·I + (a'/r)·x xᵀ`.
pub trait RadialFn<T>: fmt::Debug {
    fn name(&self) -> &'static str;
    fn coeffs(&self, norm: T) -> Result<(T, T)>;
}

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Spmm(Arc<SparseMatrix<T>>, usize),
    EdgeScores {
        pattern: Arc<SparseMatrix<T>>,
        src: usize,
        dst: usize,
    },
    SegmentSoftmax(Arc<SparseMatrix<T>>, usize),
    SpmmValues {
        pattern: Arc<SparseMatrix<T>>,
        vals: usize,
        x: usize,
    },
    Unary(Unary<T>, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    MulRowVec(usize, usize),
    ScaleRows(usize, usize),
    SumAll(usize),
    SumCols(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    NormalizeRows(usize),
    RowNorms(usize),
    ConcatCols(usize, usize),
    SliceCols { x: usize, start: usize },
    SliceRows { x: usize, start: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    Diag(usize),
    Radial(Rc<dyn RadialFn<T>>, usize),
    InfoNce { a: usize, b: usize, inv_tau: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    leaf_grad: Option<Vec<T>>,
}

/// Single-threaded operation recorder.
pub struct Tape<T> {
    id: u64,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.idx)
    }

    fn push(&self, name: &'static str, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if let Some(index) = value.first_non_finite() {
            return Err(Error::NonFinite { op: name, index });
        }
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        nodes.push(Node {
            value: value.detached(),
            op,
            requires_grad,
            leaf_grad: None,
        });
        Ok(Var { tape: self.id, idx })
    }

    fn rg(&self, idx: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        idx.iter().any(|&i| nodes[i].requires_grad)
    }

    fn val(&self, i: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[i].value)
    }

    /// Records a tensor; it is trainable iff `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor<T>) -> Result<Var> {
        self.push("leaf", t.detached(), Op::Leaf, t.requires_grad())
    }

    pub fn param(&self, t: Tensor<T>) -> Result<Var> {
        self.push("param", t, Op::Leaf, true)
    }

    pub fn constant(&self, t: Tensor<T>) -> Result<Var> {
        self.push("constant", t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Result<Tensor<T>> {
        let i = self.index(v)?;
        Ok(self.val(i).clone())
    }

    pub fn shape(&self, v: Var) -> Result<(usize, usize)> {
        let i = self.index(v)?;
        Ok(self.val(i).shape())
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        let t = self.value(v)?;
        if t.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: t.rows(),
                cols: t.cols(),
            });
        }
        Ok(t.values()[0])
    }

    /// Accumulated gradient of a leaf (`None` if it never received one).
    pub fn grad(&self, v: Var) -> Result<Option<Tensor<T>>> {
        let i = self.index(v)?;
        let nodes = self.nodes.borrow();
        let n = &nodes[i];
        Ok(n.leaf_grad
            .as_ref()
            .map(|g| Tensor::from_vec(n.value.rows(), n.value.cols(), g.clone()).expect("shape")))
    }

    pub fn zero_grads(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.leaf_grad = None;
        }
    }

    // ---- operations ----------------------------------------------------

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let out = {
            let (av, bv) = (self.val(ia), self.val(ib));
            if av.cols() != bv.rows() {
                return Err(Error::Shape {
                    op: "matmul",
                    left: av.shape(),
                    right: bv.shape(),
                });
            }
            gemm(&av, &bv)
        };
        self.push("matmul", out, Op::MatMul(ia, ib), self.rg(&[ia, ib]))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let out = transpose(&self.val(ix));
        self.push("transpose", out, Op::Transpose(ix), self.rg(&[ix]))
    }

    /// Constant sparse matrix times a recorded dense matrix.
    pub fn spmm(&self, s: &Arc<SparseMatrix<T>>, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let out = s.mul_dense(&self.val(ix))?;
        self.push("spmm", out, Op::Spmm(Arc::clone(s), ix), self.rg(&[ix]))
    }

    /// Per-edge scores `src[row] + dst[col]` over the pattern's entries.
    pub fn edge_scores(&self, pattern: &Arc<SparseMatrix<T>>, src: Var, dst: Var) -> Result<Var> {
        let (is, id) = (self.index(src)?, self.index(dst)?);
        let out = {
            let (sv, dv) = (self.val(is), self.val(id));
            if sv.shape() != (pattern.rows(), 1) || dv.shape() != (pattern.cols(), 1) {
                return Err(Error::Shape {
                    op: "edge_scores",
                    left: sv.shape(),
                    right: dv.shape(),
                });
            }
            let vals = pattern
                .row_indices()
                .iter()
                .zip(pattern.col_indices())
                .map(|(&r, &c)| sv.values()[r] + dv.values()[c])
                .collect();
            Tensor::from_vec(pattern.nnz(), 1, vals)?
        };
        let op = Op::EdgeScores {
            pattern: Arc::clone(pattern),
            src: is,
            dst: id,
        };
        self.push("edge_scores", out, op, self.rg(&[is, id]))
    }

    /// Softmax of per-edge values within each row of the pattern.
    pub fn segment_softmax(&self, pattern: &Arc<SparseMatrix<T>>, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let out = {
            let xv = self.val(ix);
            if xv.shape() != (pattern.nnz(), 1) {
                return Err(Error::Shape {
                    op: "segment_softmax",
                    left: xv.shape(),
                    right: (pattern.nnz(), 1),
                });
            }
            let mut y = vec![T::zero(); pattern.nnz()];
            for r in 0..pattern.rows() {
                let range = pattern.row_range(r);
                softmax_into(&xv.values()[range.clone()], &mut y[range]);
            }
            Tensor::from_vec(pattern.nnz(), 1, y)?
        };
        self.push(
            "segment_softmax",
            out,
            Op::SegmentSoftmax(Arc::clone(pattern), ix),
            self.rg(&[ix]),
        )
    }

    /// Sparse matrix with recorded per-entry values times a dense matrix.
    pub fn spmm_values(&self, pattern: &Arc<SparseMatrix<T>>, vals: Var, x: Var) -> Result<Var> {
        let (iv, ix) = (self.index(vals)?, self.index(x)?);
        let out = {
            let (vv, xv) = (self.val(iv), self.val(ix));
            if vv.shape() != (pattern.nnz(), 1) || xv.rows() != pattern.cols() {
                return Err(Error::Shape {
                    op: "spmm_values",
                    left: vv.shape(),
                    right: xv.shape(),
                });
            }
            pattern.with_values(vv.values().to_vec())?.mul_dense(&xv)?
        };
        let op = Op::SpmmValues {
            pattern: Arc::clone(pattern),
            vals: iv,
            x: ix,
        };
        self.push("spmm_values", out, op, self.rg(&[iv, ix]))
    }

    pub fn unary(&self, f: Unary<T>, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let out = {
            let xv = self.val(ix);
            Tensor::from_vec(xv.rows(), xv.cols(), f.apply(xv.values())?)?
        };
        self.push(f.name(), out, Op::Unary(f, ix), self.rg(&[ix]))
    }

    pub fn tanh(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn artanh(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Artanh, x)
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn leaky_relu(&self, x: Var, slope: T) -> Result<Var> {
        self.unary(Unary::LeakyRelu(slope), x)
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    fn binary(&self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(usize, usize, Tensor<T>)> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let out = {
            let (av, bv) = (self.val(ia), self.val(ib));
            if av.shape() != bv.shape() {
                return Err(Error::Shape {
                    op: name,
                    left: av.shape(),
                    right: bv.shape(),
                });
            }
            let v = av.values().iter().zip(bv.values()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_vec(av.rows(), av.cols(), v)?
        };
        Ok((ia, ib, out))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(ia, ib), self.rg(&[ia, ib]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(ia, ib), self.rg(&[ia, ib]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(ia, ib), self.rg(&[ia, ib]))
    }

    pub fn scale(&self, x: Var, k: T) -> Result<Var> {
        let ix = self.index(x)?;
        let out = self.map_values(ix, |v| v * k)?;
        self.push("scale", out, Op::Scale(ix, k), self.rg(&[ix]))
    }

    pub fn add_scalar(&self, x: Var, k: T) -> Result<Var> {
        let ix = self.index(x)?;
        let out = self.map_values(ix, |v| v + k)?;
        self.push("add_scalar", out, Op::AddScalar(ix), self.rg(&[ix]))
    }

    fn map_values(&self, ix: usize, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
        let xv = self.val(ix);
        Tensor::from_vec(xv.rows(), xv.cols(), xv.values().iter().map(|&v| f(v)).collect())
    }

    /// `x ∘ w` with `w` a 1×d row broadcast over rows (a diagonal weight).
    pub fn mul_row_vec(&self, x: Var, w: Var) -> Result<Var> {
        let (ix, iw) = (self.index(x)?, self.index(w)?);
        let out = {
            let (xv, wv) = (self.val(ix), self.val(iw));
            if wv.shape() != (1, xv.cols()) {
                return Err(Error::Shape {
                    op: "mul_row_vec",
                    left: xv.shape(),
                    right: wv.shape(),
                });
            }
            let mut o = xv.clone();
            for r in 0..o.rows() {
                for (v, &s) in o.row_mut(r).iter_mut().zip(wv.values()) {
                    *v *= s;
                }
            }
            o
        };
        self.push("mul_row_vec", out, Op::MulRowVec(ix, iw), self.rg(&[ix, iw]))
    }

    /// Row `i` of `x` scaled by `s[i]` (`s` is n×1).
    pub fn scale_rows(&self, x: Var, s: Var) -> Result<Var> {
        let (ix, is) = (self.index(x)?, self.index(s)?);
        let out = {
            let (xv, sv) = (self.val(ix), self.val(is));
            if sv.shape() != (xv.rows(), 1) {
                return Err(Error::Shape {
                    op: "scale_rows",
                    left: xv.shape(),
                    right: sv.shape(),
                });
            }
            let mut o = xv.clone();
            for r in 0..o.rows() {
                let k = sv.values()[r];
                o.row_mut(r).iter_mut().for_each(|v| *v *= k);
            }
            o
        };
        self.push("scale_rows", out, Op::ScaleRows(ix, is), self.rg(&[ix, is]))
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let s = self.val(ix).sum();
        self.push("sum", Tensor::filled(1, 1, s), Op::SumAll(ix), self.rg(&[ix]))
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let n = self.shape(x)?;
        let count = n.0 * n.1;
        if count == 0 {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::of_usize(count))
    }

    /// Per-row sums as an n×1 column.
    pub fn sum_cols(&self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let out = {
            let xv = self.val(ix);
            let v = (0..xv.rows()).map(|r| xv.row(r).iter().copied().sum()).collect();
            Tensor::from_vec(xv.rows(), 1, v)?
        };
        self.push("sum_cols", out, Op::SumCols(ix), self.rg(&[ix]))
    }

    pub fn softmax_rows(&self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let out = softmax_rows(&self.val(ix));
        self.push("softmax_rows", out, Op::SoftmaxRows(ix), self.rg(&[ix]))
    }

    pub fn log_softmax_rows(&self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let out = {
            let xv = self.val(ix);
            let mut o = xv.clone();
            for r in 0..o.rows() {
                let lse = logsumexp(xv.row(r));
                o.row_mut(r).iter_mut().for_each(|v| *v -= lse);
            }
            o
        };
        self.push("log_softmax_rows", out, Op::LogSoftmaxRows(ix), self.rg(&[ix]))
    }

    /// Scales each nonzero row to unit L2 norm; zero rows pass through.
    pub fn rows_l2_normalize(&self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let out = rows_l2_normalize(&self.val(ix));
        self.push("rows_l2_normalize", out, Op::NormalizeRows(ix), self.rg(&[ix]))
    }

    /// Row L2 norms as an n×1 column. The subgradient at a zero row is 0.
    pub fn row_norms(&self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let out = {
            let xv = self.val(ix);
            let v = (0..xv.rows()).map(|r| norm(xv.row(r))).collect();
            Tensor::from_vec(xv.rows(), 1, v)?
        };
        self.push("row_norms", out, Op::RowNorms(ix), self.rg(&[ix]))
    }

    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let out = {
            let (av, bv) = (self.val(ia), self.val(ib));
            if av.rows() != bv.rows() {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: av.shape(),
                    right: bv.shape(),
                });
            }
            let cols = av.cols() + bv.cols();
            let mut v = Vec::with_capacity(av.rows() * cols);
            for r in 0..av.rows() {
                v.extend_from_slice(av.row(r));
                v.extend_from_slice(bv.row(r));
            }
            Tensor::from_vec(av.rows(), cols, v)?
        };
        self.push("concat_cols", out, Op::ConcatCols(ia, ib), self.rg(&[ia, ib]))
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.index(x)?;
        let out = {
            let xv = self.val(ix);
            if start + len > xv.cols() {
                return Err(Error::IndexOutOfRange {
                    op: "slice_cols",
                    index: start + len,
                    bound: xv.cols() + 1,
                });
            }
            let mut v = Vec::with_capacity(xv.rows() * len);
            for r in 0..xv.rows() {
                v.extend_from_slice(&xv.row(r)[start..start + len]);
            }
            Tensor::from_vec(xv.rows(), len, v)?
        };
        self.push("slice_cols", out, Op::SliceCols { x: ix, start }, self.rg(&[ix]))
    }

    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ix = self.index(x)?;
        let out = {
            let xv = self.val(ix);
            if start + len > xv.rows() {
                return Err(Error::IndexOutOfRange {
                    op: "slice_rows",
                    index: start + len,
                    bound: xv.rows() + 1,
                });
            }
            let c = xv.cols();
            Tensor::from_vec(len, c, xv.values()[start * c..(start + len) * c].to_vec())?
        };
        self.push("slice_rows", out, Op::SliceRows { x: ix, start }, self.rg(&[ix]))
    }

    /// Rows picked by index; repeats allowed (gradients scatter-add).
    pub fn gather_rows(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let ix = self.index(x)?;
        let out = self.val(ix).select_rows(idx)?;
        let op = Op::GatherRows {
            x: ix,
            idx: idx.to_vec(),
        };
        self.push("gather_rows", out, op, self.rg(&[ix]))
    }

    /// Diagonal of a square matrix as an n×1 column.
    pub fn diag(&self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let out = {
            let xv = self.val(ix);
            if xv.rows() != xv.cols() {
                return Err(Error::Shape {
                    op: "diag",
                    left: xv.shape(),
                    right: (xv.cols(), xv.rows()),
                });
            }
            Tensor::from_vec(xv.rows(), 1, (0..xv.rows()).map(|i| xv.get(i, i)).collect())?
        };
        self.push("diag", out, Op::Diag(ix), self.rg(&[ix]))
    }

    /// Applies a radial row map `y = a(‖x‖)·x`.
    pub fn radial(&self, f: Rc<dyn RadialFn<T>>, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let out = {
            let xv = self.val(ix);
            let mut o = xv.clone();
            for r in 0..o.rows() {
                let (a, _) = f.coeffs(norm(xv.row(r)))?;
                o.row_mut(r).iter_mut().for_each(|v| *v *= a);
            }
            o
        };
        let name = f.name();
        self.push(name, out, Op::Radial(f, ix), self.rg(&[ix]))
    }

    /// Per-row InfoNCE terms `−log softmax_k(⟨a_i, b_k⟩ / τ)[i]` as n×1.
    ///
    /// The n×n logit matrix is never materialized; the backward pass
    /// recomputes each row.
    pub fn info_nce_rows(&self, a: Var, b: Var, tau: T) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        if !(tau > T::zero()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        let inv_tau = T::one() / tau;
        let out = {
            let (av, bv) = (self.val(ia), self.val(ib));
            if av.shape() != bv.shape() {
                return Err(Error::Shape {
                    op: "info_nce_rows",
                    left: av.shape(),
                    right: bv.shape(),
                });
            }
            let n = av.rows();
            let mut logits = vec![T::zero(); n];
            let mut v = Vec::with_capacity(n);
            for i in 0..n {
                nce_logits(&av, &bv, i, inv_tau, &mut logits);
                v.push(logsumexp(&logits) - logits[i]);
            }
            Tensor::from_vec(n, 1, v)?
        };
        self.push("info_nce_rows", out, Op::InfoNce { a: ia, b: ib, inv_tau }, self.rg(&[ia, ib]))
    }

    // ---- backward -------------------------------------------------------

    /// Propagates d(loss)/d(·) into every reachable trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let il = self.index(loss)?;
        let mut nodes = self.nodes.borrow_mut();
        {
            let lv = &nodes[il].value;
            if lv.shape() != (1, 1) {
                return Err(Error::NonScalarLoss {
                    rows: lv.rows(),
                    cols: lv.cols(),
                });
            }
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=il).map(|_| None).collect();
        grads[il] = Some(vec![T::one()]);

        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = nodes[i].op {
                let slot = nodes[i]
                    .leaf_grad
                    .get_or_insert_with(|| vec![T::zero(); g.len()]);
                for (s, v) in slot.iter_mut().zip(&g) {
                    *s += *v;
                }
                continue;
            }
            backprop(&nodes, i, &g, &mut grads);
        }
        Ok(())
    }
}

fn acc<'a, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    i: usize,
) -> Option<&'a mut Vec<T>> {
    if !nodes[i].requires_grad {
        return None;
    }
    let len = nodes[i].value.len();
    Some(grads[i].get_or_insert_with(|| vec![T::zero(); len]))
}

fn backprop<T: Scalar>(nodes: &[Node<T>], i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => unreachable!(),
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (n, k, m) = (av.rows(), av.cols(), bv.cols());
            if let Some(ga) = acc(nodes, grads, *a) {
                // gA = gC · Bᵀ
                for r in 0..n {
                    let gr = &g[r * m..(r + 1) * m];
                    for t in 0..k {
                        let brow = bv.row(t);
                        let mut s = T::zero();
                        for c in 0..m {
                            s += gr[c] * brow[c];
                        }
                        ga[r * k + t] += s;
                    }
                }
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                // gB = Aᵀ · gC
                for r in 0..n {
                    let arow = av.row(r);
                    let gr = &g[r * m..(r + 1) * m];
                    for t in 0..k {
                        let x = arow[t];
                        if x == T::zero() {
                            continue;
                        }
                        let dst = &mut gb[t * m..(t + 1) * m];
                        for c in 0..m {
                            dst[c] += x * gr[c];
                        }
                    }
                }
            }
        }
        Op::Transpose(x) => {
            let (r, c) = out.shape();
            if let Some(gx) = acc(nodes, grads, *x) {
                for i in 0..r {
                    for j in 0..c {
                        gx[j * r + i] += g[i * c + j];
                    }
                }
            }
        }
        Op::Spmm(s, x) => {
            let m = out.cols();
            if let Some(gx) = acc(nodes, grads, *x) {
                for (r, c, v) in s.entries() {
                    let src = &g[r * m..(r + 1) * m];
                    let dst = &mut gx[c * m..(c + 1) * m];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += v * s;
                    }
                }
            }
        }
        Op::EdgeScores { pattern, src, dst } => {
            if let Some(gs) = acc(nodes, grads, *src) {
                for (k, &r) in pattern.row_indices().iter().enumerate() {
                    gs[r] += g[k];
                }
            }
            if let Some(gd) = acc(nodes, grads, *dst) {
                for (k, &c) in pattern.col_indices().iter().enumerate() {
                    gd[c] += g[k];
                }
            }
        }
        Op::SegmentSoftmax(pattern, x) => {
            let y = out.values();
            if let Some(gx) = acc(nodes, grads, *x) {
                for r in 0..pattern.rows() {
                    let range = pattern.row_range(r);
                    let dot: T = range.clone().map(|k| y[k] * g[k]).sum();
                    for k in range {
                        gx[k] += y[k] * (g[k] - dot);
                    }
                }
            }
        }
        Op::SpmmValues { pattern, vals, x } => {
            let m = out.cols();
            let xv = &nodes[*x].value;
            let vv = nodes[*vals].value.values();
            if let Some(gv) = acc(nodes, grads, *vals) {
                for (k, (&r, &c)) in pattern.row_indices().iter().zip(pattern.col_indices()).enumerate() {
                    let gr = &g[r * m..(r + 1) * m];
                    gv[k] += gr.iter().zip(xv.row(c)).map(|(&a, &b)| a * b).sum();
                }
            }
            if let Some(gx) = acc(nodes, grads, *x) {
                for (k, (&r, &c)) in pattern.row_indices().iter().zip(pattern.col_indices()).enumerate() {
                    let gr = &g[r * m..(r + 1) * m];
                    let dst = &mut gx[c * m..(c + 1) * m];
                    for (d, &s) in dst.iter_mut().zip(gr) {
                        *d += vv[k] * s;
                    }
                }
            }
        }
        Op::Unary(f, x) => {
            let xv = nodes[*x].value.values();
            let y = out.values();
            if let Some(gx) = acc(nodes, grads, *x) {
                for k in 0..g.len() {
                    gx[k] += g[k] * f.derivative(xv[k], y[k]);
                }
            }
        }
        Op::Add(a, b) => {
            for &t in &[*a, *b] {
                if let Some(gt) = acc(nodes, grads, t) {
                    gt.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = acc(nodes, grads, *a) {
                ga.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                gb.iter_mut().zip(g).for_each(|(d, &s)| *d -= s);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].value.values(), nodes[*b].value.values());
            if let Some(ga) = acc(nodes, grads, *a) {
                for k in 0..g.len() {
                    ga[k] += g[k] * bv[k];
                }
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                for k in 0..g.len() {
                    gb[k] += g[k] * av[k];
                }
            }
        }
        Op::Scale(x, k) => {
            if let Some(gx) = acc(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s * *k);
            }
        }
        Op::AddScalar(x) => {
            if let Some(gx) = acc(nodes, grads, *x) {
                gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
            }
        }
        Op::MulRowVec(x, w) => {
            let (xv, wv) = (&nodes[*x].value, &nodes[*w].value);
            let d = xv.cols();
            if let Some(gx) = acc(nodes, grads, *x) {
                for k in 0..g.len() {
                    gx[k] += g[k] * wv.values()[k % d];
                }
            }
            if let Some(gw) = acc(nodes, grads, *w) {
                for k in 0..g.len() {
                    gw[k % d] += g[k] * xv.values()[k];
                }
            }
        }
        Op::ScaleRows(x, s) => {
            let (xv, sv) = (&nodes[*x].value, &nodes[*s].value);
            let d = xv.cols();
            if let Some(gx) = acc(nodes, grads, *x) {
                for k in 0..g.len() {
                    gx[k] += g[k] * sv.values()[k / d];
                }
            }
            if let Some(gs) = acc(nodes, grads, *s) {
                for r in 0..xv.rows() {
                    gs[r] += g[r * d..(r + 1) * d]
                        .iter()
                        .zip(xv.row(r))
                        .map(|(&a, &b)| a * b)
                        .sum();
                }
            }
        }
        Op::SumAll(x) => {
            if let Some(gx) = acc(nodes, grads, *x) {
                gx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::SumCols(x) => {
            let d = nodes[*x].value.cols();
            if let Some(gx) = acc(nodes, grads, *x) {
                for k in 0..gx.len() {
                    gx[k] += g[k / d];
                }
            }
        }
        Op::SoftmaxRows(x) => {
            let c = out.cols();
            if let Some(gx) = acc(nodes, grads, *x) {
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        gx[r * c + j] += y[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::LogSoftmaxRows(x) => {
            let c = out.cols();
            if let Some(gx) = acc(nodes, grads, *x) {
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let gs: T = gr.iter().copied().sum();
                    for j in 0..c {
                        gx[r * c + j] += gr[j] - y[j].exp() * gs;
                    }
                }
            }
        }
        Op::NormalizeRows(x) => {
            let xv = &nodes[*x].value;
            let c = out.cols();
            if let Some(gx) = acc(nodes, grads, *x) {
                for r in 0..out.rows() {
                    let n = norm(xv.row(r));
                    let gr = &g[r * c..(r + 1) * c];
                    if n == T::zero() {
                        for j in 0..c {
                            gx[r * c + j] += gr[j];
                        }
                        continue;
                    }
                    let y = out.row(r);
                    let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..c {
                        gx[r * c + j] += (gr[j] - y[j] * dot) / n;
                    }
                }
            }
        }
        Op::RowNorms(x) => {
            let xv = &nodes[*x].value;
            let c = xv.cols();
            if let Some(gx) = acc(nodes, grads, *x) {
                for r in 0..xv.rows() {
                    let n = out.values()[r];
                    if n == T::zero() {
                        continue;
                    }
                    let k = g[r] / n;
                    for (j, &v) in xv.row(r).iter().enumerate() {
                        gx[r * c + j] += k * v;
                    }
                }
            }
        }
        Op::ConcatCols(a, b) => {
            let (ca, cb) = (nodes[*a].value.cols(), nodes[*b].value.cols());
            let c = ca + cb;
            if let Some(ga) = acc(nodes, grads, *a) {
                for r in 0..out.rows() {
                    for j in 0..ca {
                        ga[r * ca + j] += g[r * c + j];
                    }
                }
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                for r in 0..out.rows() {
                    for j in 0..cb {
                        gb[r * cb + j] += g[r * c + ca + j];
                    }
                }
            }
        }
        Op::SliceCols { x, start } => {
            let cx = nodes[*x].value.cols();
            let len = out.cols();
            if let Some(gx) = acc(nodes, grads, *x) {
                for r in 0..out.rows() {
                    for j in 0..len {
                        gx[r * cx + start + j] += g[r * len + j];
                    }
                }
            }
        }
        Op::SliceRows { x, start } => {
            let c = out.cols();
            if let Some(gx) = acc(nodes, grads, *x) {
                let off = start * c;
                for (k, &v) in g.iter().enumerate() {
                    gx[off + k] += v;
                }
            }
        }
        Op::GatherRows { x, idx } => {
            let c = out.cols();
            if let Some(gx) = acc(nodes, grads, *x) {
                for (r, &src) in idx.iter().enumerate() {
                    for j in 0..c {
                        gx[src * c + j] += g[r * c + j];
                    }
                }
            }
        }
        Op::Diag(x) => {
            let n = out.rows();
            if let Some(gx) = acc(nodes, grads, *x) {
                for i in 0..n {
                    gx[i * n + i] += g[i];
                }
            }
        }
        Op::Radial(f, x) => {
            let xv = &nodes[*x].value;
            let c = xv.cols();
            if let Some(gx) = acc(nodes, grads, *x) {
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let (a, b) = f.coeffs(norm(row)).expect("forward pass validated the domain");
                    let gr = &g[r * c..(r + 1) * c];
                    let dot: T = row.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..c {
                        gx[r * c + j] += a * gr[j] + b * dot * row[j];
                    }
                }
            }
        }
        Op::InfoNce { a, b, inv_tau } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (n, d) = av.shape();
            let mut logits = vec![T::zero(); n];
            let mut ga_local = vec![T::zero(); n * d];
            let mut gb_local = vec![T::zero(); n * d];
            for i in 0..n {
                if g[i] == T::zero() {
                    continue;
                }
                nce_logits(av, bv, i, *inv_tau, &mut logits);
                let lse = logsumexp(&logits);
                let arow = av.row(i);
                for k in 0..n {
                    let mut w = (logits[k] - lse).exp();
                    if k == i {
                        w -= T::one();
                    }
                    let w = w * g[i] * *inv_tau;
                    let brow = bv.row(k);
                    for j in 0..d {
                        ga_local[i * d + j] += w * brow[j];
                        gb_local[k * d + j] += w * arow[j];
                    }
                }
            }
            if let Some(ga) = acc(nodes, grads, *a) {
                ga.iter_mut().zip(&ga_local).for_each(|(x, &y)| *x += y);
            }
            if let Some(gb) = acc(nodes, grads, *b) {
                gb.iter_mut().zip(&gb_local).for_each(|(x, &y)| *x += y);
            }
        }
    }
}

// ---- plain-value kernels ------------------------------------------------

pub(crate) fn gemm<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(n, m);
    for r in 0..n {
        let arow = a.row(r);
        let orow = out.row_mut(r);
        for t in 0..k {
            let x = arow[t];
            if x == T::zero() {
                continue;
            }
            for (o, &y) in orow.iter_mut().zip(b.row(t)) {
                *o += x * y;
            }
        }
    }
    out
}

pub(crate) fn transpose<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (r, c) = x.shape();
    let mut out = Tensor::zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            out.set(j, i, x.get(i, j));
        }
    }
    out
}

pub(crate) fn norm<T: Scalar>(row: &[T]) -> T {
    row.iter().map(|&v| v * v).sum::<T>().sqrt()
}

pub(crate) fn logsumexp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

fn softmax_into<T: Scalar>(x: &[T], y: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for (o, &v) in y.iter_mut().zip(x) {
        *o = (v - m).exp();
        s += *o;
    }
    y.iter_mut().for_each(|o| *o /= s);
}

pub(crate) fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for r in 0..x.rows() {
        softmax_into(x.row(r), out.row_mut(r));
    }
    out
}

pub(crate) fn rows_l2_normalize<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.detached();
    for r in 0..x.rows() {
        let n = norm(x.row(r));
        if n > T::zero() {
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

fn nce_logits<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, i: usize, inv_tau: T, out: &mut [T]) {
    let arow = a.row(i);
    for (k, o) in out.iter_mut().enumerate() {
        *o = arow.iter().zip(b.row(k)).map(|(&x, &y)| x * y).sum::<T>() * inv_tau;
    }
}
