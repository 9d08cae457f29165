//! Differentiable-computation substrate: dense and sparse matrices, the
//! operation tape, Xavier initialization, Adam, and finite-difference
//! gradient checking.

mod adam;
mod gradcheck;
mod init;
mod sparse;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamError};
pub use init::{xavier_bound, xavier_init};
pub use sparse::SparseMatrix;
pub use tape::{RadialFn, Tape, Unary, Var};
pub use tensor::Tensor;

use crate::scalar::Scalar;

/// Plain matrix product (no recording).
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> crate::Result<Tensor<T>> {
    if a.cols() != b.rows() {
        return Err(crate::Error::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(tape::gemm(a, b))
}

pub fn transpose<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    tape::transpose(x)
}

pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    tape::softmax_rows(x)
}

pub fn rows_l2_normalize<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    tape::rows_l2_normalize(x)
}

pub fn row_norm<T: Scalar>(row: &[T]) -> T {
    tape::norm(row)
}

pub fn logsumexp<T: Scalar>(xs: &[T]) -> T {
    tape::logsumexp(xs)
}
