//! Floating-point abstraction so the engine runs in f32 for training and f64
//! for oracle tests, with a GEMM primitive dispatched per type.

use num_traits::Float;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;

    fn to_f64(self) -> f64;

    /// `C <- alpha * A(m x k) * B(k x n) + beta * C`, arbitrary strides.
    ///
    /// # Safety
    /// Pointers must cover every element addressed by the given strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize,
        alpha: Self,
        a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self,
        c: *mut Self, rsc: isize, csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize,
        alpha: Self,
        a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self,
        c: *mut Self, rsc: isize, csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided view of a row-major matrix block.
#[derive(Clone, Copy)]
pub struct MatView<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
}

impl<'a, T: Scalar> MatView<'a, T> {
    pub fn dense(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        MatView { data, rows, cols, row_stride: cols }
    }
}

/// Safe GEMM over slices: `C <- alpha * op(A) * op(B) + beta * C` where each
/// operand may be used transposed.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    alpha: T,
    a: MatView<'_, T>,
    a_transposed: bool,
    b: MatView<'_, T>,
    b_transposed: bool,
    beta: T,
    c: &mut [T],
    c_rows: usize,
    c_cols: usize,
    c_row_stride: usize,
) {
    let (m, ka, rsa, csa) = if a_transposed {
        (a.cols, a.rows, 1isize, a.row_stride as isize)
    } else {
        (a.rows, a.cols, a.row_stride as isize, 1isize)
    };
    let (kb, n, rsb, csb) = if b_transposed {
        (b.cols, b.rows, 1isize, b.row_stride as isize)
    } else {
        (b.rows, b.cols, b.row_stride as isize, 1isize)
    };
    assert_eq!(ka, kb, "inner dimensions must agree");
    assert_eq!(m, c_rows);
    assert_eq!(n, c_cols);
    assert!(c.len() >= (c_rows - 1) * c_row_stride + c_cols || c_rows == 0);
    unsafe {
        T::gemm_raw(
            m, ka, n, alpha,
            a.data.as_ptr(), rsa, csa,
            b.data.as_ptr(), rsb, csb,
            beta,
            c.as_mut_ptr(), c_row_stride as isize, 1,
        );
    }
}
