//! Scalar abstraction shared by the numeric modules.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating point scalar usable by the geometry, tape and network code.
///
/// `gemm` computes `c = alpha * a * b + beta * c` with explicit row/column
/// strides, so transposed operands cost nothing. The default is a plain
/// triple loop; `f32` and `f64` route to `matrixmultiply`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    ) {
        check_extent(m, k, a.len(), a_strides);
        check_extent(k, n, b.len(), b_strides);
        check_extent(m, n, c.len(), c_strides);
        let at = |s: (isize, isize), i: usize, j: usize| (i as isize * s.0 + j as isize * s.1) as usize;
        for i in 0..m {
            for j in 0..n {
                let mut acc = Self::zero();
                for p in 0..k {
                    acc = acc + a[at(a_strides, i, p)] * b[at(b_strides, p, j)];
                }
                let idx = at(c_strides, i, j);
                c[idx] = if beta == Self::zero() { alpha * acc } else { alpha * acc + beta * c[idx] };
            }
        }
    }

    /// Converts an `f64` constant; panics only for types that cannot hold it.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }
}

fn check_extent(rows: usize, cols: usize, len: usize, strides: (isize, isize)) {
    assert!(strides.0 >= 0 && strides.1 >= 0, "negative strides unsupported");
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * strides.0 as usize + (cols - 1) * strides.1 as usize;
    assert!(last < len, "gemm operand out of bounds");
}

impl Real for f64 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        a_strides: (isize, isize),
        b: &[f64],
        b_strides: (isize, isize),
        beta: f64,
        c: &mut [f64],
        c_strides: (isize, isize),
    ) {
        check_extent(m, k, a.len(), a_strides);
        check_extent(k, n, b.len(), b_strides);
        check_extent(m, n, c.len(), c_strides);
        // SAFETY: every index the kernel touches was bounds-checked above.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, alpha,
                a.as_ptr(), a_strides.0, a_strides.1,
                b.as_ptr(), b_strides.0, b_strides.1,
                beta,
                c.as_mut_ptr(), c_strides.0, c_strides.1,
            );
        }
    }
}

impl Real for f32 {
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        a_strides: (isize, isize),
        b: &[f32],
        b_strides: (isize, isize),
        beta: f32,
        c: &mut [f32],
        c_strides: (isize, isize),
    ) {
        check_extent(m, k, a.len(), a_strides);
        check_extent(k, n, b.len(), b_strides);
        check_extent(m, n, c.len(), c_strides);
        // SAFETY: see the f64 impl.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, alpha,
                a.as_ptr(), a_strides.0, a_strides.1,
                b.as_ptr(), b_strides.0, b_strides.1,
                beta,
                c.as_mut_ptr(), c_strides.0, c_strides.1,
            );
        }
    }
}
