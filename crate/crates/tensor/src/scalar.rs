use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point element type of a [`Tensor`](crate::Tensor): `f32` or `f64`.
///
/// Everything above this crate is written against `Scalar`; matrix products
/// dispatch to the blocked kernels in `matrixmultiply` for both widths.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a·b + beta * c` over strided row/column layouts.
    ///
    /// Strides are in elements. The caller guarantees every addressed element
    /// lies inside the slices; [`gemm_checked`] asserts it.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    /// Sum accumulated in `f64`, so long single-precision reductions keep
    /// their low-order bits.
    fn sum_wide<I: IntoIterator<Item = Self>>(xs: I) -> Self {
        Self::lit(xs.into_iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).sum())
    }
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_checked<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    sa: (usize, usize),
    b: &[T],
    sb: (usize, usize),
    beta: T,
    c: &mut [T],
    sc: (usize, usize),
) {
    assert!(span(m, k, sa.0, sa.1) <= a.len(), "gemm: lhs out of bounds");
    assert!(span(k, n, sb.0, sb.1) <= b.len(), "gemm: rhs out of bounds");
    assert!(span(m, n, sc.0, sc.1) <= c.len(), "gemm: output out of bounds");
    T::gemm(m, k, n, alpha, a, sa, b, sb, beta, c, sc);
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                (rsa, csa): (usize, usize),
                b: &[Self],
                (rsb, csb): (usize, usize),
                beta: Self,
                c: &mut [Self],
                (rsc, csc): (usize, usize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: bounds are checked by `gemm_checked`, the only caller.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);
