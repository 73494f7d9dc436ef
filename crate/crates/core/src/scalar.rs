//! Floating point element type shared by tensors, the tape and the model.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Element type of a [`Tensor`](crate::Tensor): `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float + FromPrimitive + NumCast + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; used for hyper-parameters and constants.
    fn of(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 converts to any float")
    }

    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("float converts to f64")
    }

    fn as_f32(self) -> f32 {
        <f32 as NumCast>::from(self).expect("float converts to f32")
    }

    /// `c += a·b` where `a` is `m×k` and `b` is `k×n`, both addressed through
    /// (row, column) strides, and `c` is a contiguous row-major `m×n` buffer.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_strides: (usize, usize), b: &[Self], b_strides: (usize, usize), c: &mut [Self]);
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (usize, usize)) {
    if rows > 0 && cols > 0 {
        assert!((rows - 1) * rs + (cols - 1) * cs < len, "gemm operand out of bounds");
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                c: &mut [Self],
            ) {
                if m == 0 || n == 0 || k == 0 {
                    return;
                }
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                assert!(c.len() >= m * n, "gemm output out of bounds");
                // SAFETY: every index touched through the strides was bounds-checked above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        1.0,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
