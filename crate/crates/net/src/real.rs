use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the network. Training runs in `f32`;
/// `f64` exists for finite-difference gradient checks.
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static {
    /// `C = alpha·op(A)·op(B) + beta·C` on row-major buffers, where `op`
    /// optionally transposes. `op(A)` is m×k, `op(B)` is k×n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

/// Row/column strides of a row-major buffer with `stored_cols` columns,
/// read either as stored or transposed.
fn strides(stored_cols: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, stored_cols as isize)
    } else {
        (stored_cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                // Stored A is m×k, or k×m when transposed; likewise B.
                let (rsa, csa) = strides(if a_trans { m } else { k }, a_trans);
                let (rsb, csb) = strides(if b_trans { k } else { n }, b_trans);
                // SAFETY: bounds checked above; strides describe the buffers.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);
