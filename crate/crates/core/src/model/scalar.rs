use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of model tensors. Training uses `f32`;
/// gradient checks use `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + MulAssign + 'static
{
    /// `c = alpha * a·b + beta * c` over strided views (see `matrixmultiply`).
    ///
    /// # Safety
    /// Every strided index must lie inside the corresponding slice; the safe
    /// wrappers below check this.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: Self,
        a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self, c: *mut Self, rsc: isize, csc: isize,
    );

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f32,
        a: *const f32, rsa: isize, csa: isize,
        b: *const f32, rsb: isize, csb: isize,
        beta: f32, c: *mut f32, rsc: isize, csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f64,
        a: *const f64, rsa: isize, csa: isize,
        b: *const f64, rsb: isize, csb: isize,
        beta: f64, c: *mut f64, rsc: isize, csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

fn last_index(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// Strided gemm with bounds checks. Strides are (row stride, col stride).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize, k: usize, n: usize,
    a: &[T], sa: (usize, usize),
    b: &[T], sb: (usize, usize),
    beta: T, c: &mut [T], sc: (usize, usize),
) {
    assert!(last_index(m, k, sa.0, sa.1) <= a.len(), "gemm: lhs out of bounds");
    assert!(last_index(k, n, sb.0, sb.1) <= b.len(), "gemm: rhs out of bounds");
    assert!(last_index(m, n, sc.0, sc.1) <= c.len(), "gemm: output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: all strided accesses were bounds-checked above.
    unsafe {
        T::gemm_raw(
            m, k, n, T::one(),
            a.as_ptr(), sa.0 as isize, sa.1 as isize,
            b.as_ptr(), sb.0 as isize, sb.1 as isize,
            beta, c.as_mut_ptr(), sc.0 as isize, sc.1 as isize,
        )
    }
}

/// `c (m×n) = a (m×k) · b (k×n) + beta c`, all row-major.
pub fn matmul_nn<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, beta: T) {
    gemm(m, k, n, a, (k, 1), b, (n, 1), beta, c, (n, 1));
}

/// `c (m×n) = a (m×k) · bᵀ + beta c` with `b` stored row-major as n×k.
pub fn matmul_nt<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, beta: T) {
    gemm(m, k, n, a, (k, 1), b, (1, k), beta, c, (n, 1));
}

/// `c (m×n) = aᵀ · b + beta c` with `a` stored row-major as k×m.
pub fn matmul_tn<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, beta: T) {
    gemm(m, k, n, a, (1, m), b, (n, 1), beta, c, (n, 1));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn variants_agree_with_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        let mut c = vec![0.0; m * n];
        matmul_nn(&mut c, &a, &b, m, k, n, 0.0);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
        let bt = transpose(&b, k, n);
        let mut c2 = vec![0.0; m * n];
        matmul_nt(&mut c2, &a, &bt, m, k, n, 0.0);
        assert!(c2.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
        let at = transpose(&a, m, k);
        let mut c3 = vec![1.0; m * n];
        matmul_tn(&mut c3, &at, &b, m, k, n, 1.0);
        assert!(c3.iter().zip(&want).all(|(x, y)| (x - 1.0 - y).abs() < 1e-12));
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn bounds_checked() {
        let mut c = vec![0f32; 4];
        matmul_nn(&mut c, &[1.0; 3], &[1.0; 4], 2, 2, 2, 0.0);
    }
}
