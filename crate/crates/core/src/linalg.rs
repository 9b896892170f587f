//! Row-major dense matrix products backed by `matrixmultiply`.

use alloc::vec;
use alloc::vec::Vec;

/// Whether an operand is used as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// `c = alpha * op(a) * op(b) + beta * c`, all row-major.
///
/// `op(a)` is `m × k` and `op(b)` is `k × n`. When `a` is transposed it is
/// stored as `k × m`; likewise for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(ta: Op, tb: Op, m: usize, n: usize, k: usize, alpha: f64, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: out size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = match ta {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    // SAFETY: the asserts above pin every slice to the extent the strides address.
    unsafe {
        matrixmultiply::dgemm(
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

/// `a (m×k) · b (k×n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(Op::N, Op::N, m, n, k, 1.0, a, b, 0.0, &mut c);
    c
}

/// `a (m×k) · bᵀ` where `b` is `n×k`; the usual `x Wᵀ` of a linear layer.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(Op::N, Op::T, m, n, k, 1.0, a, b, 0.0, &mut c);
    c
}

/// `aᵀ · b` where `a` is `k×m` and `b` is `k×n`; weight gradients.
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(Op::T, Op::N, m, n, k, 1.0, a, b, 0.0, &mut c);
    c
}

/// `c += aᵀ · b`.
pub fn add_matmul_tn(c: &mut [f64], a: &[f64], b: &[f64], k: usize, m: usize, n: usize) {
    gemm(Op::T, Op::N, m, n, k, 1.0, a, b, 1.0, c);
}
