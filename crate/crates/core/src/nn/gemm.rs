//! Thin row-major wrappers over `matrixmultiply::sgemm`.

/// Layout of an operand as stored in memory.
#[derive(Clone, Copy)]
pub(crate) enum Op {
    N,
    /// Operand is stored row-major but used transposed.
    T,
}

/// `c = alpha * op(a) * op(b) + beta * c` for row-major `c` of size `m x n`.
///
/// `op(a)` is `m x k` and `op(b)` is `k x n`. Stored dimensions follow
/// from the `Op` flags.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    op_a: Op,
    b: &[f32],
    op_b: Op,
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = match op_a {
        Op::N => (k as isize, 1),
        Op::T => (1, m as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (n as isize, 1),
        Op::T => (1, k as isize),
    };
    // SAFETY: the asserts above pin each buffer to exactly the extent the
    // strides address.
    unsafe {
        matrixmultiply::sgemm(
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
