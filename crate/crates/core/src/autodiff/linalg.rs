//! Dense matrix multiply on row-major buffers.

/// C = op(A) * op(B) + beta * C where op is an optional transpose.
/// Logical dims: A is [m, k], B is [k, n], C is [m, n] after transposition.
pub fn gemm(
    m: usize,
    n: usize,
    k: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product_with_transposes() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0; 4];
        gemm(2, 2, 3, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        // A^T where stored A is 3x2: logical [2,3]
        let a_t = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // stored 3x2
        let mut c2 = [0.0; 4];
        gemm(2, 2, 3, &a_t, true, &b, false, 0.0, &mut c2);
        assert_eq!(c2, c);

        // B^T where stored B is 2x3: logical [3,2]
        let b_t = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0]; // stored 2x3
        let mut c3 = [0.0; 4];
        gemm(2, 2, 3, &a, false, &b_t, true, 0.0, &mut c3);
        assert_eq!(c3, c);

        // accumulate with beta
        gemm(2, 2, 3, &a, false, &b, false, 1.0, &mut c3);
        assert_eq!(c3, [116.0, 128.0, 278.0, 308.0]);
    }
}
