//! Row-major dense products used by the batched network passes.
//!
//! All matrices are contiguous row-major slices. Layouts are checked before
//! handing the pointers to the kernel.

use crate::scalar::Real;

fn check(what: &str, len: usize, rows: usize, cols: usize) {
    assert!(
        len >= rows * cols,
        "{what}: buffer of {len} elements too small for {rows}x{cols}"
    );
}

/// `c (m×n) = a (m×k) · bᵀ` where `b` is stored as `n×k`, plus `beta·c`.
pub fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    check("a", a.len(), m, k);
    check("b", b.len(), n, k);
    check("c", c.len(), m, n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds checked above for the strides used.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c (m×n) += aᵀ · b` where `a` is stored as `k×m` and `b` as `k×n`.
pub fn gemm_tn_acc<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    check("a", a.len(), k, m);
    check("b", b.len(), k, n);
    check("c", c.len(), m, n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: bounds checked above for the strides used.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            T::one(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c (m×n) = a (m×k) · b (k×n)`.
pub fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    check("a", a.len(), m, k);
    check("b", b.len(), k, n);
    check("c", c.len(), m, n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds checked above for the strides used.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            T::zero(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(
        m: usize,
        k: usize,
        n: usize,
        a: impl Fn(usize, usize) -> f64,
        b: impl Fn(usize, usize) -> f64,
    ) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a(i, p) * b(p, j)).sum();
            }
        }
        c
    }

    #[test]
    fn products_match_naive_loops() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let bt: Vec<f64> = (0..n * k).map(|i| (i as f64).sin()).collect();
        let mut c = vec![0.0; m * n];
        gemm_nt(m, k, n, &a, &bt, 0.0, &mut c);
        let want = naive(m, k, n, |i, p| a[i * k + p], |p, j| bt[j * k + p]);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).cos()).collect();
        gemm_nn(m, k, n, &a, &b, &mut c);
        let want = naive(m, k, n, |i, p| a[i * k + p], |p, j| b[p * n + j]);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // aᵀ b with a stored k×m
        let at: Vec<f64> = (0..k * m).map(|i| i as f64 - 1.0).collect();
        let mut acc = vec![1.0; m * n];
        gemm_tn_acc(m, k, n, &at, &b, &mut acc);
        let want = naive(m, k, n, |i, p| at[p * m + i], |p, j| b[p * n + j]);
        for (x, y) in acc.iter().zip(&want) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }
}
