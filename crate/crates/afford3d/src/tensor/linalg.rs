//! Matrix-multiply kernels for the three layouts the backward passes need.
//!
//! All kernels use a fixed summation order per output element, so results
//! are bitwise identical regardless of the rayon worker count.

use rayon::prelude::*;

// Below this many multiply-adds the rayon dispatch overhead dominates.
const PAR_THRESHOLD: usize = 64 * 1024;

/// C (m,n) = A (m,k) · B (k,n)
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    let work = m * k * n;
    let body = |i: usize, row: &mut [f64]| {
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cj, &bj) in row.iter_mut().zip(b_row.iter()) {
                *cj += aik * bj;
            }
        }
    };
    if work >= PAR_THRESHOLD {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in c.chunks_mut(n).enumerate() {
            body(i, row);
        }
    }
    c
}

/// C (m,n) = A (m,k) · B (n,k)ᵀ — dot products of rows.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; m * n];
    let work = m * k * n;
    let body = |i: usize, row: &mut [f64]| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, cj) in row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row.iter()) {
                acc += x * y;
            }
            *cj = acc;
        }
    };
    if work >= PAR_THRESHOLD {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, row)| body(i, row));
    } else {
        for (i, row) in c.chunks_mut(n).enumerate() {
            body(i, row);
        }
    }
    c
}

/// C (m,n) = A (k,m)ᵀ · B (k,n)
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    let work = m * k * n;
    // Each thread owns a block of C rows and streams over all of A and B,
    // keeping the k-order accumulation fixed.
    let body = |rows: std::ops::Range<usize>, block: &mut [f64]| {
        for kk in 0..k {
            let b_row = &b[kk * n..(kk + 1) * n];
            let a_row = &a[kk * m..(kk + 1) * m];
            for i in rows.clone() {
                let aki = a_row[i];
                if aki == 0.0 {
                    continue;
                }
                let c_row = &mut block[(i - rows.start) * n..(i - rows.start + 1) * n];
                for (cj, &bj) in c_row.iter_mut().zip(b_row.iter()) {
                    *cj += aki * bj;
                }
            }
        }
    };
    if work >= PAR_THRESHOLD && m >= 2 {
        let n_chunks = rayon::current_num_threads().max(1);
        let chunk = m.div_ceil(n_chunks);
        c.par_chunks_mut(chunk * n)
            .enumerate()
            .for_each(|(ci, block)| {
                let start = ci * chunk;
                let end = (start + chunk).min(m);
                body(start..end, block);
            });
    } else {
        body(0..m, &mut c);
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for kk in 0..k {
                    s += a[i * k + kk] * b[kk * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn kernels_agree_with_naive() {
        let mut rng = Rng::new(1);
        for &(m, k, n) in &[(3, 4, 5), (17, 9, 23), (64, 64, 64), (1, 7, 1)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
            let want = naive(&a, &b, m, k, n);

            let c_nn = matmul_nn(&a, &b, m, k, n);
            // transpose b into (n,k) for nt
            let mut bt = vec![0.0; k * n];
            for kk in 0..k {
                for j in 0..n {
                    bt[j * k + kk] = b[kk * n + j];
                }
            }
            let c_nt = matmul_nt(&a, &bt, m, k, n);
            // transpose a into (k,m) for tn
            let mut at = vec![0.0; m * k];
            for i in 0..m {
                for kk in 0..k {
                    at[kk * m + i] = a[i * k + kk];
                }
            }
            let c_tn = matmul_tn(&at, &b, m, k, n);

            for idx in 0..m * n {
                assert!((c_nn[idx] - want[idx]).abs() < 1e-12);
                assert!((c_nt[idx] - want[idx]).abs() < 1e-12);
                assert!((c_tn[idx] - want[idx]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn large_parallel_matches_serial_bitwise() {
        let mut rng = Rng::new(2);
        let (m, k, n) = (128, 96, 130);
        let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
        let big = matmul_nn(&a, &b, m, k, n); // above threshold → parallel
        let reference = naive(&a, &b, m, k, n); // different summation order
        for idx in 0..m * n {
            assert!((big[idx] - reference[idx]).abs() < 1e-10);
        }
        // bitwise determinism across repeated parallel runs
        let again = matmul_nn(&a, &b, m, k, n);
        assert_eq!(big, again);
    }
}
