//! Row-major GEMM and im2col helpers.

/// `c = a * b + beta * c` where `a` is `m x k`, `b` is `k x n` and `c` is
/// `m x n`, all row-major. `a_t`/`b_t` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above keep every strided access inside the slices.
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

/// Unfolds a `(channels, h, w)` image into `(channels * k * k, ho * wo)`
/// columns for a valid, stride-1 convolution.
pub(crate) fn im2col(
    image: &[f64],
    (channels, h, w): (usize, usize, usize),
    k: usize,
    cols: &mut [f64],
) {
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let hw = ho * wo;
    for c in 0..channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * hw;
                for y in 0..ho {
                    let src = &image[c * h * w + (y + ky) * w + kx..][..wo];
                    cols[row + y * wo..row + (y + 1) * wo].copy_from_slice(src);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; x.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = x[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_in_every_layout() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let (at, bt) = (transpose(m, k, &a), transpose(k, n, &b));
        for (aa, a_t) in [(&a, false), (&at, true)] {
            for (bb, b_t) in [(&b, false), (&bt, true)] {
                let mut c = vec![1.0; m * n];
                gemm(m, k, n, aa, a_t, bb, b_t, &mut c, 0.0);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
        let mut c = vec![1.0; m * n];
        gemm(m, k, n, &a, false, &b, false, &mut c, 1.0);
        assert!((c[0] - want[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn im2col_layout() {
        // 1 channel 3x3, kernel 2 -> 4 rows of 4 columns.
        let img: Vec<f64> = (0..9).map(f64::from).collect();
        let mut cols = vec![0.0; 16];
        im2col(&img, (1, 3, 3), 2, &mut cols);
        assert_eq!(&cols[..4], &[0.0, 1.0, 3.0, 4.0]);
        assert_eq!(&cols[12..], &[4.0, 5.0, 7.0, 8.0]);
    }
}
