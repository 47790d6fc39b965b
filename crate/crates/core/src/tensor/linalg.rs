//! Thin wrapper over `matrixmultiply::dgemm`.

/// Row-major matrix view: `(rows, cols, row_stride, col_stride)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatLayout {
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl MatLayout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// The transpose of a row-major `(rows, cols)` buffer, seen as `(cols, rows)`.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Self {
            rows: cols,
            cols: rows,
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c = a·b + beta·c`, with `c` row-major `(a.rows, b.cols)`.
pub(crate) fn gemm(a: &[f64], la: MatLayout, b: &[f64], lb: MatLayout, c: &mut [f64], beta: f64) {
    debug_assert_eq!(la.cols, lb.rows);
    let (m, k, n) = (la.rows, la.cols, lb.cols);
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the layouts describe in-bounds views of `a`, `b` and `c`, which
    // the callers construct from buffers of exactly these extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs,
            la.cs,
            b.as_ptr(),
            lb.rs,
            lb.cs,
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
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(f64::from).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| f64::from(x) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(&a, MatLayout::row_major(2, 3), &b, MatLayout::row_major(3, 4), &mut c, 0.0);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum();
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gemm_transposed_operand() {
        // a is stored as 3x2, used as its 2x3 transpose.
        let a_t = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let b = [1.0, 0.0, 1.0];
        let mut c = vec![0.0; 2];
        gemm(&a_t, MatLayout::transposed(3, 2), &b, MatLayout::row_major(3, 1), &mut c, 0.0);
        assert_eq!(c, vec![4.0, 10.0]);
    }
}
