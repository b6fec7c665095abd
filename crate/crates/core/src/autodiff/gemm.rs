//! Thin safe wrapper over `matrixmultiply::dgemm`.
//!
//! Every output element is reduced over `k` in the same order regardless of
//! how many rows are in the call, so results are row-batch invariant.

/// Strided view of a matrix inside a flat slice.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c = a·b` (or `c += a·b` when `accumulate`), `c` row-major `a.rows × b.cols`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64], accumulate: bool) {
    assert_eq!(a.cols, b.rows, "gemm inner extents");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "gemm output buffer too small");
    assert!(a.data.len() >= a.span() && b.data.len() >= b.span(), "gemm operand out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided index of a, b, c
    // stays inside its slice; c is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
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
    fn transposed_views() {
        // a = [[1,2,3],[4,5,6]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let am = MatRef::row_major(&a, 2, 3);
        let mut c = [0.0; 4];
        gemm(am, am.t(), &mut c, false);
        assert_eq!(c, [14.0, 32.0, 32.0, 77.0]);
        gemm(am, am.t(), &mut c, true);
        assert_eq!(c, [28.0, 64.0, 64.0, 154.0]);
    }

    #[test]
    fn row_batch_invariance() {
        let k = 37;
        let n = 19;
        let a: Vec<f64> = (0..50 * k).map(|i| ((i * 7919) % 113) as f64 / 17.0 - 3.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 104729) % 97) as f64 / 11.0 - 4.0).collect();
        let mut full = vec![0.0; 50 * n];
        gemm(MatRef::row_major(&a, 50, k), MatRef::row_major(&b, k, n), &mut full, false);
        for r in [0, 3, 17, 49] {
            let mut one = vec![0.0; n];
            gemm(
                MatRef::row_major(&a[r * k..(r + 1) * k], 1, k),
                MatRef::row_major(&b, k, n),
                &mut one,
                false,
            );
            for j in 0..n {
                assert_eq!(one[j].to_bits(), full[r * n + j].to_bits());
            }
        }
    }
}
