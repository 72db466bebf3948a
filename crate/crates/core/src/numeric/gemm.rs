//! Strided matrix multiply on top of `matrixmultiply`.

/// Row and column stride of a matrix view.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Strides {
    pub row: usize,
    pub col: usize,
}

impl Strides {
    /// Row-major storage of a `rows x cols` matrix, optionally viewed transposed.
    pub fn row_major(cols: usize, transposed: bool) -> Self {
        if transposed {
            Strides { row: 1, col: cols }
        } else {
            Strides { row: cols, col: 1 }
        }
    }

    pub fn t(self) -> Self {
        Strides {
            row: self.col,
            col: self.row,
        }
    }

    fn span(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row + (cols - 1) * self.col + 1
        }
    }
}

/// `c = a * b + beta * c` for an `m x k` view `a` and a `k x n` view `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
    sc: Strides,
) {
    assert!(sa.span(m, k) <= a.len(), "gemm: lhs view out of bounds");
    assert!(sb.span(k, n) <= b.len(), "gemm: rhs view out of bounds");
    assert!(sc.span(m, n) <= c.len(), "gemm: output view out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every view was bounds-checked above, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.row as isize,
            sa.col as isize,
            b.as_ptr(),
            sb.row as isize,
            sb.col as isize,
            beta,
            c.as_mut_ptr(),
            sc.row as isize,
            sc.col as isize,
        );
    }
}
