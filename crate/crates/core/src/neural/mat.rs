//! Row-major `f64` matrices and the few GEMM shapes the networks need.

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Add `bias` to every row.
    pub fn add_row_vec(&mut self, bias: &[f64]) {
        debug_assert_eq!(bias.len(), self.cols);
        for r in self.data.chunks_exact_mut(self.cols) {
            r.iter_mut().zip(bias).for_each(|(x, b)| *x += b);
        }
    }

    /// Accumulate column sums into `out`.
    pub fn col_sums_into(&self, out: &mut [f64]) {
        for r in self.data.chunks_exact(self.cols) {
            out.iter_mut().zip(r).for_each(|(o, x)| *o += x);
        }
    }
}

/// Raw GEMM: `C = alpha * A·B + beta * C` over strided views.
///
/// # Safety contract
/// Slices must cover the strided extents; checked by the callers below.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    // SAFETY: callers pass slices with exactly m*k, k*n and m*n elements laid
    // out with the given strides.
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

/// `A[m×k] · B[k×n]`, with `B` given as a flat row-major slice.
pub fn matmul(a: &Mat, b: &[f64], n: usize) -> Mat {
    let k = a.cols;
    assert_eq!(b.len(), k * n);
    let mut c = Mat::zeros(a.rows, n);
    gemm(a.rows, k, n, &a.data, k as isize, 1, b, n as isize, 1, &mut c.data, 0.0);
    c
}

/// `out += Aᵀ · B` where `A` is `[r×m]`, `B` is `[r×n]`; `out` is `[m×n]`.
pub fn matmul_tn_acc(a: &Mat, b: &Mat, out: &mut [f64]) {
    assert_eq!(a.rows, b.rows);
    assert_eq!(out.len(), a.cols * b.cols);
    gemm(
        a.cols,
        a.rows,
        b.cols,
        &a.data,
        1,
        a.cols as isize,
        &b.data,
        b.cols as isize,
        1,
        out,
        1.0,
    );
}

/// `A[m×k] · Bᵀ` where `B` is a flat row-major `[n×k]` slice.
pub fn matmul_nt(a: &Mat, b: &[f64], n: usize) -> Mat {
    let k = a.cols;
    assert_eq!(b.len(), n * k);
    let mut c = Mat::zeros(a.rows, n);
    gemm(a.rows, k, n, &a.data, k as isize, 1, b, 1, k as isize, &mut c.data, 0.0);
    c
}
