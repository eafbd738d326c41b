//! Dense row-major f64 matrices and the three matmul kernels the MLP needs.
//!
//! This is deliberately not a general linear-algebra layer: batches of
//! samples, parameters, and gradients are all `Matrix2D`, and the only
//! products required are `A·Bᵀ` (forward), `A·B` (input gradient), and
//! `Aᵀ·B` (weight gradient). The kernels use fixed-order accumulators so
//! results are bit-reproducible while still vectorizing.

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] = x[0].mul_add(y[0], acc[0]);
        acc[1] = x[1].mul_add(y[1], acc[1]);
        acc[2] = x[2].mul_add(y[2], acc[2]);
        acc[3] = x[3].mul_add(y[3], acc[3]);
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s = x.mul_add(*y, s);
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = a.mul_add(*xi, *yi);
    }
}

impl Matrix2D {
    /// All-zeros matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix2D { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Takes ownership of `data` laid out row-major.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Matrix2D { rows, cols, data }
    }

    /// Builds an `n x 2` matrix from 2-D points.
    pub fn from_points(points: &[[f64; 2]]) -> Self {
        let mut data = Vec::with_capacity(points.len() * 2);
        for p in points {
            data.extend_from_slice(p);
        }
        Matrix2D { rows: points.len(), cols: 2, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix2D::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// A 2-D point view of a row; panics unless `cols == 2`.
    #[inline]
    pub fn point(&self, r: usize) -> [f64; 2] {
        assert_eq!(self.cols, 2, "point() requires 2 columns, matrix has {}", self.cols);
        [self.data[r * 2], self.data[r * 2 + 1]]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// `self (n x k) · otherᵀ (k x m)` where `other` is `m x k`.
    pub fn matmul_nt(&self, other: &Matrix2D) -> Matrix2D {
        assert_eq!(
            self.cols, other.cols,
            "matmul_nt: inner dims differ ({}x{} vs {}x{})",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix2D::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            let orow = out.row_mut(i);
            for (j, oj) in orow.iter_mut().enumerate() {
                *oj = dot(a, other.row(j));
            }
        }
        out
    }

    /// `self (n x k) · other (k x m)`.
    pub fn matmul_nn(&self, other: &Matrix2D) -> Matrix2D {
        assert_eq!(
            self.cols, other.rows,
            "matmul_nn: inner dims differ ({}x{} vs {}x{})",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix2D::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a.iter().enumerate() {
                axpy(orow, aik, other.row(k));
            }
        }
        out
    }

    /// `selfᵀ (k x n) · other (n x m)` where `self` is `n x k`.
    pub fn matmul_tn(&self, other: &Matrix2D) -> Matrix2D {
        assert_eq!(
            self.rows, other.rows,
            "matmul_tn: row counts differ ({}x{} vs {}x{})",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix2D::zeros(self.cols, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let b = other.row(i);
            for (k, &aik) in a.iter().enumerate() {
                let orow = &mut out.data[k * other.cols..(k + 1) * other.cols];
                axpy(orow, aik, b);
            }
        }
        out
    }

    /// Adds `bias` to every row; panics on length mismatch.
    pub fn add_row_broadcast(&mut self, bias: &[f64]) {
        assert_eq!(
            bias.len(),
            self.cols,
            "bias length {} does not match {} columns",
            bias.len(),
            self.cols
        );
        for r in 0..self.rows {
            for (v, b) in self.data[r * self.cols..(r + 1) * self.cols].iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    /// Column sums, used for bias gradients.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix2D) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "add_assign: shape mismatch ({}x{} vs {}x{})",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Sum of elementwise products, i.e. the Frobenius inner product.
    pub fn inner(&self, other: &Matrix2D) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "inner: shape mismatch ({}x{} vs {}x{})",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
        dot(&self.data, &other.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
