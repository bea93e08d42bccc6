//! Dense row-major matrices and the handful of products the model needs.
//!
//! Every output element is accumulated in the same order regardless of how
//! many rows take part in a product, so a batch of sessions scored together
//! yields bit-identical values to the same sessions scored one by one.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar used by the model (`f32` for training, `f64` for checks).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Width in bytes, used by the model file format.
    const BITS: u32;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

impl Real for f32 {
    const BITS: u32 = 32;
}

impl Real for f64 {
    const BITS: u32 = 64;
}

#[derive(Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F> Debug for Matrix<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)
    }
}

impl<F: Real> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Copies the listed rows into a new matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> Matrix<F> {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }

    /// Writes row `k` of `src` into row `idx[k]` of `self`.
    pub fn scatter_rows(&mut self, idx: &[usize], src: &Matrix<F>) {
        assert_eq!(idx.len(), src.rows);
        for (k, &i) in idx.iter().enumerate() {
            self.row_mut(i).copy_from_slice(src.row(k));
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<G: Real>(&self) -> Matrix<G> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| G::from_f64_lossy(v.to_f64().unwrap()))
                .collect(),
        }
    }
}

/// Dot product with a fixed 4-lane accumulation order.
#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let mut acc = [F::zero(); 4];
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = F::zero();
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `A · B` where `B` is `k × n`.
pub fn matmul<F: Real>(a: &Matrix<F>, b: &Matrix<F>) -> Matrix<F> {
    assert_eq!(a.cols, b.rows, "matmul inner dimensions");
    let mut out = Matrix::zeros(a.rows, b.cols);
    matmul_acc(a, b, &mut out);
    out
}

/// `out += A · B`
pub fn matmul_acc<F: Real>(a: &Matrix<F>, b: &Matrix<F>, out: &mut Matrix<F>) {
    assert_eq!(a.cols, b.rows);
    assert_eq!(out.shape(), (a.rows, b.cols));
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik != F::zero() {
                axpy(aik, b.row(k), orow);
            }
        }
    }
}

/// `A · Bᵀ` where `B` is `n × k`; each element is one contiguous dot product.
pub fn matmul_nt<F: Real>(a: &Matrix<F>, b: &Matrix<F>) -> Matrix<F> {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dimensions");
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            *o = dot(ar, b.row(j));
        }
    }
    out
}

/// `A · B[rows]ᵀ` without materialising the gathered rows.
pub fn matmul_nt_rows<F: Real>(a: &Matrix<F>, b: &Matrix<F>, rows: &[usize]) -> Matrix<F> {
    assert_eq!(a.cols, b.cols);
    let mut out = Matrix::zeros(a.rows, rows.len());
    for i in 0..a.rows {
        let ar = a.row(i);
        let orow = out.row_mut(i);
        for (o, &j) in orow.iter_mut().zip(rows) {
            *o = dot(ar, b.row(j));
        }
    }
    out
}

/// `out += Aᵀ · B` where `A` is `m × p`, `B` is `m × q`, `out` is `p × q`.
pub fn matmul_tn_acc<F: Real>(a: &Matrix<F>, b: &Matrix<F>, out: &mut Matrix<F>) {
    assert_eq!(a.rows, b.rows);
    assert_eq!(out.shape(), (a.cols, b.cols));
    for m in 0..a.rows {
        let brow = b.row(m);
        for (p, &apm) in a.row(m).iter().enumerate() {
            if apm != F::zero() {
                axpy(apm, brow, out.row_mut(p));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    fn transpose(m: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(m.cols(), m.rows(), |i, j| m.get(j, i))
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut s = seed;
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
    }

    #[test]
    fn products_agree_with_naive() {
        let a = sample(5, 7, 1);
        let b = sample(7, 3, 2);
        let c = sample(4, 7, 3);
        let close = |x: &Matrix<f64>, y: &Matrix<f64>| {
            x.as_slice()
                .iter()
                .zip(y.as_slice())
                .all(|(p, q)| (p - q).abs() < 1e-12)
        };
        assert!(close(&matmul(&a, &b), &naive(&a, &b)));
        assert!(close(&matmul_nt(&a, &c), &naive(&a, &transpose(&c))));
        let mut out = Matrix::zeros(7, 7);
        matmul_tn_acc(&a, &a, &mut out);
        assert!(close(&out, &naive(&transpose(&a), &a)));
        let sel = matmul_nt_rows(&a, &c, &[3, 0, 3]);
        let full = matmul_nt(&a, &c);
        for i in 0..5 {
            assert_eq!(sel.get(i, 0), full.get(i, 3));
            assert_eq!(sel.get(i, 1), full.get(i, 0));
            assert_eq!(sel.get(i, 2), full.get(i, 3));
        }
    }

    #[test]
    fn row_results_do_not_depend_on_batch() {
        let a = sample(9, 13, 4);
        let b = sample(6, 13, 5);
        let full = matmul_nt(&a, &b);
        for i in 0..9 {
            let single = matmul_nt(&a.gather_rows(&[i]), &b);
            assert_eq!(single.row(0), full.row(i));
        }
    }

    #[test]
    fn gather_scatter() {
        let a = sample(4, 2, 6);
        let g = a.gather_rows(&[2, 0]);
        let mut z = Matrix::zeros(4, 2);
        z.scatter_rows(&[2, 0], &g);
        assert_eq!(z.row(2), a.row(2));
        assert_eq!(z.row(0), a.row(0));
        assert_eq!(z.row(1), &[0.0, 0.0]);
    }
}
