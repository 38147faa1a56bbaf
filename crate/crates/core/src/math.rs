//! Dense numeric kernels: matrix multiply, row softmax, 1-D pooling.
//!
//! Values are stored as 32-bit floats in row-major order and every kernel
//! iterates in a fixed row-major order, so outputs are bit-reproducible on
//! a given platform regardless of thread count.

use crate::error::{Error, Result};
use crate::exec;

/// Row-major dense matrix of f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a row-major data vector. Length must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::parameter(
                "data",
                format!("expected {} values for {rows}x{cols}, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    /// Build from per-row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::parameter(
                    "rows",
                    format!("row {i} has {} entries, expected {ncols}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols: ncols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f32) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Append one row; the matrix must have matching column count.
    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::parameter(
                "row",
                format!("expected {} entries, got {}", self.cols, row.len()),
            ));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Standard matrix product. Accumulates each output entry in f32 with a
    /// fixed inner-loop order; rows are independent so they may be computed
    /// in parallel without changing any bit of the result.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                left: (self.rows, self.cols),
                right: (other.rows, other.cols),
                op: "matmul",
            });
        }
        let (n, k, p) = (self.rows, self.cols, other.cols);
        let out_rows = exec::map_indexed_grained(n, n * k * p, |i| {
            let a_row = self.row(i);
            let mut out = vec![0.0f32; p];
            for (l, &a) in a_row.iter().enumerate() {
                let b_row = other.row(l);
                for (o, &b) in out.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
            out
        });
        let mut data = Vec::with_capacity(n * p);
        for row in out_rows {
            data.extend_from_slice(&row);
        }
        Ok(Matrix {
            rows: n,
            cols: p,
            data,
        })
    }

    /// Numerically stable softmax applied to each row independently.
    pub fn softmax_rows(&self) -> Matrix {
        let mut out = self.clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        out
    }
}

/// In-place stable softmax over a slice: subtract the max, exponentiate,
/// normalize by an f64-accumulated sum. Shared by prefill and decode so the
/// two paths produce identical bits for identical supports.
pub(crate) fn softmax_in_place(row: &mut [f32]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0f64;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += f64::from(*x);
    }
    let inv = (1.0 / sum) as f32;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

/// Dot product with fixed left-to-right f32 accumulation.
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}

/// Pooling mode for [`pool_1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

impl PoolMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Avg => "avg",
            Self::Max => "max",
        }
    }
}

/// Same-length 1-D pooling with truncated edge windows.
///
/// The window for index `i` is `[i - kernel/2, i + kernel/2]` clipped to the
/// vector bounds; `Avg` divides by the actual window length, so constant
/// vectors are fixed points and `kernel == 1` is the identity.
pub fn pool_1d(scores: &[f64], kernel: usize, mode: PoolMode) -> Result<Vec<f64>> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::parameter(
            "kernel",
            format!("must be odd and nonzero, got {kernel}"),
        ));
    }
    if kernel > scores.len() {
        return Err(Error::parameter(
            "kernel",
            format!("{kernel} exceeds vector length {}", scores.len()),
        ));
    }
    let half = kernel / 2;
    let n = scores.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let window = &scores[lo..=hi];
        let v = match mode {
            PoolMode::Avg => window.iter().sum::<f64>() / window.len() as f64,
            PoolMode::Max => window.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
        };
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random_matrix(rng: &mut SplitMix64, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.next_symmetric_f32()).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_identity_preserves_operand() {
        let m = Matrix::from_rows(&[vec![3.0, -1.5], vec![0.25, 7.0]]).unwrap();
        let id = Matrix::identity(2);
        assert_eq!(id.matmul(&m).unwrap(), m);
        assert_eq!(m.matmul(&id).unwrap(), m);
    }

    #[test]
    fn matmul_hand_oracle() {
        // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]] by hand.
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_zero_row_times_column() {
        let a = Matrix::zeros(1, 3);
        let b = Matrix::from_vec(3, 1, vec![4.0, -2.0, 9.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!((c.rows(), c.cols()), (1, 1));
        assert_eq!(c.get(0, 0), 0.0);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("2x2"), "got: {msg}");
    }

    #[test]
    fn matmul_associative_on_random_triples() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..50 {
            let a = random_matrix(&mut rng, 4, 4);
            let b = random_matrix(&mut rng, 4, 4);
            let c = random_matrix(&mut rng, 4, 4);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                assert!((x - y).abs() < 1e-4, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn softmax_uniform_row() {
        let m = Matrix::from_vec(1, 4, vec![0.0; 4]).unwrap();
        let s = m.softmax_rows();
        for &x in s.data() {
            assert!((x - 0.25).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_extreme_values_do_not_overflow() {
        let m = Matrix::from_vec(1, 2, vec![1000.0, 0.0]).unwrap();
        let s = m.softmax_rows();
        assert!(s.is_finite());
        assert!((s.get(0, 0) - 1.0).abs() < 1e-6);
        assert!(s.get(0, 1) < 1e-6);
    }

    #[test]
    fn softmax_closed_form_log_inputs() {
        // softmax(ln 1, ln 2, ln 3) = (1/6, 2/6, 3/6).
        let m = Matrix::from_vec(1, 3, vec![1.0f32.ln(), 2.0f32.ln(), 3.0f32.ln()]).unwrap();
        let s = m.softmax_rows();
        let expect = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        for (x, e) in s.data().iter().zip(expect) {
            assert!((x - e).abs() < 1e-6, "{x} vs {e}");
        }
    }

    #[test]
    fn softmax_is_monotone_within_row() {
        let m = Matrix::from_vec(1, 4, vec![-2.0, 0.5, 0.4, 3.0]).unwrap();
        let s = m.softmax_rows();
        assert!(s.get(0, 3) > s.get(0, 1));
        assert!(s.get(0, 1) > s.get(0, 2));
        assert!(s.get(0, 2) > s.get(0, 0));
    }

    #[test]
    fn softmax_rows_sum_to_one_on_random_matrices() {
        let mut rng = SplitMix64::new(99);
        for _ in 0..1000 {
            let rows = 1 + rng.next_below(6);
            let cols = 1 + rng.next_below(16);
            let m = random_matrix(&mut rng, rows, cols);
            let s = m.softmax_rows();
            for r in 0..rows {
                let sum: f64 = s.row(r).iter().map(|&x| f64::from(x)).sum();
                assert!((sum - 1.0).abs() < 1e-5, "row sum {sum}");
            }
        }
    }

    #[test]
    fn pool_kernel_one_is_identity() {
        let v = vec![3.0, -1.0, 0.5, 2.0];
        assert_eq!(pool_1d(&v, 1, PoolMode::Avg).unwrap(), v);
        assert_eq!(pool_1d(&v, 1, PoolMode::Max).unwrap(), v);
    }

    #[test]
    fn pool_avg_hand_oracle() {
        // Windows truncated at the edges: [0,3] [0,3,0] [3,0,3] [0,3,0] [3,0].
        let v = vec![0.0, 3.0, 0.0, 3.0, 0.0];
        let out = pool_1d(&v, 3, PoolMode::Avg).unwrap();
        assert_eq!(out, vec![1.5, 1.0, 2.0, 1.0, 1.5]);
    }

    #[test]
    fn pool_max_hand_oracle() {
        let out = pool_1d(&[1.0, 5.0, 2.0], 3, PoolMode::Max).unwrap();
        assert_eq!(out, vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn pool_rejects_even_or_zero_kernel() {
        assert!(pool_1d(&[1.0, 2.0], 2, PoolMode::Avg).is_err());
        assert!(pool_1d(&[1.0, 2.0], 0, PoolMode::Avg).is_err());
    }

    #[test]
    fn pool_rejects_kernel_longer_than_input() {
        assert!(pool_1d(&[1.0, 2.0], 3, PoolMode::Max).is_err());
    }

    #[test]
    fn pool_avg_kernel_one_preserves_mean_exactly() {
        let v = vec![1.0, 2.0, 3.0, 4.0];
        let out = pool_1d(&v, 1, PoolMode::Avg).unwrap();
        let mean_in: f64 = v.iter().sum::<f64>() / v.len() as f64;
        let mean_out: f64 = out.iter().sum::<f64>() / out.len() as f64;
        assert_eq!(mean_in, mean_out);
    }

    proptest! {
        #[test]
        fn prop_softmax_rows_are_distributions(
            rows in 1usize..6, cols in 1usize..12, seed in any::<u64>()
        ) {
            let mut rng = SplitMix64::new(seed);
            let m = random_matrix(&mut rng, rows, cols);
            let s = m.softmax_rows();
            prop_assert!(s.is_finite());
            for r in 0..rows {
                let sum: f64 = s.row(r).iter().map(|&x| f64::from(x)).sum();
                prop_assert!((sum - 1.0).abs() < 1e-5);
            }
        }

        #[test]
        fn prop_pool_constant_vector_is_fixed_point(
            len in 1usize..32, value in -100.0f64..100.0, half in 0usize..4
        ) {
            let kernel = 2 * half + 1;
            prop_assume!(kernel <= len);
            let v = vec![value; len];
            let out = pool_1d(&v, kernel, PoolMode::Avg).unwrap();
            for x in out {
                prop_assert!((x - value).abs() < 1e-9);
            }
        }
    }
}
