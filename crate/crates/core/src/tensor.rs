//! Minimal dense tensor arithmetic for the pipeline: matmul against a
//! transposed weight, axis reductions, diagonal column scaling, and
//! comparison metrics.
//!
//! Everything is row-major `f64`. Accumulation is double precision with a
//! fixed sequential reduction order so results are reproducible across
//! platforms and thread counts; matmul may split across rows because each
//! output element is still reduced in the same order.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense row-major tensor with shape metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Result of [`compare`]: elementwise and directional agreement metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareMetrics {
    pub mse: f64,
    pub max_abs_err: f64,
    pub cosine: f64,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// 2-D constructor.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// 1-D constructor (used for biases and per-channel vectors).
    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interpret as a 2-D matrix, returning `(rows, cols)`.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Shape(format!("expected 2-D tensor, got {other:?}"))),
        }
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = self.dims2().expect("row() requires a 2-D tensor");
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        let cols = self.shape[1];
        self.data[r * cols + c]
    }

    /// Elementwise map preserving shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

/// `y = x W^T + b` with `x: [n, k]`, `w: [o, k]`, optional `bias: [o]`.
///
/// Each `y[j][q]` is a sequential dot product over `k`; rows may be computed
/// in parallel without changing any bit of the result.
pub fn matmul_bt(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, k) = x.dims2()?;
    let (o, kw) = w.dims2()?;
    if k != kw {
        return Err(Error::Shape(format!(
            "matmul_bt: inner dims disagree ({k} vs {kw})"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [o] {
            return Err(Error::Shape(format!(
                "matmul_bt: bias shape {:?}, expected [{o}]",
                b.shape()
            )));
        }
    }

    let mut out = vec![0.0f64; n * o];
    let body = |(j, out_row): (usize, &mut [f64])| {
        let x_row = &x.data[j * k..(j + 1) * k];
        for q in 0..o {
            let w_row = &w.data[q * k..(q + 1) * k];
            let mut acc = 0.0f64;
            for i in 0..k {
                acc += x_row[i] * w_row[i];
            }
            if let Some(b) = bias {
                acc += b.data[q];
            }
            out_row[q] = acc;
        }
    };
    if n * o * k >= 32_768 {
        out.par_chunks_mut(o).enumerate().for_each(body);
    } else {
        out.chunks_mut(o).enumerate().for_each(body);
    }
    Tensor::from_rows(n, o, out)
}

/// Multiply (or divide, when `invert`) column `i` of `t` by `m[i]`.
pub fn scale_columns(t: &Tensor, m: &[f64], invert: bool) -> Result<Tensor> {
    let (n, k) = t.dims2()?;
    if m.len() != k {
        return Err(Error::Mask(format!(
            "scale_columns: {} mask entries for {k} columns",
            m.len()
        )));
    }
    if let Some(bad) = m.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Mask(format!(
            "scale_columns: non-positive mask entry {bad}"
        )));
    }
    let mut data = Vec::with_capacity(n * k);
    for j in 0..n {
        for i in 0..k {
            let v = t.data[j * k + i];
            data.push(if invert { v / m[i] } else { v * m[i] });
        }
    }
    Tensor::from_rows(n, k, data)
}

/// Per-slice maximum of `|.|` along the complementary axis of a 2-D tensor.
///
/// `axis` names the axis that indexes the result: `0` gives one value per
/// row, `1` one value per column.
pub fn abs_max_over_axis(t: &Tensor, axis: usize) -> Result<Vec<f64>> {
    let (n, k) = t.dims2()?;
    if t.is_empty() {
        return Err(Error::Input("abs_max_over_axis: empty tensor".into()));
    }
    match axis {
        0 => Ok((0..n)
            .map(|j| t.row(j).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect()),
        1 => {
            let mut out = vec![0.0f64; k];
            for j in 0..n {
                for i in 0..k {
                    let a = t.data[j * k + i].abs();
                    if a > out[i] {
                        out[i] = a;
                    }
                }
            }
            Ok(out)
        }
        other => Err(Error::Shape(format!(
            "abs_max_over_axis: axis {other} out of range for 2-D tensor"
        ))),
    }
}

/// MSE, max absolute error, and cosine similarity between equal-shape tensors.
///
/// Cosine is defined as 1 when both tensors are exactly zero.
pub fn compare(a: &Tensor, b: &Tensor) -> Result<CompareMetrics> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!(
            "compare: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let n = a.data.len();
    let mut sq_err = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let d = x - y;
        sq_err += d * d;
        if d.abs() > max_abs {
            max_abs = d.abs();
        }
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    // Zero squared error means bit-identical tensors (including the
    // all-zero pair), where cosine is 1 by definition.
    let denom = na.sqrt() * nb.sqrt();
    let cosine = if sq_err == 0.0 {
        1.0
    } else if denom == 0.0 {
        0.0
    } else {
        dot / denom
    };
    Ok(CompareMetrics {
        mse: if n == 0 { 0.0 } else { sq_err / n as f64 },
        max_abs_err: max_abs,
        cosine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_rows(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = t2(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y = matmul_bt(&eye, &eye, None).unwrap();
        assert_eq!(y, eye);
    }

    #[test]
    fn matmul_with_bias() {
        // [[1,2]] * [[3,4]]^T + [5] = [[1*3 + 2*4 + 5]] = [[16]]
        let x = t2(1, 2, &[1.0, 2.0]);
        let w = t2(1, 2, &[3.0, 4.0]);
        let b = Tensor::from_vec(vec![5.0]);
        let y = matmul_bt(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[16.0]);
    }

    #[test]
    fn matmul_zero_weight_gives_bias_rows() {
        let x = t2(3, 2, &[1.0, -2.0, 0.5, 4.0, 9.0, -1.0]);
        let w = Tensor::zeros(vec![2, 2]);
        let b = Tensor::from_vec(vec![7.0, -3.0]);
        let y = matmul_bt(&x, &w, Some(&b)).unwrap();
        for j in 0..3 {
            assert_eq!(y.row(j), &[7.0, -3.0]);
        }
    }

    #[test]
    fn matmul_dim_mismatch() {
        let x = t2(1, 3, &[1.0, 2.0, 3.0]);
        let w = t2(1, 2, &[1.0, 2.0]);
        assert!(matches!(matmul_bt(&x, &w, None), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_parallel_matches_sequential() {
        // Cross the parallel threshold and check against a plain triple loop.
        let n = 40;
        let k = 33;
        let o = 31;
        let x = t2(
            n,
            k,
            &(0..n * k)
                .map(|i| ((i * 2654435761) % 1000) as f64 / 97.0 - 5.0)
                .collect::<Vec<_>>(),
        );
        let w = t2(
            o,
            k,
            &(0..o * k)
                .map(|i| ((i * 40503) % 777) as f64 / 31.0 - 12.0)
                .collect::<Vec<_>>(),
        );
        let y = matmul_bt(&x, &w, None).unwrap();
        for j in 0..n {
            for q in 0..o {
                let mut acc = 0.0;
                for i in 0..k {
                    acc += x.get2(j, i) * w.get2(q, i);
                }
                assert_eq!(y.get2(j, q), acc);
            }
        }
    }

    #[test]
    fn scale_columns_unit_mask_is_identity() {
        let x = t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = scale_columns(&x, &[1.0, 1.0, 1.0], false).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn scale_columns_example() {
        let x = t2(1, 2, &[2.0, 3.0]);
        let y = scale_columns(&x, &[2.0, 3.0], false).unwrap();
        assert_eq!(y.data(), &[4.0, 9.0]);
    }

    #[test]
    fn scale_then_inverse_scale_round_trips() {
        let x = t2(2, 2, &[1.5, -2.25, 0.125, 9.0]);
        let m = [3.7, 0.002];
        let y = scale_columns(&scale_columns(&x, &m, false).unwrap(), &m, true).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn scale_columns_rejects_non_positive_mask() {
        let x = t2(1, 2, &[1.0, 2.0]);
        assert!(matches!(
            scale_columns(&x, &[1.0, 0.0], false),
            Err(Error::Mask(_))
        ));
        assert!(matches!(
            scale_columns(&x, &[-1.0, 2.0], false),
            Err(Error::Mask(_))
        ));
    }

    #[test]
    fn abs_max_columns_example() {
        let t = t2(2, 2, &[1.0, -5.0, 3.0, 2.0]);
        assert_eq!(abs_max_over_axis(&t, 1).unwrap(), vec![3.0, 5.0]);
    }

    #[test]
    fn abs_max_rows_single_row_is_abs() {
        let t = t2(1, 3, &[-1.0, 2.0, -7.5]);
        assert_eq!(abs_max_over_axis(&t, 1).unwrap(), vec![1.0, 2.0, 7.5]);
    }

    #[test]
    fn abs_max_all_zeros() {
        let t = Tensor::zeros(vec![3, 2]);
        assert_eq!(abs_max_over_axis(&t, 1).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn abs_max_permutation_invariant_over_rows() {
        let t = t2(3, 2, &[1.0, -5.0, 3.0, 2.0, -4.0, 0.5]);
        let p = t2(3, 2, &[-4.0, 0.5, 1.0, -5.0, 3.0, 2.0]);
        assert_eq!(
            abs_max_over_axis(&t, 1).unwrap(),
            abs_max_over_axis(&p, 1).unwrap()
        );
    }

    #[test]
    fn compare_identical() {
        let a = t2(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let m = compare(&a, &a).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.max_abs_err, 0.0);
        assert_eq!(m.cosine, 1.0);
    }

    #[test]
    fn compare_orthogonal() {
        let a = Tensor::from_rows(1, 2, vec![1.0, 0.0]).unwrap();
        let b = Tensor::from_rows(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(compare(&a, &b).unwrap().cosine, 0.0);
    }

    #[test]
    fn compare_simple_arithmetic() {
        let a = Tensor::from_vec(vec![2.0]);
        let b = Tensor::from_vec(vec![1.0]);
        let m = compare(&a, &b).unwrap();
        assert_eq!(m.mse, 1.0);
        assert_eq!(m.max_abs_err, 1.0);
    }

    #[test]
    fn compare_zero_tensors_cosine_one() {
        let a = Tensor::zeros(vec![4]);
        assert_eq!(compare(&a, &a).unwrap().cosine, 1.0);
    }

    #[test]
    fn compare_shape_mismatch() {
        let a = Tensor::zeros(vec![2]);
        let b = Tensor::zeros(vec![3]);
        assert!(matches!(compare(&a, &b), Err(Error::Shape(_))));
    }
}
