//! Dense kernels shared by every solver.
//!
//! Matrices are stored column-major so that extracting the columns of a
//! working set is a sequence of contiguous copies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    /// Builds a matrix from column-major data.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        ensure_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: &[T]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        let mut col_major = vec![T::zero(); rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                col_major[j * rows + i] = data[i * cols + j];
            }
        }
        Self::from_col_major(rows, cols, col_major)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
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

    /// Column-major backing storage.
    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[T] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn to_row_major(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Submatrix made of the listed columns, in the order given.
    pub fn extract_columns(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            if j >= self.cols {
                return Err(Error::invalid(format!(
                    "column index {j} out of range for {} columns",
                    self.cols
                )));
            }
            data.extend_from_slice(self.column(j));
        }
        Ok(Self {
            rows: self.rows,
            cols: idx.len(),
            data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&v| U::lit(v.to_f64_lossy()))
                .collect(),
        }
    }
}

pub(crate) fn ensure_finite<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::invalid(format!("{what} has a non-finite entry at {i}"))),
        None => Ok(()),
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm2<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

#[inline]
pub fn norm1<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x.abs())
}

#[inline]
pub fn norm_inf<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// Indices of the nonzero entries, ascending.
pub fn support<T: Scalar>(x: &[T]) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| !v.is_zero())
        .map(|(i, _)| i)
        .collect()
}

/// Scatters `values` into a zero vector of length `n` at positions `idx`.
pub fn embed<T: Scalar>(n: usize, idx: &[usize], values: &[T]) -> Result<Vec<T>> {
    if idx.len() != values.len() {
        return Err(Error::dim(format!(
            "{} indices for {} values",
            idx.len(),
            values.len()
        )));
    }
    let mut out = vec![T::zero(); n];
    for (&i, &v) in idx.iter().zip(values) {
        if i >= n {
            return Err(Error::invalid(format!("index {i} out of range for length {n}")));
        }
        out[i] = v;
    }
    Ok(out)
}

/// Gathers `x[idx]`.
pub fn restrict<T: Scalar>(x: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| x[i]).collect()
}

/// `A x`.
pub fn matvec<T: Scalar>(a: &DenseMatrix<T>, x: &[T]) -> Result<Vec<T>> {
    if x.len() != a.cols {
        return Err(Error::dim(format!(
            "vector of length {} against {} columns",
            x.len(),
            a.cols
        )));
    }
    let mut out = vec![T::zero(); a.rows];
    for (j, &xj) in x.iter().enumerate() {
        if xj.is_zero() {
            continue;
        }
        axpy(xj, a.column(j), &mut out);
    }
    Ok(out)
}

/// `Aᵗ y`.
pub fn matvec_transpose<T: Scalar>(a: &DenseMatrix<T>, y: &[T]) -> Result<Vec<T>> {
    if y.len() != a.rows {
        return Err(Error::dim(format!(
            "vector of length {} against {} rows",
            y.len(),
            a.rows
        )));
    }
    Ok((0..a.cols).map(|j| dot(a.column(j), y)).collect())
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `A x` touching only the columns listed in `supp`.
pub fn matvec_on_support<T: Scalar>(
    a: &DenseMatrix<T>,
    x: &[T],
    supp: &[usize],
) -> Result<Vec<T>> {
    if x.len() != a.cols {
        return Err(Error::dim(format!(
            "vector of length {} against {} columns",
            x.len(),
            a.cols
        )));
    }
    let mut ax = vec![T::zero(); a.rows];
    for &j in supp {
        if j >= a.cols {
            return Err(Error::invalid(format!(
                "support index {j} out of range for {} columns",
                a.cols
            )));
        }
        axpy(x[j], a.column(j), &mut ax);
    }
    Ok(ax)
}

/// `∇f(x) = Aᵗ(Ax) − Aᵗb` with `Ax` assembled from the `supp` columns only
/// and `Aᵗb` precomputed by the caller.
///
/// Costs `O(k·|supp| + k·n)`. Indices in `supp` where `x` is zero are
/// harmless.
pub fn gradient<T: Scalar>(
    a: &DenseMatrix<T>,
    atb: &[T],
    x: &[T],
    supp: &[usize],
) -> Result<Vec<T>> {
    if atb.len() != a.cols {
        return Err(Error::dim(format!(
            "Aᵗb of length {} against {} columns",
            atb.len(),
            a.cols
        )));
    }
    let ax = matvec_on_support(a, x, supp)?;
    let mut g = matvec_transpose(a, &ax)?;
    for (gi, &c) in g.iter_mut().zip(atb) {
        *gi -= c;
    }
    Ok(g)
}

/// `F(x) = ½‖Ax − b‖² + η‖x‖₁`.
pub fn objective<T: Scalar>(a: &DenseMatrix<T>, b: &[T], eta: T, x: &[T]) -> Result<T> {
    if b.len() != a.rows {
        return Err(Error::dim(format!(
            "observation of length {} against {} rows",
            b.len(),
            a.rows
        )));
    }
    let mut r = matvec(a, x)?;
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri -= bi;
    }
    Ok(T::lit(0.5) * dot(&r, &r) + eta * norm1(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix<f64> {
        let mut rng = SplitMix64::new(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.next_normal()).collect();
        DenseMatrix::from_col_major(rows, cols, data).unwrap()
    }

    #[test]
    fn matvec_scalar_and_identity() {
        let a = DenseMatrix::from_col_major(1, 1, vec![2.0]).unwrap();
        assert_eq!(matvec(&a, &[3.0]).unwrap(), vec![6.0]);
        let id = DenseMatrix::<f64>::identity(2);
        assert_eq!(matvec(&id, &[1.0, -4.0]).unwrap(), vec![1.0, -4.0]);
    }

    #[test]
    fn matvec_matches_naive_triple_loop() {
        let a = random_matrix(5, 7, 11);
        let mut rng = SplitMix64::new(12);
        let x: Vec<f64> = (0..7).map(|_| rng.next_normal()).collect();
        let got = matvec(&a, &x).unwrap();
        let rm = a.to_row_major();
        for i in 0..5 {
            let mut acc = 0.0;
            for j in 0..7 {
                acc += rm[i * 7 + j] * x[j];
            }
            assert!((got[i] - acc).abs() <= 1e-12);
        }
    }

    #[test]
    fn matvec_rejects_dimension_mismatch() {
        let a = random_matrix(3, 4, 1);
        assert!(matches!(matvec(&a, &[1.0; 3]), Err(Error::Dimension(_))));
        assert!(matches!(
            matvec_transpose(&a, &[1.0; 4]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn gradient_at_zero_is_minus_atb() {
        let a = random_matrix(4, 9, 3);
        let b = vec![0.5, -1.0, 2.0, 0.25];
        let atb = matvec_transpose(&a, &b).unwrap();
        let g = gradient(&a, &atb, &[0.0; 9], &[]).unwrap();
        for (gi, ci) in g.iter().zip(&atb) {
            assert_eq!(*gi, -ci);
        }
    }

    #[test]
    fn gradient_one_dimensional() {
        let a = DenseMatrix::from_col_major(1, 1, vec![1.0]).unwrap();
        let g = gradient(&a, &[2.0], &[1.0], &[0]).unwrap();
        assert_eq!(g, vec![-1.0]);
    }

    #[test]
    fn gradient_rejects_out_of_range_support() {
        let a = random_matrix(2, 3, 5);
        let err = gradient(&a, &[0.0; 3], &[0.0; 3], &[3]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn gradient_with_superfluous_support_entries() {
        let a = random_matrix(6, 10, 8);
        let b: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let atb = matvec_transpose(&a, &b).unwrap();
        let mut x = vec![0.0; 10];
        x[2] = 0.7;
        x[5] = -1.1;
        let tight = gradient(&a, &atb, &x, &[2, 5]).unwrap();
        let loose = gradient(&a, &atb, &x, &[0, 1, 2, 5, 9]).unwrap();
        assert_eq!(tight, loose);
    }

    #[test]
    fn objective_closed_forms() {
        let a = DenseMatrix::from_col_major(1, 1, vec![1.0]).unwrap();
        assert_eq!(objective(&a, &[2.0], 1.0, &[1.0]).unwrap(), 1.5);
        let a = random_matrix(3, 5, 2);
        let b = [1.0, -2.0, 0.5];
        let f0 = objective(&a, &b, 0.3, &[0.0; 5]).unwrap();
        assert_eq!(f0, 0.5 * (1.0 + 4.0 + 0.25));
    }

    #[test]
    fn column_extraction_is_bit_exact() {
        let a = random_matrix(4, 6, 21);
        let w = [5, 0, 3];
        let sub = a.extract_columns(&w).unwrap();
        for (c, &j) in w.iter().enumerate() {
            assert_eq!(sub.column(c), a.column(j));
        }
        assert!(a.extract_columns(&[6]).is_err());
    }

    #[test]
    fn row_major_round_trip() {
        let a = random_matrix(3, 4, 9);
        let rm = a.to_row_major();
        let back = DenseMatrix::from_row_major(3, 4, &rm).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn rejects_non_finite_entries() {
        assert!(DenseMatrix::from_col_major(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::from_col_major(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let a = DenseMatrix::<f32>::from_col_major(1, 1, vec![1.0]).unwrap();
        assert_eq!(objective(&a, &[2.0f32], 1.0, &[1.0]).unwrap(), 1.5f32);
    }
}
