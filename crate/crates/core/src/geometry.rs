//! Squared volumes of parallelotopes and a few vector helpers.
//!
//! The squared `m`-dimensional volume of the parallelotope spanned by the rows
//! of an `m x n` matrix `A` equals `det(A A^T)`. Everything here works on the
//! `m x m` Gram matrix and never factors `A` itself.

use crate::error::{Error, Result};

/// `m` row vectors sharing one dimension `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    rows: Vec<Vec<f64>>,
    dim: usize,
}

impl RowMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().ok_or(Error::EmptyInput("row matrix"))?.len();
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
        }
        Ok(Self { rows, dim })
    }

    /// Builds from borrowed rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(rows.iter().map(|r| r.as_ref().to_vec()).collect())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `m x m` matrix of pairwise dot products.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let m = self.rows.len();
        let mut g = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in i..m {
                let v = dot(&self.rows[i], &self.rows[j]);
                g[i][j] = v;
                g[j][i] = v;
            }
        }
        g
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `det(A A^T)`: the squared volume spanned by the rows of `a`.
///
/// Returns exactly 0 when there are more rows than dimensions.
pub fn gram_volume_sq(a: &RowMatrix) -> f64 {
    if a.n_rows() > a.dim() {
        return 0.0;
    }
    psd_det(a.gram())
}

/// Determinant of a symmetric positive semi-definite matrix by Gaussian
/// elimination with partial pivoting. Negative results are roundoff and are
/// clamped to 0.
pub fn psd_det(mut g: Vec<Vec<f64>>) -> f64 {
    let m = g.len();
    let mut det = 1.0;
    for col in 0..m {
        let pivot_row = (col..m)
            .max_by(|&a, &b| g[a][col].abs().total_cmp(&g[b][col].abs()))
            .unwrap_or(col);
        let pivot = g[pivot_row][col];
        if pivot == 0.0 {
            return 0.0;
        }
        if pivot_row != col {
            g.swap(pivot_row, col);
            det = -det;
        }
        det *= pivot;
        for r in col + 1..m {
            let factor = g[r][col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in col..m {
                g[r][c] -= factor * g[col][c];
            }
        }
    }
    det.max(0.0)
}

/// Componentwise arithmetic mean of equal-length vectors.
pub fn mean_vector<V: AsRef<[f64]>>(vs: &[V]) -> Result<Vec<f64>> {
    let first = vs.first().ok_or(Error::EmptyInput("mean of no vectors"))?;
    let dim = first.as_ref().len();
    let mut acc = vec![0.0; dim];
    for v in vs {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cross(u: &[f64], v: &[f64]) -> [f64; 3] {
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn orthonormal_rows_have_unit_volume() {
        let a = RowMatrix::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(gram_volume_sq(&a), 1.0);
    }

    #[test]
    fn duplicate_rows_have_zero_volume() {
        let a = RowMatrix::new(vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(gram_volume_sq(&a), 0.0);
    }

    #[test]
    fn more_rows_than_dims_is_zero() {
        let a = RowMatrix::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(gram_volume_sq(&a), 0.0);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let err = RowMatrix::new(vec![vec![1.0, 0.0], vec![1.0]]).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, found: 1 });
        assert!(RowMatrix::new(vec![]).is_err());
    }

    #[test]
    fn mean_vector_examples() {
        assert_eq!(mean_vector(&[[1.0, 1.0], [3.0, 3.0]]).unwrap(), vec![2.0, 2.0]);
        assert_eq!(mean_vector(&[[4.0, -1.5]]).unwrap(), vec![4.0, -1.5]);
        assert_eq!(
            mean_vector(&[[0.0, 0.0], [0.0, 0.0], [6.0, 0.0]]).unwrap(),
            vec![2.0, 0.0]
        );
        assert!(mean_vector::<Vec<f64>>(&[]).is_err());
        assert!(mean_vector(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0..3.0f64, 3)
    }

    proptest! {
        #[test]
        fn matches_cross_product(u in vec3(), v in vec3()) {
            let a = RowMatrix::new(vec![u.clone(), v.clone()]).unwrap();
            let c = cross(&u, &v);
            let oracle = dot(&c, &c);
            let got = gram_volume_sq(&a);
            prop_assert!((got - oracle).abs() <= 1e-8 * oracle.max(1e-6), "{got} vs {oracle}");
        }

        #[test]
        fn single_row_is_squared_norm(u in proptest::collection::vec(-5.0..5.0f64, 1..8)) {
            let a = RowMatrix::new(vec![u.clone()]).unwrap();
            prop_assert!(rel_close(gram_volume_sq(&a), dot(&u, &u), 1e-12));
        }

        #[test]
        fn scaling_a_row_scales_by_square(
            rows in proptest::collection::vec(proptest::collection::vec(-2.0..2.0f64, 5), 3),
            c in 0.1..4.0f64,
        ) {
            let base = gram_volume_sq(&RowMatrix::new(rows.clone()).unwrap());
            let mut scaled = rows;
            scaled[1].iter_mut().for_each(|x| *x *= c);
            let got = gram_volume_sq(&RowMatrix::new(scaled).unwrap());
            prop_assert!(rel_close(got, c * c * base, 1e-9) || base < 1e-12);
        }
    }
}
