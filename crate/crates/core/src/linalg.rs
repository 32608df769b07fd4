//! Dense LU with partial pivoting and a Hager–Higham 1-norm condition estimate.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

pub fn norm1(a: &DenseMatrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn norm_inf(a: &DenseMatrix) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &DenseMatrix) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Row then column scale factors that bring every row and column of `a` to
/// unit max-norm. Zero rows or columns keep factor 1.
pub fn equilibrate(a: &DenseMatrix) -> (DVector<f64>, DVector<f64>) {
    let inv = |m: f64| if m > 0.0 { 1.0 / m } else { 1.0 };
    let r = DVector::from_iterator(a.nrows(), a.row_iter().map(|row| inv(row.amax())));
    let c = DVector::from_iterator(
        a.ncols(),
        a.column_iter()
            .map(|col| inv(col.iter().zip(r.iter()).fold(0.0f64, |m, (v, s)| m.max((v * s).abs())))),
    );
    (r, c)
}

/// `diag(r) · a · diag(c)`.
pub fn scale_rows_cols(a: &DenseMatrix, r: &DVector<f64>, c: &DVector<f64>) -> DenseMatrix {
    DenseMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * r[i] * c[j])
}

/// Reciprocal condition estimate of the equilibrated `a`; 0 when singular.
pub fn equilibrated_rcond(a: &DenseMatrix) -> f64 {
    let (r, c) = equilibrate(a);
    LuFactor::new(&scale_rows_cols(a, &r, &c)).map_or(0.0, |f| f.rcond())
}

/// Factorization `P A = L U` kept together with the explicit triangular
/// factors for transpose solves.
pub struct LuFactor {
    lu: LU<f64, Dyn, Dyn>,
    l: DenseMatrix,
    u: DenseMatrix,
    norm1: f64,
}

impl LuFactor {
    pub fn new(a: &DenseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidArgument(format!(
                "LU needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
        }
        let lu = a.clone().lu();
        Ok(Self {
            l: lu.l(),
            u: lu.u(),
            lu,
            norm1: norm1(a),
        })
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    fn has_zero_pivot(&self) -> bool {
        self.u.diagonal().iter().any(|&d| d == 0.0)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        self.lu.solve(b).filter(|x| x.iter().all(|v| v.is_finite()))
    }

    pub fn solve(&self, b: &DenseMatrix) -> Option<DenseMatrix> {
        self.lu.solve(b).filter(|x| x.iter().all(|v| v.is_finite()))
    }

    /// Solves `Aᵀ x = b`: `Uᵀ z = b`, `Lᵀ w = z`, `x = Pᵀ w`.
    pub fn solve_transpose_vec(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        let z = self.u.tr_solve_upper_triangular(b)?;
        let mut w = self.l.tr_solve_lower_triangular(&z)?;
        self.lu.p().inv_permute_rows(&mut w);
        w.iter().all(|v| v.is_finite()).then_some(w)
    }

    /// Estimate of `‖A⁻¹‖₁`; infinite when a solve breaks down.
    pub fn inverse_norm1_estimate(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 0.0;
        }
        if self.has_zero_pivot() {
            return f64::INFINITY;
        }
        let mut x = DVector::from_element(n, 1.0 / n as f64);
        let mut est = 0.0;
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let Some(y) = self.solve_vec(&x) else {
                return f64::INFINITY;
            };
            est = y.iter().map(|v| v.abs()).sum::<f64>();
            let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
            let Some(z) = self.solve_transpose_vec(&xi) else {
                return f64::INFINITY;
            };
            let (j, zmax) = z
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bj, bv), (k, v)| {
                    if v.abs() > bv {
                        (k, v.abs())
                    } else {
                        (bj, bv)
                    }
                });
            if zmax <= z.dot(&x) || j == last_j {
                break;
            }
            last_j = j;
            x = DVector::zeros(n);
            x[j] = 1.0;
        }
        // Higham's extra probe guards against the estimator's known blind spots.
        if n > 1 {
            let b = DVector::from_fn(n, |i, _| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                sign * (1.0 + i as f64 / (n - 1) as f64)
            });
            match self.solve_vec(&b) {
                Some(y) => est = f64::max(est, 2.0 * y.iter().map(|v| v.abs()).sum::<f64>() / (3 * n) as f64),
                None => return f64::INFINITY,
            }
        }
        est
    }

    /// 1-norm condition estimate `κ₁(A)`; infinite for singular input.
    pub fn condition_estimate(&self) -> f64 {
        let inv = self.inverse_norm1_estimate();
        if inv.is_infinite() || self.norm1 == 0.0 {
            return f64::INFINITY;
        }
        self.norm1 * inv
    }

    pub fn rcond(&self) -> f64 {
        let c = self.condition_estimate();
        if c.is_finite() {
            1.0 / c
        } else {
            0.0
        }
    }
}

pub fn condition_estimate(a: &DenseMatrix) -> f64 {
    match LuFactor::new(a) {
        Ok(f) => f.condition_estimate(),
        Err(_) => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibration_removes_scaling() {
        let a = DenseMatrix::from_row_slice(2, 2, &[1e12, 2e12, 3e-9, -1e-9]);
        let (r, c) = equilibrate(&a);
        let b = scale_rows_cols(&a, &r, &c);
        for i in 0..2 {
            assert!((b.row(i).amax() - 1.0).abs() < 1e-15 || b.row(i).amax() <= 1.0);
            assert!((b.column(i).amax() - 1.0).abs() < 1e-15);
        }
        assert!(condition_estimate(&a) > 1e15);
        assert!(equilibrated_rcond(&a) > 0.1);
    }

    #[test]
    fn identity_condition_is_one() {
        assert!((condition_estimate(&DenseMatrix::identity(5, 5)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_condition() {
        let a = DenseMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-12]));
        let c = condition_estimate(&a);
        assert!((c / 1e12 - 1.0).abs() < 1e-9, "{c}");
    }

    #[test]
    fn singular_is_infinite() {
        let a = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(condition_estimate(&a).is_infinite());
        assert_eq!(LuFactor::new(&a).unwrap().rcond(), 0.0);
    }

    #[test]
    fn estimate_matches_exact_on_small_matrix() {
        let a = DenseMatrix::from_row_slice(3, 3, &[4.0, -2.0, 1.0, 3.0, 6.0, -4.0, 2.0, 1.0, 8.0]);
        let inv = a.clone().try_inverse().unwrap();
        let exact = norm1(&a) * norm1(&inv);
        let est = condition_estimate(&a);
        assert!(est <= exact * (1.0 + 1e-12) && est >= exact / 3.0, "{est} vs {exact}");
    }

    #[test]
    fn transpose_solve() {
        let a = DenseMatrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 3.0, 1.0, -4.0, 2.0, 1.0, 8.0]);
        let f = LuFactor::new(&a).unwrap();
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = f.solve_transpose_vec(&b).unwrap();
        assert!((a.transpose() * &x - &b).amax() < 1e-13);
        let y = f.solve_vec(&b).unwrap();
        assert!((&a * &y - &b).amax() < 1e-13);
    }

    #[test]
    fn norms() {
        let a = DenseMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, 4.0]);
        assert_eq!(norm1(&a), 6.0);
        assert_eq!(norm_inf(&a), 7.0);
        assert_eq!(max_abs(&a), 4.0);
        assert!(LuFactor::new(&DenseMatrix::zeros(2, 3)).is_err());
    }
}
