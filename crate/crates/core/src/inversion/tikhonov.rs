//! Closed-form ridge solves and the variable-projection machinery.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::transport::TransportMatrix;

/// Pivot ratio below which an unregularized Gram matrix is treated as singular.
const RANK_TOL: f64 = 1e-13;

/// Factorized normal equations `(A^T A + lambda I)` for one transport matrix.
pub struct RidgeSystem {
    /// `A` (rows x cols), column-major.
    pub a: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    pub lambda: f64,
    chol: Cholesky<f64, Dyn>,
}

impl RidgeSystem {
    pub fn new(a: DMatrix<f64>, lambda: f64) -> Result<Self> {
        let gram = a.transpose() * &a;
        Self::with_gram(a, gram, lambda)
    }

    /// Builds the system from a row-major transport matrix.
    pub fn from_transport(a: &TransportMatrix, lambda: f64) -> Result<Self> {
        let (a_cm, gram) = transport_gram(a);
        Self::with_gram(a_cm, gram, lambda)
    }

    pub fn with_gram(a: DMatrix<f64>, gram: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        let n = gram.nrows();
        let mut g = gram.clone();
        for i in 0..n {
            g[(i, i)] += lambda;
        }
        let chol = Cholesky::new(g).ok_or_else(|| {
            Error::Singular(format!(
                "normal equations not positive definite (lambda = {lambda})"
            ))
        })?;
        if lambda == 0.0 {
            let l = chol.l_dirty();
            let diag: Vec<f64> = (0..n).map(|i| l[(i, i)].abs()).collect();
            let max = diag.iter().cloned().fold(0.0, f64::max);
            let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            if max == 0.0 || (min / max).powi(2) < RANK_TOL {
                return Err(Error::Singular("A^T A is singular and lambda = 0".into()));
            }
        }
        Ok(RidgeSystem {
            a,
            gram,
            lambda,
            chol,
        })
    }

    /// `(A^T A + lambda I)^{-1} v`
    pub fn solve_normal(&self, v: &[f64]) -> Vec<f64> {
        self.chol
            .solve(&DVector::from_column_slice(v))
            .as_slice()
            .to_vec()
    }

    /// `A^T y`
    pub fn at_mul(&self, y: &[f64]) -> Vec<f64> {
        self.a
            .tr_mul(&DVector::from_column_slice(y))
            .as_slice()
            .to_vec()
    }

    /// `A f`
    pub fn a_mul(&self, f: &[f64]) -> Vec<f64> {
        (&self.a * DVector::from_column_slice(f))
            .as_slice()
            .to_vec()
    }

    /// Minimizer of `|A f - y|^2 + lambda |f|^2`.
    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        self.solve_normal(&self.at_mul(y))
    }
}

/// Column-major copy of `a` and its Gram matrix `A^T A`.
pub fn transport_gram(a: &TransportMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    // row-major A is column-major A^T
    let at = DMatrix::from_column_slice(a.cols, a.rows, &a.data);
    let a_cm = at.transpose();
    let gram = &at * &a_cm;
    (a_cm, gram)
}

/// Minimizer of `|A f - y|^2 + lambda |f|^2` via a Cholesky factorization of
/// the normal equations. `lambda = 0` requires `A^T A` to be nonsingular.
pub fn tikhonov_solve(a: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if y.len() != a.nrows() {
        return Err(Error::dims(a.nrows(), y.len()));
    }
    Ok(RidgeSystem::new(a.clone(), lambda)?.solve(y))
}

/// Variable-projection objective `|[A (A^T A + lambda I)^{-1} A^T - I] y|^2`.
pub fn vp_objective(a: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<f64> {
    if y.len() != a.nrows() {
        return Err(Error::dims(a.nrows(), y.len()));
    }
    let sys = RidgeSystem::new(a.clone(), lambda)?;
    Ok(residual_norm2(&sys, y))
}

pub(crate) fn residual_norm2(sys: &RidgeSystem, y: &[f64]) -> f64 {
    let fit = sys.a_mul(&sys.solve(y));
    fit.iter().zip(y).map(|(p, v)| (p - v).powi(2)).sum()
}

/// Orthogonal projector `A (A^T A)^{-1} A^T` onto the range of `A`.
pub fn projection_matrix(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sys = RidgeSystem::new(a.clone(), 0.0).map_err(|e| match e {
        Error::Singular(msg) => Error::RankDeficient(msg),
        other => other,
    })?;
    let at = a.transpose();
    let x = sys.chol.solve(&at);
    Ok(a * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn scalar_solves() {
        let a = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(tikhonov_solve(&a, &[4.0], 0.0).unwrap(), vec![2.0]);
        let f = tikhonov_solve(&a, &[4.0], 2.0).unwrap();
        assert!((f[0] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn singular_without_regularization_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            tikhonov_solve(&a, &[1.0, 1.0], 0.0),
            Err(Error::Singular(_))
        ));
        assert!(tikhonov_solve(&a, &[1.0, 1.0], 1e-3).is_ok());
        assert!(matches!(
            projection_matrix(&a),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn normal_equation_residual_is_small() {
        let a = random(50, 30, 1);
        let y: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let lambda = 0.3;
        let f = tikhonov_solve(&a, &y, lambda).unwrap();
        let fv = DVector::from_column_slice(&f);
        let aty = a.tr_mul(&DVector::from_column_slice(&y));
        let lhs = a.tr_mul(&(&a * &fv)) + &fv * lambda;
        assert!((lhs - &aty).norm() <= 1e-8 * aty.norm());
    }

    #[test]
    fn shrinkage_is_monotone() {
        let a = random(40, 10, 2);
        let y: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut prev = f64::INFINITY;
        for lambda in [1e-6, 1e-3, 0.1, 1.0, 10.0, 1e3] {
            let f = tikhonov_solve(&a, &y, lambda).unwrap();
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= prev);
            prev = norm;
        }
    }

    #[test]
    fn vp_objective_range_and_orthogonal_cases() {
        let a = random(20, 5, 3);
        let f: Vec<f64> = (0..5).map(|i| i as f64 - 2.0).collect();
        let y = (&a * DVector::from_column_slice(&f)).as_slice().to_vec();
        let ynorm: f64 = y.iter().map(|v| v * v).sum();
        assert!(vp_objective(&a, &y, 0.0).unwrap() <= 1e-10 * ynorm);

        // orthogonal complement of range(A)
        let h = projection_matrix(&a).unwrap();
        let v = DVector::from_fn(20, |i, _| ((i * 7) % 5) as f64 - 1.5);
        let w = &v - &h * &v;
        let wn2 = w.norm_squared();
        let obj = vp_objective(&a, w.as_slice(), 0.0).unwrap();
        assert!((obj - wn2).abs() <= 1e-9 * wn2);
    }

    #[test]
    fn vp_objective_increases_to_norm_with_lambda() {
        let a = random(30, 6, 4);
        let y: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin() + 0.5).collect();
        let ynorm: f64 = y.iter().map(|v| v * v).sum();
        let mut prev = 0.0;
        for e in -6..=6 {
            let obj = vp_objective(&a, &y, 10f64.powi(e)).unwrap();
            assert!(obj >= prev);
            prev = obj;
        }
        assert!((prev - ynorm).abs() < 1e-3 * ynorm);
    }

    #[test]
    fn projector_axioms() {
        let a = random(12, 4, 5);
        let h = projection_matrix(&a).unwrap();
        assert!((&h * &h - &h).norm() <= 1e-8);
        assert!((&h - h.transpose()).norm() <= 1e-8);
        let sq = random(6, 6, 6);
        let id = projection_matrix(&sq).unwrap();
        assert!((id - DMatrix::identity(6, 6)).norm() <= 1e-8);
    }

    #[test]
    fn projector_matches_least_squares_fit() {
        let a = random(25, 7, 8);
        let y: Vec<f64> = (0..25).map(|i| (i as f64).sqrt()).collect();
        let h = projection_matrix(&a).unwrap();
        let hy = &h * DVector::from_column_slice(&y);
        let f = tikhonov_solve(&a, &y, 1e-14).unwrap();
        let fit = &a * DVector::from_column_slice(&f);
        assert!((hy - fit).norm() <= 1e-8);
    }

    #[test]
    fn transport_path_matches_dense_path() {
        let a = random(9, 4, 9).abs();
        let mut data = Vec::new();
        for m in 0..9 {
            for n in 0..4 {
                data.push(a[(m, n)]);
            }
        }
        let t = TransportMatrix::from_rows(9, 4, data).unwrap();
        let y: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let f1 = RidgeSystem::from_transport(&t, 0.1).unwrap().solve(&y);
        let f2 = tikhonov_solve(&a, &y, 0.1).unwrap();
        for (p, q) in f1.iter().zip(&f2) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
