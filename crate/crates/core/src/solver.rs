//! Ordinary and penalized least squares through regularized normal equations.
//!
//! Every system is solved as `(AᵀA + λ·S + JITTER·I) β = Aᵀy`, where `S` is
//! block-diagonal with zeros on the unpenalized leading columns. The jitter
//! keeps rank-deficient designs (collinear features, spline blocks that
//! reproduce the intercept) solvable and selects a small-norm minimizer.
//!
//! Unpenalized problems are solved through a QR factorization of
//! `[A; √JITTER·I]`, which has the same solution without squaring the
//! condition number of `A`. Penalized problems go through the normal matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline_basis::PenaltyBlock;

pub const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefficientVector(Vec<f64>);

impl CoefficientVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("coefficient {i} is not finite")));
        }
        Ok(CoefficientVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for CoefficientVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Adds `weight · P` for each block along the diagonal, starting at
/// column `first`.
pub(crate) fn add_penalties(
    normal: &mut DMatrix<f64>,
    weight: f64,
    penalties: &[PenaltyBlock],
    first: usize,
) {
    let mut offset = first;
    for block in penalties {
        let d = block.dim();
        let mut view = normal.view_mut((offset, offset), (d, d));
        view += &block.matrix * weight;
        offset += d;
    }
}

/// Solves the symmetric system `(normal + JITTER·I) β = rhs`.
pub(crate) fn solve_normal(mut normal: DMatrix<f64>, rhs: DVector<f64>) -> Result<CoefficientVector> {
    for i in 0..normal.nrows() {
        normal[(i, i)] += JITTER;
    }
    let solution = match normal.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        // Rounding can leave a numerically indefinite matrix when the design
        // is exactly rank deficient; LU still solves the same system.
        None => normal
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numeric("normal equations are singular".into()))?,
    };
    CoefficientVector::new(solution.iter().copied().collect())
}

pub fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<CoefficientVector> {
    let (n, p) = a.shape();
    if n != y.len() {
        return Err(Error::Dimension(format!("design has {n} rows but target has {}", y.len())));
    }
    if n == 0 || p == 0 {
        return Err(Error::Empty);
    }
    let mut stacked = DMatrix::zeros(n + p, p);
    stacked.view_mut((0, 0), (n, p)).copy_from(a);
    for i in 0..p {
        stacked[(n + i, i)] = JITTER.sqrt();
    }
    let mut rhs = DVector::zeros(n + p);
    rhs.rows_mut(0, n).copy_from(y);

    let qr = stacked.qr();
    let qty = qr.q().transpose() * rhs;
    let solution = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numeric("triangular factor is singular".into()))?;
    CoefficientVector::new(solution.iter().copied().collect())
}

/// Minimizes `‖y − Bβ‖² + λ Σ βⱼᵀ Pⱼ βⱼ`.
///
/// The penalty blocks tile the trailing columns of `b` in order; any leading
/// columns they do not cover (the intercept, for design matrices) stay
/// unpenalized.
pub fn penalized_least_squares(
    b: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    penalties: &[PenaltyBlock],
) -> Result<CoefficientVector> {
    if b.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows but target has {}",
            b.nrows(),
            y.len()
        )));
    }
    if b.nrows() == 0 || b.ncols() == 0 {
        return Err(Error::Empty);
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let penalized: usize = penalties.iter().map(PenaltyBlock::dim).sum();
    if penalized > b.ncols() {
        return Err(Error::Dimension(format!(
            "penalty blocks span {penalized} columns but the design has {}",
            b.ncols()
        )));
    }
    let mut normal = b.transpose() * b;
    add_penalties(&mut normal, lambda, penalties, b.ncols() - penalized);
    solve_normal(normal, b.transpose() * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline_basis::penalty_block;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0))
    }

    /// Explicit inverse of the regularized normal matrix.
    fn explicit_oracle(
        b: &DMatrix<f64>,
        y: &DVector<f64>,
        lambda: f64,
        penalty: Option<&DMatrix<f64>>,
    ) -> DVector<f64> {
        let p = b.ncols();
        let mut s = DMatrix::<f64>::zeros(p, p);
        if let Some(pm) = penalty {
            let d = pm.nrows();
            s.view_mut((p - d, p - d), (d, d)).copy_from(pm);
        }
        let m = b.transpose() * b + s * lambda + DMatrix::identity(p, p) * JITTER;
        m.try_inverse().unwrap() * b.transpose() * y
    }

    #[test]
    fn mean_of_targets() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let beta = least_squares(&a, &DVector::from_vec(vec![2.0, 4.0])).unwrap();
        assert_abs_diff_eq!(beta[0], 3.0, epsilon = 1e-9);
    }

    #[test]
    fn identity_design() {
        let beta =
            least_squares(&DMatrix::identity(2, 2), &DVector::from_vec(vec![0.3, -7.0])).unwrap();
        assert_abs_diff_eq!(beta[0], 0.3, epsilon = 1e-9);
        assert_abs_diff_eq!(beta[1], -7.0, epsilon = 1e-9);
    }

    #[test]
    fn collinear_design_still_fits() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 1.0]);
        let beta = least_squares(&a, &y).unwrap();
        let fitted = &a * DVector::from_column_slice(beta.as_slice());
        assert_abs_diff_eq!(fitted[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(fitted[1], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(beta[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn strong_difference_penalty_equalizes() {
        let p = PenaltyBlock {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]),
        };
        let y = DVector::from_vec(vec![0.0, 2.0]);
        let beta = penalized_least_squares(&DMatrix::identity(2, 2), &y, 1e9, &[p]).unwrap();
        assert_abs_diff_eq!(beta[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(beta[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn ridge_identity_case() {
        let p = PenaltyBlock {
            matrix: DMatrix::identity(2, 2),
        };
        let y = DVector::from_vec(vec![1.0, 1.0]);
        let beta = penalized_least_squares(&DMatrix::identity(2, 2), &y, 1.0, &[p]).unwrap();
        assert_abs_diff_eq!(beta[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(beta[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn dimension_errors() {
        let b = DMatrix::<f64>::zeros(3, 2);
        let y = DVector::zeros(2);
        assert!(matches!(least_squares(&b, &y), Err(Error::Dimension(_))));
        let y = DVector::zeros(3);
        let too_big = penalty_block(3).unwrap();
        assert!(matches!(
            penalized_least_squares(&b, &y, 1.0, &[too_big]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn lambda_zero_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let b = random_matrix(&mut rng, 30, 7);
            let y = random_vector(&mut rng, 30);
            let pen = penalty_block(6).unwrap();
            let a = penalized_least_squares(&b, &y, 0.0, &[pen]).unwrap();
            let o = least_squares(&b, &y).unwrap();
            for i in 0..7 {
                assert_abs_diff_eq!(a[i], o[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..200 {
            let p = 4 + trial % 3;
            let b = random_matrix(&mut rng, 25, p);
            let y = random_vector(&mut rng, 25);
            let lambda = [0.0, 0.1, 1.0, 10.0][trial % 4];
            let pen = penalty_block(p - 1).unwrap();
            let got = penalized_least_squares(&b, &y, lambda, std::slice::from_ref(&pen)).unwrap();
            let want = explicit_oracle(&b, &y, lambda, Some(&pen.matrix));
            for i in 0..p {
                assert_abs_diff_eq!(got[i], want[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn residual_orthogonal_without_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let b = random_matrix(&mut rng, 40, 5);
            let y = random_vector(&mut rng, 40);
            let beta = least_squares(&b, &y).unwrap();
            let r = &y - &b * DVector::from_column_slice(beta.as_slice());
            let g = b.transpose() * r;
            assert!(g.amax() < 1e-6);
        }
    }

    #[test]
    fn penalty_shrinks_with_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let b = random_matrix(&mut rng, 20, 8);
            let y = random_vector(&mut rng, 20);
            let pen = penalty_block(7).unwrap();
            let mut last = f64::INFINITY;
            for lambda in [0.0, 0.1, 1.0, 10.0] {
                let beta = penalized_least_squares(&b, &y, lambda, std::slice::from_ref(&pen)).unwrap();
                let value = pen.quadratic_form(&beta.as_slice()[1..]);
                assert!(value <= last + 1e-9, "{value} > {last}");
                last = value;
            }
        }
    }
}
