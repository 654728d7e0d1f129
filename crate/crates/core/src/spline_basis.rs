//! Clamped cubic B-spline bases, design matrices and difference penalties.
//!
//! Basis values are computed with the triangular Cox-de Boor scheme, which
//! yields the `DEGREE + 1` functions that are nonzero on a knot span in one
//! pass. Outside `[lo, hi]` every basis function is continued linearly from
//! the nearest boundary (value plus one-sided derivative), so a fitted spline
//! term extrapolates along its boundary tangent instead of dropping to zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEGREE: usize = 3;

/// Knot positions closer than this are treated as the same knot.
pub const KNOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KnotVectorDoc", into = "KnotVectorDoc")]
pub struct KnotVector {
    interior: Vec<f64>,
    lo: f64,
    hi: f64,
    augmented: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct KnotVectorDoc {
    lo: f64,
    hi: f64,
    interior: Vec<f64>,
}

impl TryFrom<KnotVectorDoc> for KnotVector {
    type Error = Error;

    fn try_from(doc: KnotVectorDoc) -> Result<Self> {
        KnotVector::new(doc.interior, doc.lo, doc.hi)
    }
}

impl From<KnotVector> for KnotVectorDoc {
    fn from(kv: KnotVector) -> Self {
        KnotVectorDoc {
            lo: kv.lo,
            hi: kv.hi,
            interior: kv.interior,
        }
    }
}

impl KnotVector {
    /// Builds a clamped cubic knot vector on `[lo, hi]`.
    ///
    /// `interior` must be sorted, distinct, and strictly inside `(lo, hi)`.
    pub fn new(interior: Vec<f64>, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::DegenerateDomain { lo, hi });
        }
        for (index, &value) in interior.iter().enumerate() {
            if !(value > lo && value < hi) {
                return Err(Error::KnotOutOfDomain { index, value, lo, hi });
            }
            if index > 0 && value <= interior[index - 1] {
                return Err(Error::KnotsNotSorted { index });
            }
        }
        let mut augmented = Vec::with_capacity(interior.len() + 2 * (DEGREE + 1));
        augmented.extend(std::iter::repeat_n(lo, DEGREE + 1));
        augmented.extend_from_slice(&interior);
        augmented.extend(std::iter::repeat_n(hi, DEGREE + 1));
        Ok(KnotVector {
            interior,
            lo,
            hi,
            augmented,
        })
    }

    /// Sorts and deduplicates candidate knots, dropping any that are not
    /// strictly inside the domain, then builds the knot vector.
    pub fn from_candidates(candidates: &[f64], lo: f64, hi: f64) -> Result<Self> {
        KnotVector::new(clean_knots(candidates, lo, hi), lo, hi)
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn augmented(&self) -> &[f64] {
        &self.augmented
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    pub fn basis_count(&self) -> usize {
        self.interior.len() + DEGREE + 1
    }

    /// Index of the knot span `[t_s, t_{s+1})` containing `x`, clamped to the
    /// valid range so that `x = hi` falls in the last nonempty span.
    fn span(&self, x: f64) -> usize {
        let below = self.interior.partition_point(|&k| k <= x);
        DEGREE + below
    }

    /// Values of the `degree + 1` basis functions of the given degree that
    /// are nonzero on `span`, for basis indices `span - degree ..= span`.
    fn span_values(&self, span: usize, x: f64, degree: usize) -> [f64; DEGREE + 1] {
        let t = &self.augmented;
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// First derivatives of the cubic basis functions nonzero on `span`.
    fn span_derivatives(&self, span: usize, x: f64) -> [f64; DEGREE + 1] {
        let t = &self.augmented;
        // quadratic basis for indices span-2 ..= span
        let quad = self.span_values(span, x, DEGREE - 1);
        let quad_at = |i: usize| -> f64 {
            if i + (DEGREE - 1) < span || i > span {
                0.0
            } else {
                quad[i + (DEGREE - 1) - span]
            }
        };
        let p = DEGREE as f64;
        let mut d = [0.0; DEGREE + 1];
        for (slot, out) in d.iter_mut().enumerate() {
            let i = span - DEGREE + slot;
            let mut v = 0.0;
            let den_left = t[i + DEGREE] - t[i];
            if den_left > 0.0 {
                v += p * quad_at(i) / den_left;
            }
            let den_right = t[i + DEGREE + 1] - t[i + 1];
            if den_right > 0.0 {
                v -= p * quad_at(i + 1) / den_right;
            }
            *out = v;
        }
        d
    }

    /// Returns the first nonzero basis index and the `DEGREE + 1` values
    /// starting there. Points outside `[lo, hi]` use the linear extension.
    pub fn eval_local(&self, x: f64) -> (usize, [f64; DEGREE + 1]) {
        if x < self.lo || x > self.hi {
            let boundary = if x < self.lo { self.lo } else { self.hi };
            let span = self.span(boundary).min(self.basis_count() - 1);
            let values = self.span_values(span, boundary, DEGREE);
            let slopes = self.span_derivatives(span, boundary);
            let dx = x - boundary;
            let mut out = [0.0; DEGREE + 1];
            for k in 0..=DEGREE {
                out[k] = values[k] + dx * slopes[k];
            }
            (span - DEGREE, out)
        } else {
            let span = self.span(x).min(self.basis_count() - 1);
            (span - DEGREE, self.span_values(span, x, DEGREE))
        }
    }

    /// Dense vector of all `basis_count` basis values at `x`.
    pub fn eval_basis(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.basis_count()];
        let (first, values) = self.eval_local(x);
        out[first..first + DEGREE + 1].copy_from_slice(&values);
        out
    }

    /// Value of the spline with the given coefficients at `x`.
    pub fn eval_spline(&self, coefficients: &[f64], x: f64) -> f64 {
        let (first, values) = self.eval_local(x);
        values
            .iter()
            .zip(&coefficients[first..first + DEGREE + 1])
            .map(|(b, c)| b * c)
            .sum()
    }
}

/// Sorted, deduplicated knots strictly inside `(lo, hi)`.
pub fn clean_knots(candidates: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut knots: Vec<f64> = candidates
        .iter()
        .copied()
        .filter(|&k| k.is_finite() && k > lo + KNOT_TOLERANCE && k < hi - KNOT_TOLERANCE)
        .collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|a, b| (*a - *b).abs() <= KNOT_TOLERANCE);
    knots
}

/// A knot vector attached to one column of the feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableBasis {
    pub variable: usize,
    pub knots: KnotVector,
}

/// Total column count of the design matrix: intercept plus every block.
pub fn design_width(bases: &[VariableBasis]) -> usize {
    1 + bases.iter().map(|b| b.knots.basis_count()).sum::<usize>()
}

/// Appends the nonzero `(column, value)` entries of one design-matrix row.
pub(crate) fn sparse_row(bases: &[VariableBasis], row: &[f64], out: &mut Vec<(usize, f64)>) {
    out.clear();
    out.push((0, 1.0));
    let mut offset = 1;
    for basis in bases {
        let (first, values) = basis.knots.eval_local(row[basis.variable]);
        for (k, v) in values.iter().enumerate() {
            if *v != 0.0 {
                out.push((offset + first + k, *v));
            }
        }
        offset += basis.knots.basis_count();
    }
}

/// Assembles the dense design matrix `[1 | B_1(x_1) | ... | B_m(x_m)]`.
pub fn design_matrix(x: &DMatrix<f64>, bases: &[VariableBasis]) -> Result<DMatrix<f64>> {
    if let Some(bad) = bases.iter().find(|b| b.variable >= x.ncols()) {
        return Err(Error::Dimension(format!(
            "basis refers to variable {} but X has {} columns",
            bad.variable,
            x.ncols()
        )));
    }
    let mut b = DMatrix::zeros(x.nrows(), design_width(bases));
    let mut row = vec![0.0; x.ncols()];
    let mut entries = Vec::new();
    for i in 0..x.nrows() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = x[(i, j)];
        }
        sparse_row(bases, &row, &mut entries);
        for &(col, v) in &entries {
            b[(i, col)] = v;
        }
    }
    Ok(b)
}

/// Second-order difference penalty `DᵀD` for one coefficient block.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyBlock {
    pub matrix: DMatrix<f64>,
}

impl PenaltyBlock {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn quadratic_form(&self, beta: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(beta);
        (v.transpose() * &self.matrix * &v)[(0, 0)]
    }
}

pub fn penalty_block(basis_count: usize) -> Result<PenaltyBlock> {
    if basis_count < 3 {
        return Err(Error::PenaltyUndefined(basis_count));
    }
    let mut d = DMatrix::zeros(basis_count - 2, basis_count);
    for r in 0..basis_count - 2 {
        d[(r, r)] = 1.0;
        d[(r, r + 1)] = -2.0;
        d[(r, r + 2)] = 1.0;
    }
    Ok(PenaltyBlock {
        matrix: d.transpose() * d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit(interior: &[f64]) -> KnotVector {
        KnotVector::new(interior.to_vec(), 0.0, 1.0).unwrap()
    }

    /// Plain recursive Cox-de Boor definition, used as an independent check.
    fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64, hi: f64) -> f64 {
        if p == 0 {
            let last = t[i + 1] == hi && x == hi && t[i] < t[i + 1];
            return if (t[i] <= x && x < t[i + 1]) || last { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let dl = t[i + p] - t[i];
        if dl > 0.0 {
            v += (x - t[i]) / dl * cox_de_boor(t, i, p - 1, x, hi);
        }
        let dr = t[i + p + 1] - t[i + 1];
        if dr > 0.0 {
            v += (t[i + p + 1] - x) / dr * cox_de_boor(t, i + 1, p - 1, x, hi);
        }
        v
    }

    #[test]
    fn clamped_construction() {
        let kv = unit(&[0.5]);
        assert_eq!(kv.augmented(), &[0.0, 0.0, 0.0, 0.0, 0.5, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(kv.basis_count(), 5);
        let kv = unit(&[]);
        assert_eq!(kv.augmented(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(kv.basis_count(), 4);
        assert_eq!(unit(&[0.2, 0.8]).basis_count(), 6);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            KnotVector::new(vec![], 1.0, 1.0),
            Err(Error::DegenerateDomain { .. })
        ));
        assert!(matches!(
            KnotVector::new(vec![0.5, 1.5], 0.0, 1.0),
            Err(Error::KnotOutOfDomain { index: 1, .. })
        ));
        assert!(matches!(
            KnotVector::new(vec![0.0], 0.0, 1.0),
            Err(Error::KnotOutOfDomain { index: 0, .. })
        ));
    }

    #[test]
    fn candidates_are_cleaned() {
        let kv = KnotVector::from_candidates(&[0.7, 0.0, 0.3, 0.7 + 1e-14, 1.0, 0.3], 0.0, 1.0)
            .unwrap();
        assert_eq!(kv.interior(), &[0.3, 0.7]);
    }

    #[test]
    fn bernstein_values_on_single_span() {
        let kv = unit(&[]);
        assert_eq!(kv.eval_basis(0.0), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(kv.eval_basis(1.0), vec![0.0, 0.0, 0.0, 1.0]);
        // Bernstein cubics at 1/2: (1/2)^3 * [1, 3, 3, 1]
        let v = kv.eval_basis(0.5);
        for (a, b) in v.iter().zip([0.125, 0.375, 0.375, 0.125]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn matches_recursive_definition() {
        let kv = KnotVector::new(vec![-0.4, 0.1, 0.15, 1.3], -1.0, 2.0).unwrap();
        for step in 0..=300 {
            let x = -1.0 + 3.0 * step as f64 / 300.0;
            let fast = kv.eval_basis(x);
            for (i, v) in fast.iter().enumerate() {
                let slow = cox_de_boor(kv.augmented(), i, DEGREE, x, kv.hi());
                assert_abs_diff_eq!(*v, slow, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn design_matrix_layout() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let bases = vec![VariableBasis {
            variable: 0,
            knots: unit(&[]),
        }];
        let b = design_matrix(&x, &bases).unwrap();
        assert_eq!(b.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 0.0, 0.0, 0.0]);

        let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.9, 0.3]);
        let bases = vec![
            VariableBasis { variable: 0, knots: unit(&[]) },
            VariableBasis { variable: 1, knots: unit(&[]) },
        ];
        let b = design_matrix(&x, &bases).unwrap();
        assert_eq!((b.nrows(), b.ncols()), (2, 9));

        let bad = vec![VariableBasis { variable: 2, knots: unit(&[]) }];
        assert!(matches!(design_matrix(&x, &bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn penalty_small_cases() {
        let p = penalty_block(3).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, -2.0, 1.0, -2.0, 4.0, -2.0, 1.0, -2.0, 1.0],
        );
        assert_eq!(p.matrix, expected);

        let p4 = penalty_block(4).unwrap();
        assert_eq!(p4.dim(), 4);
        assert_eq!(p4.matrix.clone().svd(false, false).rank(1e-10), 2);

        assert!(matches!(penalty_block(2), Err(Error::PenaltyUndefined(2))));
    }

    #[test]
    fn penalty_is_psd() {
        for n in 3..12 {
            let p = penalty_block(n).unwrap();
            assert_eq!(p.matrix, p.matrix.transpose());
            let eig = p.matrix.clone().symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-10));
        }
    }

    fn knot_vector_strategy() -> impl Strategy<Value = KnotVector> {
        (-50.0f64..50.0, 0.01f64..100.0, prop::collection::vec(0.0f64..1.0, 0..12)).prop_map(
            |(lo, width, fracs)| {
                let hi = lo + width;
                let cands: Vec<f64> = fracs.iter().map(|f| lo + f * width).collect();
                KnotVector::from_candidates(&cands, lo, hi).unwrap()
            },
        )
    }

    /// Knots on a coarse grid so that finite differences stay accurate.
    fn spaced_knot_vector_strategy() -> impl Strategy<Value = KnotVector> {
        (-50.0f64..50.0, 1.0f64..20.0, prop::collection::vec(1usize..20, 0..8)).prop_map(
            |(lo, width, slots)| {
                let cands: Vec<f64> = slots.iter().map(|&s| lo + s as f64 * width / 20.0).collect();
                KnotVector::from_candidates(&cands, lo, lo + width).unwrap()
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn partition_of_unity(kv in knot_vector_strategy(), u in 0.0f64..=1.0) {
            let x = kv.lo() + u * (kv.hi() - kv.lo());
            let s: f64 = kv.eval_basis(x).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(kv.eval_basis(x).iter().all(|&v| v >= -1e-15));
        }

        #[test]
        fn local_support(kv in knot_vector_strategy(), u in 0.0f64..=1.0) {
            let x = kv.lo() + u * (kv.hi() - kv.lo());
            let t = kv.augmented();
            for (k, v) in kv.eval_basis(x).iter().enumerate() {
                if x < t[k] || x > t[k + DEGREE + 1] {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }

        #[test]
        fn penalty_null_space(n in 3usize..15, a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let p = penalty_block(n).unwrap();
            let beta: Vec<f64> = (0..n).map(|k| a + b * k as f64).collect();
            prop_assert!(p.quadratic_form(&beta).abs() < 1e-9);
            let mut bumped = beta.clone();
            bumped[n / 2] += 1.0;
            prop_assert!(p.quadratic_form(&bumped) > 0.0);
        }

        #[test]
        fn extension_is_c1(kv in spaced_knot_vector_strategy(), coefs in prop::collection::vec(-3.0f64..3.0, 16)) {
            let c = &coefs[..kv.basis_count().min(16)];
            prop_assume!(c.len() == kv.basis_count());
            let h = 1e-6;
            for b in [kv.lo(), kv.hi()] {
                let f = |x: f64| kv.eval_spline(c, x);
                prop_assert!((f(b - 1e-12) - f(b + 1e-12)).abs() < 1e-4);
                // second-order one-sided differences on each side of the boundary
                let fwd = (-3.0 * f(b) + 4.0 * f(b + h) - f(b + 2.0 * h)) / (2.0 * h);
                let bwd = (3.0 * f(b) - 4.0 * f(b - h) + f(b - 2.0 * h)) / (2.0 * h);
                let (inner, outer) = if b == kv.lo() { (fwd, bwd) } else { (bwd, fwd) };
                let scale = 1.0 + inner.abs();
                prop_assert!((inner - outer).abs() < 1e-4 * scale, "{} vs {}", inner, outer);
            }
        }
    }
}
