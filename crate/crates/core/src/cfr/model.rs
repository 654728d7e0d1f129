use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{least_squares, CoefficientVector};
use crate::spline_basis::{design_width, VariableBasis};

/// Affine model `intercept + Σ weights[j] · x[j]`, fitted by least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl LinearModel {
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let (n, m) = x.shape();
        if n != y.len() {
            return Err(Error::Dimension(format!("X has {n} rows, y has {}", y.len())));
        }
        let mut design = DMatrix::from_element(n, m + 1, 1.0);
        design.view_mut((0, 1), (n, m)).copy_from(x);
        let beta = least_squares(&design, y)?;
        Ok(LinearModel {
            intercept: beta[0],
            weights: beta.as_slice()[1..].to_vec(),
        })
    }

    pub fn eval(&self, row: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_width(x, self.weights.len())?;
        Ok(rows(x).map(|r| self.eval(&r)).collect())
    }
}

/// Intercept plus one penalized cubic spline per non-constant variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveSplineModel {
    pub bases: Vec<VariableBasis>,
    pub coefficients: CoefficientVector,
}

impl AdditiveSplineModel {
    pub fn eval(&self, row: &[f64]) -> f64 {
        let coefs = self.coefficients.as_slice();
        let mut acc = coefs[0];
        let mut offset = 1;
        for basis in &self.bases {
            let nb = basis.knots.basis_count();
            acc += basis.knots.eval_spline(&coefs[offset..offset + nb], row[basis.variable]);
            offset += nb;
        }
        acc
    }

    pub fn variable_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.bases.iter().map(|b| b.variable)
    }

    pub fn knot_count(&self) -> usize {
        self.bases.iter().map(|b| b.knots.interior().len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerModel {
    Linear(LinearModel),
    Spline(AdditiveSplineModel),
}

impl LayerModel {
    pub fn eval(&self, row: &[f64]) -> f64 {
        match self {
            LayerModel::Linear(m) => m.eval(row),
            LayerModel::Spline(m) => m.eval(row),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthLayer {
    pub model: LayerModel,
    pub offset: f64,
}

/// A fitted continued fraction
/// `norm · [g₀ − C₀ + 1/(g₁ − C₁ + 1/(… + 1/g_d))]`.
///
/// The deepest layer's offset is not subtracted unless
/// `literal_final_offset` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CFracModel {
    pub norm: f64,
    pub layers: Vec<DepthLayer>,
    pub feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_name: Option<String>,
    pub feature_bounds: Vec<(f64, f64)>,
    pub training_target_max: f64,
    pub denom_floor: f64,
    #[serde(default)]
    pub literal_final_offset: bool,
}

/// Replaces denominators smaller than `floor` in magnitude by `±floor`,
/// with zero mapped to `+floor`.
pub fn guard_denominator(den: f64, floor: f64) -> f64 {
    if den.abs() < floor {
        if den < 0.0 {
            -floor
        } else {
            floor
        }
    } else {
        den
    }
}

impl CFracModel {
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn feature_count(&self) -> usize {
        self.feature_bounds.len()
    }

    /// Combines per-layer values `g_0 .. g_t` into the fraction truncated at
    /// depth `t = terms.len() - 1`, in normalized units.
    pub fn combine(&self, terms: &[f64]) -> f64 {
        let d = terms.len() - 1;
        let terminal = |i: usize| {
            if self.literal_final_offset {
                terms[i] - self.layers[i].offset
            } else {
                terms[i]
            }
        };
        if d == 0 {
            return terminal(0);
        }
        let mut tail = guard_denominator(terminal(d), self.denom_floor);
        for i in (1..d).rev() {
            tail = guard_denominator(
                terms[i] - self.layers[i].offset + 1.0 / tail,
                self.denom_floor,
            );
        }
        terms[0] - self.layers[0].offset + 1.0 / tail
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let terms: Vec<f64> = self.layers.iter().map(|l| l.model.eval(row)).collect();
        self.norm * self.combine(&terms)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_width(x, self.feature_count())?;
        Ok(rows(x).map(|r| self.predict_row(&r)).collect())
    }

    /// Predictions of every truncation depth `0..=d` at once; entry `[t][i]`
    /// is row `i` under the fraction cut after layer `t`.
    pub fn predict_all_depths(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        check_width(x, self.feature_count())?;
        let mut out = vec![Vec::with_capacity(x.nrows()); self.layers.len()];
        for r in rows(x) {
            let terms: Vec<f64> = self.layers.iter().map(|l| l.model.eval(&r)).collect();
            for (t, col) in out.iter_mut().enumerate() {
                col.push(self.norm * self.combine(&terms[..=t]));
            }
        }
        Ok(out)
    }

    /// Copy of the model keeping layers `0..=depth`.
    pub fn truncate(&self, depth: usize) -> CFracModel {
        let mut m = self.clone();
        m.layers.truncate(depth + 1);
        m
    }

    /// Structural checks applied after deserialization.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::Config("model has no layers".into()))?;
        let m = self.feature_count();
        match &first.model {
            LayerModel::Linear(lin) => {
                if lin.weights.len() != m {
                    return Err(Error::Dimension(format!(
                        "linear layer does not match {m} features"
                    )));
                }
            }
            LayerModel::Spline(_) => {
                return Err(Error::Config("layer 0 must be linear".into()));
            }
        }
        if !self.feature_names.is_empty() && self.feature_names.len() != m {
            return Err(Error::Dimension(format!(
                "{} feature names for {m} features",
                self.feature_names.len()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            let LayerModel::Spline(s) = &layer.model else {
                return Err(Error::Config(format!("layer {i} must be a spline layer")));
            };
            if s.coefficients.len() != design_width(&s.bases) {
                return Err(Error::Dimension(format!(
                    "layer {i}: {} coefficients for {} design columns",
                    s.coefficients.len(),
                    design_width(&s.bases)
                )));
            }
            if let Some(b) = s.bases.iter().find(|b| b.variable >= m) {
                return Err(Error::Dimension(format!(
                    "layer {i}: variable {} out of range",
                    b.variable
                )));
            }
        }
        if !(self.norm > 0.0) || !(self.denom_floor > 0.0) {
            return Err(Error::Config("norm and denom_floor must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_width(x: &DMatrix<f64>, expected: usize) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::Dimension(format!(
            "model expects {expected} features, got {}",
            x.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn rows(x: &DMatrix<f64>) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..x.nrows()).map(move |i| x.row(i).iter().copied().collect())
}
