use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::knots::{compute_offset, select_knots};
use super::model::{AdditiveSplineModel, CFracModel, DepthLayer, LayerModel, LinearModel};
use crate::error::{Error, Result};
use crate::evaluation::rmse;
use crate::solver::{add_penalties, solve_normal};
use crate::spline_basis::{
    clean_knots, design_width, penalty_block, sparse_row, KnotVector, PenaltyBlock, VariableBasis,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Smoothing weight on the difference penalties.
    pub lambda: f64,
    /// New knots added per depth.
    pub knots_per_depth: usize,
    /// Targets are divided by this before fitting.
    pub norm: f64,
    pub max_depth: usize,
    pub auto_depth: bool,
    /// Margin added to `|min residual|` so inverted targets stay bounded.
    pub offset_epsilon: f64,
    pub denom_floor: f64,
    /// Subtract the deepest offset too when evaluating.
    pub literal_final_offset: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 0.5,
            knots_per_depth: 5,
            norm: 1000.0,
            max_depth: 5,
            auto_depth: false,
            offset_epsilon: 1e-3,
            denom_floor: 1e-6,
            literal_final_offset: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::Config(format!("{what} must be positive, got {v}"));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.knots_per_depth == 0 {
            return Err(Error::Config("knots_per_depth must be at least 1".into()));
        }
        if !(self.norm > 0.0) || !self.norm.is_finite() {
            return Err(bad("norm", self.norm));
        }
        if !(self.offset_epsilon > 0.0) {
            return Err(bad("offset_epsilon", self.offset_epsilon));
        }
        if !(self.denom_floor > 0.0) {
            return Err(bad("denom_floor", self.denom_floor));
        }
        Ok(())
    }
}

/// Per-depth diagnostics collected while fitting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthTrace {
    pub depth: usize,
    /// Training RMSE of the fraction truncated at this depth (target units).
    pub train_rmse: f64,
    pub knot_count: usize,
    pub offset: f64,
    /// Smallest and largest entry of the target this layer was fitted to.
    pub target_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitTrace {
    pub depths: Vec<DepthTrace>,
    pub chosen_depth: usize,
}

pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, config: &FitConfig) -> Result<CFracModel> {
    fit_traced(x, y, config).map(|(model, _)| model)
}

/// Fits the fraction depth by depth and reports per-depth diagnostics.
pub fn fit_traced(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &FitConfig,
) -> Result<(CFracModel, FitTrace)> {
    config.validate()?;
    let (n, m) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("X has {n} rows, y has {}", y.len())));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 samples, got {n}")));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::InsufficientData(format!("target {i} is not finite")));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InsufficientData(format!(
            "feature value at row {}, column {} is not finite",
            i % n,
            i / n
        )));
    }

    let feature_bounds: Vec<(f64, f64)> = x.column_iter().map(|c| (c.min(), c.max())).collect();
    let active: Vec<usize> = (0..m).filter(|&j| feature_bounds[j].0 < feature_bounds[j].1).collect();
    let rows: Vec<Vec<f64>> = super::model::rows(x).collect();

    let mut target = y / config.norm;
    let linear = LinearModel::fit(x, &target)?;
    let fitted: Vec<f64> = rows.iter().map(|r| linear.eval(r)).collect();
    let mut residuals: Vec<f64> = target.iter().zip(&fitted).map(|(t, g)| t - g).collect();
    let mut offset = compute_offset(&residuals, config.offset_epsilon);

    let mut terms: Vec<Vec<f64>> = vec![fitted];
    let mut layers = vec![DepthLayer {
        model: LayerModel::Linear(linear),
        offset,
    }];
    let mut target_ranges = vec![range(target.as_slice())];
    let mut knot_counts = vec![0];
    let mut knots: Vec<Vec<f64>> = vec![Vec::new(); m];

    for _depth in 1..=config.max_depth {
        // the max only absorbs rounding in `r + offset` for the minimizing sample
        let floor = config.offset_epsilon;
        target = DVector::from_iterator(n, residuals.iter().map(|r| 1.0 / (r + offset).max(floor)));

        for p in select_knots(&residuals, config.knots_per_depth) {
            for &j in &active {
                knots[j].push(x[(p, j)]);
            }
        }
        let mut bases = Vec::with_capacity(active.len());
        for &j in &active {
            let (lo, hi) = feature_bounds[j];
            knots[j] = clean_knots(&knots[j], lo, hi);
            bases.push(VariableBasis {
                variable: j,
                knots: KnotVector::new(knots[j].clone(), lo, hi)?,
            });
        }

        let spline = fit_additive(&rows, &target, &bases, config.lambda)?;
        let fitted: Vec<f64> = rows.iter().map(|r| spline.eval(r)).collect();
        residuals = target.iter().zip(&fitted).map(|(t, g)| t - g).collect();
        offset = compute_offset(&residuals, config.offset_epsilon);

        target_ranges.push(range(target.as_slice()));
        knot_counts.push(spline.knot_count());
        terms.push(fitted);
        layers.push(DepthLayer {
            model: LayerModel::Spline(spline),
            offset,
        });
    }

    let model = CFracModel {
        norm: config.norm,
        layers,
        feature_names: Vec::new(),
        target_name: None,
        feature_bounds,
        training_target_max: y.max(),
        denom_floor: config.denom_floor,
        literal_final_offset: config.literal_final_offset,
    };

    // Training RMSE of every truncation, reusing the per-layer fitted values.
    let y_true = y.as_slice();
    let mut depth_rmse = Vec::with_capacity(model.layers.len());
    for t in 0..model.layers.len() {
        let pred: Vec<f64> = (0..n)
            .map(|i| {
                let row_terms: Vec<f64> = terms[..=t].iter().map(|g| g[i]).collect();
                model.norm * model.combine(&row_terms)
            })
            .collect();
        depth_rmse.push(rmse(y_true, &pred)?);
    }
    if depth_rmse.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("training evaluation is not finite".into()));
    }

    let chosen_depth = if config.auto_depth {
        choose_depth(&depth_rmse)
    } else {
        model.depth()
    };
    let trace = FitTrace {
        depths: (0..model.layers.len())
            .map(|d| DepthTrace {
                depth: d,
                train_rmse: depth_rmse[d],
                knot_count: knot_counts[d],
                offset: model.layers[d].offset,
                target_range: target_ranges[d],
            })
            .collect(),
        chosen_depth,
    };
    Ok((model.truncate(chosen_depth), trace))
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Penalized fit of one additive spline layer. The normal matrix is
/// accumulated from the sparse design rows, so the dense design is never
/// materialized.
fn fit_additive(
    rows: &[Vec<f64>],
    target: &DVector<f64>,
    bases: &[VariableBasis],
    lambda: f64,
) -> Result<AdditiveSplineModel> {
    let p = design_width(bases);
    let mut upper = vec![0.0; p * p];
    let mut rhs = DVector::zeros(p);
    let mut entries = Vec::with_capacity(p.min(1 + 4 * bases.len()));
    for (row, &t) in rows.iter().zip(target.iter()) {
        sparse_row(bases, row, &mut entries);
        for (a, &(ca, va)) in entries.iter().enumerate() {
            rhs[ca] += va * t;
            let base = ca * p;
            for &(cb, vb) in &entries[a..] {
                upper[base + cb] += va * vb;
            }
        }
    }
    let mut normal = DMatrix::from_fn(p, p, |r, c| {
        if r <= c {
            upper[r * p + c]
        } else {
            upper[c * p + r]
        }
    });
    let penalties = bases
        .iter()
        .map(|b| penalty_block(b.knots.basis_count()))
        .collect::<Result<Vec<PenaltyBlock>>>()?;
    add_penalties(&mut normal, lambda, &penalties, 1);
    let coefficients = solve_normal(normal, rhs)?;
    Ok(AdditiveSplineModel {
        bases: bases.to_vec(),
        coefficients,
    })
}

/// Smallest depth after which the error rises; the last depth if it never
/// does.
pub fn choose_depth(rmse_by_depth: &[f64]) -> usize {
    rmse_by_depth
        .windows(2)
        .position(|w| w[1] > w[0])
        .unwrap_or(rmse_by_depth.len().saturating_sub(1))
}

/// Cuts a fitted model at the depth where training RMSE first increases.
pub fn auto_depth_truncate(
    model: &CFracModel,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<CFracModel> {
    let errors = model
        .predict_all_depths(x)?
        .iter()
        .map(|pred| rmse(y.as_slice(), pred))
        .collect::<Result<Vec<f64>>>()?;
    Ok(model.truncate(choose_depth(&errors)))
}
