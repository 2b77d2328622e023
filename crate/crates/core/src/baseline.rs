//! Derivative-based baseline: numerical derivative estimates followed by
//! sequential thresholded least squares.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::model::{CoefficientMatrix, FormKind, ModelForm, ModelPart};
use crate::pipeline::{prepare, DiscoveryConfig};
use crate::preprocess::savgol_derivative;
use crate::sparsify::{DiscoveredModel, Method, ParetoPoint};
use crate::trajectory::{Trajectory, TrajectorySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DerivativeMethod {
    CentralDifference,
    SavgolDerivative { window: usize, polyorder: usize },
}

/// Estimated state derivatives at the samples where the method is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeEstimate {
    pub times: Vec<f64>,
    pub values: DMatrix<f64>,
    /// States at the same samples.
    pub states: DMatrix<f64>,
    /// Inputs then parameters at the same samples.
    pub aux: DMatrix<f64>,
    pub method: DerivativeMethod,
}

impl DerivativeEstimate {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn stack(parts: Vec<DerivativeEstimate>) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
        let (n, a, method) = (first.values.ncols(), first.aux.ncols(), first.method);
        let rows: usize = parts.iter().map(DerivativeEstimate::len).sum();
        let mut out = Self {
            times: Vec::with_capacity(rows),
            values: DMatrix::zeros(rows, n),
            states: DMatrix::zeros(rows, n),
            aux: DMatrix::zeros(rows, a),
            method,
        };
        let mut r = 0;
        for p in parts {
            let k = p.len();
            out.values.view_mut((r, 0), (k, n)).copy_from(&p.values);
            out.states.view_mut((r, 0), (k, n)).copy_from(&p.states);
            out.aux.view_mut((r, 0), (k, a)).copy_from(&p.aux);
            out.times.extend(p.times);
            r += k;
        }
        Ok(out)
    }
}

fn aux_row(traj: &Trajectory, k: usize) -> Vec<f64> {
    let mut v = traj.input(k);
    v.extend(traj.param_values());
    v
}

pub fn estimate_derivatives(traj: &Trajectory, method: DerivativeMethod) -> Result<DerivativeEstimate> {
    let n = traj.state_dim();
    let a = traj.input_dim() + traj.param_dim();
    let t = traj.times();
    let x = traj.states();
    let rows: Vec<usize>;
    let values = match method {
        DerivativeMethod::CentralDifference => {
            if traj.len() < 3 {
                return Err(Error::InsufficientData(format!(
                    "central differences need 3 samples, got {}",
                    traj.len()
                )));
            }
            rows = (1..traj.len() - 1).collect();
            DMatrix::from_fn(rows.len(), n, |r, j| {
                let k = rows[r];
                (x[(k + 1, j)] - x[(k - 1, j)]) / (t[k + 1] - t[k - 1])
            })
        }
        DerivativeMethod::SavgolDerivative { window, polyorder } => {
            if traj.len() < window {
                return Err(Error::InsufficientData(format!(
                    "filter window {window} exceeds {} samples",
                    traj.len()
                )));
            }
            let steps = traj.steps();
            let dt = steps[0];
            if steps.iter().any(|h| (h - dt).abs() > 1e-9 * dt.max(1.0)) {
                return Err(Error::InvalidTrajectory("filter derivatives need uniform sampling".into()));
            }
            let half = window / 2;
            rows = (half..traj.len() - half).collect();
            let mut out = DMatrix::zeros(rows.len(), n);
            for j in 0..n {
                let col: Vec<f64> = x.column(j).iter().copied().collect();
                let d = savgol_derivative(&col, window, polyorder, dt)?;
                for (r, &k) in rows.iter().enumerate() {
                    out[(r, j)] = d[k];
                }
            }
            out
        }
    };
    Ok(DerivativeEstimate {
        times: rows.iter().map(|&k| t[k]).collect(),
        states: DMatrix::from_fn(rows.len(), n, |r, j| x[(rows[r], j)]),
        aux: DMatrix::from_fn(rows.len(), a, |r, j| aux_row(traj, rows[r])[j]),
        values,
        method,
    })
}

pub fn estimate_derivatives_set(set: &TrajectorySet, method: DerivativeMethod) -> Result<DerivativeEstimate> {
    DerivativeEstimate::stack(set.iter().map(|t| estimate_derivatives(t, method)).collect::<Result<_>>()?)
}

const RIDGE: f64 = 1e-10;

/// Least squares on the given columns; ridge-regularised with a warning
/// when the columns are numerically dependent.
fn solve_active(a: &DMatrix<f64>, b: &DVector<f64>, warnings: &mut Vec<String>, column: usize) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if a.nrows() < a.ncols() || !(min > 1e-12 * max) {
        warnings.push(format!("rank-deficient active set in equation {}; solved with ridge {RIDGE:e}", column + 1));
        let mut normal = a.transpose() * a;
        for i in 0..normal.nrows() {
            normal[(i, i)] += RIDGE;
        }
        let rhs = a.transpose() * b;
        return normal.clone().cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| DVector::zeros(a.ncols()));
    }
    a.clone().svd(true, true).solve(b, 0.0).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Sequential thresholded least squares: solve on the active set, drop
/// entries below `lambda`, repeat until the support stops changing or
/// `max_iter` passes. Returns the coefficients and any warnings.
pub fn stlsq(features: &DMatrix<f64>, derivatives: &DMatrix<f64>, lambda: f64, max_iter: usize) -> Result<(CoefficientMatrix, Vec<String>)> {
    if features.nrows() != derivatives.nrows() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} derivative rows",
            features.nrows(),
            derivatives.nrows()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config("lambda must be non-negative".into()));
    }
    let d = features.ncols();
    let columns: Vec<(Vec<f64>, Vec<bool>, Vec<String>)> = (0..derivatives.ncols())
        .into_par_iter()
        .map(|j| {
            let b = derivatives.column(j).into_owned();
            let mut active: Vec<usize> = (0..d).collect();
            let mut theta = vec![0.0; d];
            let mut warnings = Vec::new();
            for _ in 0..max_iter.max(1) {
                let sol = solve_active(&features.select_columns(&active), &b, &mut warnings, j);
                theta.fill(0.0);
                for (c, &k) in active.iter().enumerate() {
                    theta[k] = sol[c];
                }
                let keep: Vec<usize> = active.iter().copied().filter(|&k| theta[k].abs() >= lambda).collect();
                if keep.len() == active.len() {
                    break;
                }
                for &k in &active {
                    if theta[k].abs() < lambda {
                        theta[k] = 0.0;
                    }
                }
                active = keep;
            }
            let mask = (0..d).map(|k| active.contains(&k)).collect();
            warnings.dedup();
            (theta, mask, warnings)
        })
        .collect();
    let values = DMatrix::from_fn(d, columns.len(), |i, j| columns[j].0[i]);
    let mask = DMatrix::from_fn(d, columns.len(), |i, j| columns[j].1[i]);
    let warnings = columns.into_iter().flat_map(|c| c.2).collect();
    Ok((CoefficientMatrix::with_mask(values, mask)?, warnings))
}

/// Baseline settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub derivative: DerivativeMethod,
    pub lambda: f64,
    pub max_iter: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { derivative: DerivativeMethod::CentralDifference, lambda: 5e-2, max_iter: 20 }
    }
}

/// Runs the baseline with the same smoothing, normalization and dictionary
/// as `cfg`. Only the plain form is supported.
pub fn std_sindy_discover(set: &TrajectorySet, cfg: &DiscoveryConfig, baseline: &BaselineConfig) -> Result<DiscoveredModel> {
    if cfg.form != FormKind::Plain {
        return Err(Error::Config("the baseline supports only the plain model form".into()));
    }
    let names = cfg.names_for(set)?;
    let (fitted, record) = prepare(set, cfg)?;
    let est = estimate_derivatives_set(&fitted, baseline.derivative)?;
    let dict: Dictionary = cfg.dictionary.build(names)?;
    if dict.eta().len() > 0 {
        return Err(Error::Config("the baseline cannot fit trainable feature scales".into()));
    }
    let n = set.state_dim();
    let mut features = DMatrix::zeros(est.len(), dict.len());
    let mut phi = vec![0.0; dict.len()];
    for r in 0..est.len() {
        let mut z: Vec<f64> = est.states.row(r).iter().copied().collect();
        z.extend(est.aux.row(r).iter());
        dict.eval_into(&z, &mut phi);
        for (c, v) in phi.iter().enumerate() {
            features[(r, c)] = *v;
        }
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature { feature: "baseline dictionary".into() });
    }
    let (coefficients, warnings) = stlsq(&features, &est.values, baseline.lambda, baseline.max_iter)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let form = ModelForm::from_parts(FormKind::Plain, vec![ModelPart::new(dict, coefficients)?])?;
    let residual = {
        let pred = &features * form.parts()[0].1.coefficients.values();
        (pred - &est.values).map(|v| v * v).sum() / (est.len() * n) as f64
    };
    Ok(DiscoveredModel {
        method: Method::StdSindy,
        pareto: vec![ParetoPoint { nonzero_count: form.active_count(), loss: residual, snapshot: form.clone() }],
        selected_index: Some(0),
        form,
        normalization: record,
        loss: residual,
        warnings,
        provenance: serde_json::json!({ "discovery": cfg, "baseline": baseline }),
    })
}
