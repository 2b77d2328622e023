//! Sequential thresholding drivers, Pareto history and degree assessment.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::model::ModelForm;
use crate::preprocess::NormalizationRecord;
use crate::regression::{data_loss, fit, optimize, LossConfig, OptimizerConfig, TrainingData};

/// One state of the thresholding loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub nonzero_count: usize,
    /// Data-fidelity loss (no l1 term).
    pub loss: f64,
    pub snapshot: ModelForm,
}

impl ParetoPoint {
    fn new(form: &ModelForm, data: &TrainingData, cfg: &LossConfig) -> Result<Self> {
        Ok(Self { nonzero_count: form.active_count(), loss: data_loss(form, data, cfg)?, snapshot: form.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rk-sindy")]
    RkSindy,
    #[serde(rename = "std-sindy")]
    StdSindy,
}

/// Fidelity tolerance for iterative thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    Absolute(f64),
    /// Multiple of the dense model's data loss.
    RelativeToDense(f64),
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::RelativeToDense(10.0)
    }
}

impl Tolerance {
    pub fn resolve(self, dense_loss: f64) -> f64 {
        match self {
            Self::Absolute(t) => t,
            Self::RelativeToDense(f) => f * dense_loss,
        }
    }

    fn validate(self) -> Result<()> {
        let v = match self {
            Self::Absolute(t) | Self::RelativeToDense(t) => t,
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("tolerance must be positive, got {v}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ThresholdMode {
    Fixed { lambda: f64 },
    Iterative { tol: Tolerance },
}

/// Result of a discovery run, in the coordinates the data was fitted in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredModel {
    pub method: Method,
    pub form: ModelForm,
    /// Map from original to fitted coordinates.
    pub normalization: NormalizationRecord,
    pub pareto: Vec<ParetoPoint>,
    pub selected_index: Option<usize>,
    /// Data loss of the returned form.
    pub loss: f64,
    pub warnings: Vec<String>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl DiscoveredModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.form.validate()?;
        if let Some(i) = m.selected_index {
            if i >= m.pareto.len() {
                return Err(Error::Parameter(format!("selected index {i} outside Pareto history")));
            }
        }
        Ok(m)
    }

    /// `nonzero_count,loss` rows of the Pareto history.
    pub fn pareto_csv(&self) -> String {
        let mut out = String::from("nonzero_count,loss\n");
        for p in &self.pareto {
            let _ = writeln!(out, "{},{:e}", p.nonzero_count, p.loss);
        }
        out
    }
}

fn model(form: ModelForm, pareto: Vec<ParetoPoint>, selected: Option<usize>, warnings: Vec<String>) -> DiscoveredModel {
    let loss = selected.map_or(f64::NAN, |i| pareto[i].loss);
    DiscoveredModel {
        method: Method::RkSindy,
        normalization: NormalizationRecord::identity(form.state_dim()),
        form,
        pareto,
        selected_index: selected,
        loss,
        warnings,
        provenance: serde_json::Value::Null,
    }
}

fn coefficient_magnitudes(form: &ModelForm) -> Vec<(usize, usize, usize, f64)> {
    form.parts()
        .iter()
        .enumerate()
        .flat_map(|(pi, (_, p))| {
            p.coefficients.active_entries().into_iter().map(move |(d, j)| (pi, d, j, p.coefficients.get(d, j).abs()))
        })
        .collect()
}

fn deactivate(form: &mut ModelForm, entries: &[(usize, usize, usize, f64)]) {
    let mut parts = form.parts_mut();
    for &(pi, d, j, _) in entries {
        parts[pi].1.coefficients.deactivate(d, j);
    }
}

/// Fixed-cutoff thresholding: solve, mask every active coefficient below
/// `lambda`, re-solve from the survivors, until nothing falls below.
pub fn fixed_cutoff_discover(
    form: &ModelForm,
    data: &TrainingData,
    cfg: &LossConfig,
    opt: &OptimizerConfig,
    lambda: f64,
) -> Result<DiscoveredModel> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let mut current = fit(form, data, cfg, opt)?.form;
    let mut pareto = vec![ParetoPoint::new(&current, data, cfg)?];
    let mut warnings = Vec::new();
    loop {
        let small: Vec<_> = coefficient_magnitudes(&current).into_iter().filter(|e| e.3 < lambda).collect();
        if small.is_empty() {
            break;
        }
        deactivate(&mut current, &small);
        log::info!("masked {} coefficients below {lambda}, {} remain", small.len(), current.active_count());
        if current.active_count() == 0 {
            warnings.push("all coefficients fell below the cutoff; returning the zero model".to_string());
            log::warn!("{}", warnings.last().unwrap());
            pareto.push(ParetoPoint::new(&current, data, cfg)?);
            break;
        }
        current = optimize(&current, data, cfg, opt)?.form;
        pareto.push(ParetoPoint::new(&current, data, cfg)?);
    }
    let last = pareto.len() - 1;
    Ok(model(current, pareto, Some(last), warnings))
}

/// Iterative-cutoff thresholding: repeatedly mask the smallest-magnitude
/// coefficients (all ties at once) and re-solve while the data loss stays
/// within tolerance; selects the sparsest point within tolerance.
pub fn iterative_cutoff_discover(
    form: &ModelForm,
    data: &TrainingData,
    cfg: &LossConfig,
    opt: &OptimizerConfig,
    tol: Tolerance,
) -> Result<DiscoveredModel> {
    tol.validate()?;
    let mut current = fit(form, data, cfg, opt)?.form;
    let mut pareto = vec![ParetoPoint::new(&current, data, cfg)?];
    let threshold = tol.resolve(pareto[0].loss);
    let mut warnings = Vec::new();
    while pareto.last().unwrap().loss <= threshold && current.active_count() > 0 {
        let mags = coefficient_magnitudes(&current);
        let min = mags.iter().map(|e| e.3).fold(f64::INFINITY, f64::min);
        let ties: Vec<_> = mags.into_iter().filter(|e| e.3 == min).collect();
        deactivate(&mut current, &ties);
        if current.active_count() > 0 {
            current = optimize(&current, data, cfg, opt)?.form;
        }
        let point = ParetoPoint::new(&current, data, cfg)?;
        log::info!("{} active, loss {:e}", point.nonzero_count, point.loss);
        pareto.push(point);
    }
    let selected = pareto
        .iter()
        .enumerate()
        .filter(|(_, p)| p.loss <= threshold)
        .min_by_key(|(i, p)| (p.nonzero_count, *i))
        .map(|(i, _)| i);
    let selected = match selected {
        Some(i) => i,
        None => {
            warnings.push(format!("dense model loss {:e} exceeds tolerance {threshold:e}", pareto[0].loss));
            0
        }
    };
    let form = pareto[selected].snapshot.clone();
    Ok(model(form, pareto, Some(selected), warnings))
}

pub fn discover(
    form: &ModelForm,
    data: &TrainingData,
    cfg: &LossConfig,
    opt: &OptimizerConfig,
    mode: ThresholdMode,
) -> Result<DiscoveredModel> {
    match mode {
        ThresholdMode::Fixed { lambda } => fixed_cutoff_discover(form, data, cfg, opt, lambda),
        ThresholdMode::Iterative { tol } => iterative_cutoff_discover(form, data, cfg, opt, tol),
    }
}

/// Dense polynomial fits of degree `1..=max_degree` over the augmented
/// variables; returns `(degree, data loss)`.
pub fn degree_assessment(
    data: &TrainingData,
    variable_names: &[String],
    max_degree: u32,
    cfg: &LossConfig,
    opt: &OptimizerConfig,
) -> Result<Vec<(u32, f64)>> {
    if max_degree == 0 {
        return Err(Error::Config("max_degree must be at least 1".into()));
    }
    let n = data.state_dim();
    (1..=max_degree)
        .into_par_iter()
        .map(|d| {
            let dict = Dictionary::polynomial_named(variable_names.to_vec(), d, true)?;
            let res = fit(&ModelForm::plain(dict, n), data, cfg, opt)?;
            Ok((d, data_loss(&res.form, data, cfg)?))
        })
        .collect()
}

/// CSV for [`degree_assessment`] output.
pub fn degree_csv(rows: &[(u32, f64)]) -> String {
    let mut out = String::from("degree,loss\n");
    for (d, l) in rows {
        let _ = writeln!(out, "{d},{l:e}");
    }
    out
}
