//! End-to-end discovery: smoothing, normalization, dictionary construction,
//! thresholded regression, and simulation of the result.

use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, DictionarySpec};
use crate::error::{Error, Result};
use crate::model::{FormKind, ModelForm};
use crate::preprocess::{denormalize_model, filter_set, NormalizationRecord};
use crate::regression::{SolverConfig, TrainingData};
use crate::sparsify::{discover, DiscoveredModel, ThresholdMode, Tolerance};
use crate::trajectory::{simulate_reference, Trajectory, TrajectorySet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NormalizationMode {
    #[default]
    Off,
    /// Statistical when dictionary column magnitudes differ by more than 10×.
    Auto,
    Statistical,
    Custom { shift: Vec<f64>, scale: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    /// States, then inputs, then parameters. Defaults to `x1.., u1.., p1..`.
    pub variable_names: Vec<String>,
    pub dictionary: DictionarySpec,
    pub form: FormKind,
    pub mode: ThresholdMode,
    pub normalization: NormalizationMode,
    /// Savitzky–Golay `(window, polyorder)` applied to the states first.
    pub filter: Option<(usize, usize)>,
    pub solver: SolverConfig,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            variable_names: Vec::new(),
            dictionary: DictionarySpec::polynomial(3),
            form: FormKind::Plain,
            mode: ThresholdMode::Fixed { lambda: 5e-2 },
            normalization: NormalizationMode::Off,
            filter: None,
            solver: SolverConfig::default(),
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.loss.validate()?;
        self.solver.optimizer.validate()?;
        match self.mode {
            ThresholdMode::Fixed { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                return Err(Error::Config(format!("lambda must be positive, got {lambda}")))
            }
            ThresholdMode::Iterative { tol: Tolerance::Absolute(t) | Tolerance::RelativeToDense(t) } if !(t > 0.0) => {
                return Err(Error::Config(format!("tolerance must be positive, got {t}")))
            }
            _ => {}
        }
        if let Some((w, o)) = self.filter {
            if w < 3 || w % 2 == 0 || o >= w {
                return Err(Error::Config(format!("filter window {w} must be odd and at least 3, above order {o}")));
            }
        }
        Ok(())
    }

    /// Variable names for data of the given shape.
    pub fn names_for(&self, set: &TrajectorySet) -> Result<Vec<String>> {
        let t = &set.trajectories()[0];
        let q = set.augmented_dim();
        if self.variable_names.is_empty() {
            let mut v: Vec<String> = (1..=t.state_dim()).map(|i| format!("x{i}")).collect();
            v.extend((1..=t.input_dim()).map(|i| format!("u{i}")));
            v.extend((1..=t.param_dim()).map(|i| format!("p{i}")));
            return Ok(v);
        }
        if self.variable_names.len() != q {
            return Err(Error::Config(format!("{} variable names for {q} data columns", self.variable_names.len())));
        }
        Ok(self.variable_names.clone())
    }

    /// The untrained model for data with `n` states over `names`.
    pub fn build_form(&self, names: Vec<String>, n: usize) -> Result<ModelForm> {
        let dict = self.dictionary.build(names)?;
        Ok(match self.form {
            FormKind::Plain => ModelForm::plain(dict, n),
            FormKind::Rational => ModelForm::rational(dict.clone(), &dict, n),
            FormKind::Extended => ModelForm::extended(dict.clone(), dict.clone(), &dict, n),
        })
    }
}

/// Ratio of the largest to the smallest RMS among non-constant dictionary
/// columns over all samples.
pub fn feature_scale_ratio(set: &TrajectorySet, dict: &Dictionary) -> f64 {
    let mut sums = vec![0.0; dict.len()];
    let mut count = 0usize;
    let mut phi = vec![0.0; dict.len()];
    for t in set.iter() {
        for k in 0..t.len() {
            let mut z = t.state(k);
            z.extend(t.input(k));
            z.extend(t.param_values());
            dict.eval_into(&z, &mut phi);
            for (s, v) in sums.iter_mut().zip(&phi) {
                *s += v * v;
            }
            count += 1;
        }
    }
    let rms: Vec<f64> = dict
        .features()
        .iter()
        .zip(&sums)
        .filter(|(f, _)| f.kind != crate::dictionary::FeatureKind::Constant)
        .map(|(_, s)| (s / count.max(1) as f64).sqrt())
        .filter(|v| *v > 0.0)
        .collect();
    let max = rms.iter().copied().fold(0.0, f64::max);
    let min = rms.iter().copied().fold(f64::INFINITY, f64::min);
    if rms.is_empty() {
        1.0
    } else {
        max / min
    }
}

/// Applies smoothing and normalization; returns the data to fit and the
/// record mapping original to fitted coordinates.
pub fn prepare(set: &TrajectorySet, cfg: &DiscoveryConfig) -> Result<(TrajectorySet, NormalizationRecord)> {
    let set = match cfg.filter {
        Some((w, o)) => filter_set(set, w, o)?,
        None => set.clone(),
    };
    let n = set.state_dim();
    let record = match &cfg.normalization {
        NormalizationMode::Off => NormalizationRecord::identity(n),
        NormalizationMode::Statistical => NormalizationRecord::statistical(&set),
        NormalizationMode::Custom { shift, scale } => {
            let r = NormalizationRecord::custom(shift.clone(), scale.clone())?;
            if r.dim() != n {
                return Err(Error::Config(format!("custom normalization has {} entries for {n} states", r.dim())));
            }
            r
        }
        NormalizationMode::Auto => {
            let dict = cfg.dictionary.build(cfg.names_for(&set)?)?;
            let ratio = feature_scale_ratio(&set, &dict);
            if ratio > 10.0 {
                log::info!("dictionary column scales differ by {ratio:.1}x; normalizing");
                NormalizationRecord::statistical(&set)
            } else {
                NormalizationRecord::identity(n)
            }
        }
    };
    let fitted = record.apply_set(&set)?;
    Ok((fitted, record))
}

/// Runs discovery on raw data. The returned form lives in the normalized
/// coordinates given by the record.
pub fn run_discovery(set: &TrajectorySet, cfg: &DiscoveryConfig) -> Result<DiscoveredModel> {
    cfg.validate()?;
    let names = cfg.names_for(set)?;
    let (fitted, record) = prepare(set, cfg)?;
    let data = TrainingData::new(&fitted)?;
    let form = cfg.build_form(names, set.state_dim())?;
    form.validate()?;
    let mut model = discover(&form, &data, &cfg.solver.loss, &cfg.solver.optimizer, cfg.mode)?;
    model.normalization = record;
    model.provenance = serde_json::to_value(cfg)?;
    Ok(model)
}

impl DiscoveredModel {
    /// The model in original coordinates, when its features allow the
    /// change of variables.
    pub fn original_form(&self) -> Result<ModelForm> {
        if self.normalization.is_identity() {
            return Ok(self.form.clone());
        }
        denormalize_model(&self.form, &self.normalization)
    }

    /// Integrates the model from `x0` (original coordinates) over `times`
    /// with auxiliary values `aux`, returning original coordinates.
    pub fn simulate(&self, x0: &[f64], times: &[f64], aux: &[f64], substeps: usize) -> Result<Trajectory> {
        let z0 = self.normalization.apply(x0);
        let form = &self.form;
        let field = |_t: f64, x: &[f64], dx: &mut [f64]| form.eval(x, aux, dx);
        let fitted = simulate_reference(&field, &z0, times, substeps)?;
        let set = self.normalization.invert_set(&TrajectorySet::single(fitted))?;
        Ok(set.trajectories()[0].clone())
    }
}

/// Root-mean-square difference of the states of two equally shaped
/// trajectories.
pub fn trajectory_rmse(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.states().shape() != b.states().shape() {
        return Err(Error::Dimension("trajectories differ in shape".into()));
    }
    let d = a.states() - b.states();
    Ok((d.map(|v| v * v).sum() / d.len() as f64).sqrt())
}
