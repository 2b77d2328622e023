//! Noise injection, Savitzky–Golay smoothing, and affine normalization of
//! data and models.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::model::{CoefficientMatrix, ModelForm, ModelPart, PartRole};
use crate::trajectory::{Trajectory, TrajectorySet};

/// Adds independent `N(0, sigma^2)` noise to every state entry.
pub fn add_gaussian_noise(traj: &Trajectory, sigma: f64, seed: u64) -> Result<Trajectory> {
    let set = add_gaussian_noise_set(&TrajectorySet::single(traj.clone()), sigma, seed)?;
    Ok(set.trajectories()[0].clone())
}

/// Noise for a whole set from one seeded stream, in set order, then time,
/// then state component.
pub fn add_gaussian_noise_set(set: &TrajectorySet, sigma: f64, seed: u64) -> Result<TrajectorySet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(set.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    set.map(|t| {
        let mut states = t.states().clone();
        for k in 0..states.nrows() {
            for j in 0..states.ncols() {
                states[(k, j)] += normal.sample(&mut rng);
            }
        }
        t.with_states(states)
    })
}

fn check_savgol(len: usize, window: usize, polyorder: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::Parameter(format!("filter window must be odd and at least 3, got {window}")));
    }
    if polyorder >= window {
        return Err(Error::Parameter(format!("polyorder {polyorder} must be below window {window}")));
    }
    if window > len {
        return Err(Error::Parameter(format!("filter window {window} exceeds signal length {len}")));
    }
    Ok(())
}

/// Weights that evaluate the `deriv`-th derivative (0 or 1) of the
/// least-squares polynomial fit over `window` samples at `offset` samples
/// from the window center, for unit sample spacing.
pub fn savgol_coefficients(window: usize, polyorder: usize, deriv: usize, offset: f64) -> Result<Vec<f64>> {
    check_savgol(window, window, polyorder)?;
    if deriv > 1 {
        return Err(Error::Parameter("only the value and first derivative are supported".into()));
    }
    let half = (window / 2) as f64;
    let p = polyorder + 1;
    let vander = DMatrix::from_fn(window, p, |i, k| ((i as f64 - half) / half).powi(k as i32));
    let pinv = (vander.transpose() * &vander)
        .try_inverse()
        .ok_or_else(|| Error::Parameter("singular filter design".into()))?
        * vander.transpose();
    let u = offset / half;
    let basis: Vec<f64> = (0..p)
        .map(|k| match deriv {
            0 => u.powi(k as i32),
            _ if k == 0 => 0.0,
            _ => k as f64 * u.powi(k as i32 - 1) / half,
        })
        .collect();
    Ok((0..window).map(|i| (0..p).map(|k| basis[k] * pinv[(k, i)]).sum()).collect())
}

fn savgol_apply(signal: &[f64], window: usize, polyorder: usize, deriv: usize) -> Result<Vec<f64>> {
    check_savgol(signal.len(), window, polyorder)?;
    let m = window / 2;
    let n = signal.len();
    let dot = |w: &[f64], start: usize| w.iter().zip(&signal[start..start + window]).map(|(a, b)| a * b).sum::<f64>();
    let center = savgol_coefficients(window, polyorder, deriv, 0.0)?;
    let mut out = vec![0.0; n];
    for i in m..n - m {
        out[i] = dot(&center, i - m);
    }
    for i in 0..m {
        let w = savgol_coefficients(window, polyorder, deriv, i as f64 - m as f64)?;
        out[i] = dot(&w, 0);
        let w = savgol_coefficients(window, polyorder, deriv, m as f64 - i as f64)?;
        out[n - 1 - i] = dot(&w, n - window);
    }
    Ok(out)
}

/// Savitzky–Golay smoothing; edge samples use the fit of the first or last
/// full window evaluated at their offsets.
pub fn savgol_filter(signal: &[f64], window: usize, polyorder: usize) -> Result<Vec<f64>> {
    savgol_apply(signal, window, polyorder, 0)
}

/// First derivative of the local fit at every sample, for spacing `dt`.
pub fn savgol_derivative(signal: &[f64], window: usize, polyorder: usize, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Parameter("sample spacing must be positive".into()));
    }
    Ok(savgol_apply(signal, window, polyorder, 1)?.into_iter().map(|v| v / dt).collect())
}

/// Smooths every state column.
pub fn filter_trajectory(traj: &Trajectory, window: usize, polyorder: usize) -> Result<Trajectory> {
    let states = traj.states();
    let mut out = states.clone();
    for j in 0..states.ncols() {
        let col: Vec<f64> = states.column(j).iter().copied().collect();
        for (k, v) in savgol_filter(&col, window, polyorder)?.into_iter().enumerate() {
            out[(k, j)] = v;
        }
    }
    traj.with_states(out)
}

pub fn filter_set(set: &TrajectorySet, window: usize, polyorder: usize) -> Result<TrajectorySet> {
    set.map(|t| filter_trajectory(t, window, polyorder))
}

/// Affine change of state variables `x̃ = (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// User-supplied map rather than data statistics.
    pub custom: bool,
}

impl NormalizationRecord {
    pub fn identity(n: usize) -> Self {
        Self { shift: vec![0.0; n], scale: vec![1.0; n], custom: false }
    }

    pub fn custom(shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let r = Self { shift, scale, custom: true };
        r.validate()?;
        Ok(r)
    }

    /// Mean and population standard deviation of each state over all
    /// samples of the set. Constant variables get scale 1.
    pub fn statistical(set: &TrajectorySet) -> Self {
        let n = set.state_dim();
        let count: usize = set.iter().map(Trajectory::len).sum();
        let mut shift = vec![0.0; n];
        for t in set.iter() {
            for (j, s) in shift.iter_mut().enumerate() {
                *s += t.states().column(j).sum();
            }
        }
        shift.iter_mut().for_each(|s| *s /= count as f64);
        let mut var = vec![0.0; n];
        for t in set.iter() {
            for (j, v) in var.iter_mut().enumerate() {
                *v += t.states().column(j).iter().map(|x| (x - shift[j]).powi(2)).sum::<f64>();
            }
        }
        let scale = var
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let sd = (v / count as f64).sqrt();
                if sd > 1e-12 * shift[j].abs().max(1.0) {
                    sd
                } else {
                    log::warn!("state {} has no variance; leaving its scale at 1", j + 1);
                    1.0
                }
            })
            .collect();
        Self { shift, scale, custom: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shift.len() != self.scale.len() {
            return Err(Error::Dimension("shift and scale lengths differ".into()));
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.shift.iter().any(|s| !s.is_finite()) {
            return Err(Error::Parameter("normalization scales must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn is_identity(&self) -> bool {
        self.shift.iter().all(|s| *s == 0.0) && self.scale.iter().all(|s| *s == 1.0)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.shift.iter().zip(&self.scale)).map(|(v, (s, c))| (v - s) / c).collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.shift.iter().zip(&self.scale)).map(|(v, (s, c))| v * c + s).collect()
    }

    fn map_set(&self, set: &TrajectorySet, f: impl Fn(f64, f64, f64) -> f64) -> Result<TrajectorySet> {
        if set.state_dim() != self.dim() {
            return Err(Error::Dimension(format!("record has {} states, data has {}", self.dim(), set.state_dim())));
        }
        set.map(|t| {
            let s = t.states();
            t.with_states(DMatrix::from_fn(s.nrows(), s.ncols(), |k, j| f(s[(k, j)], self.shift[j], self.scale[j])))
        })
    }

    pub fn apply_set(&self, set: &TrajectorySet) -> Result<TrajectorySet> {
        self.map_set(set, |v, s, c| (v - s) / c)
    }

    pub fn invert_set(&self, set: &TrajectorySet) -> Result<TrajectorySet> {
        self.map_set(set, |v, s, c| v * c + s)
    }
}

/// Statistical normalization of a data set.
pub fn normalize(set: &TrajectorySet) -> Result<(TrajectorySet, NormalizationRecord)> {
    let record = NormalizationRecord::statistical(set);
    Ok((record.apply_set(set)?, record))
}

/// Expands `sum_d c_d Φ_d(a ∘ z + b)` into monomials of `z`.
fn substitute(dict: &Dictionary, coefs: &[f64], a: &[f64], b: &[f64]) -> Result<BTreeMap<Vec<u32>, f64>> {
    let mut out: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for (f, &c) in dict.features().iter().zip(coefs) {
        if c == 0.0 {
            continue;
        }
        if !f.is_polynomial() {
            return Err(Error::Parameter(format!(
                "feature {} cannot be re-expanded under an affine change of variables",
                dict.feature_name(dict.index_of(f).unwrap_or(0))
            )));
        }
        let mut terms: Vec<(Vec<u32>, f64)> = vec![(vec![0; a.len()], c)];
        for (i, &e) in f.exponents.iter().enumerate() {
            if e == 0 {
                continue;
            }
            let mut next = Vec::with_capacity(terms.len() * (e as usize + 1));
            for (exps, val) in &terms {
                let mut binom = 1.0;
                for k in 0..=e {
                    let w = binom * a[i].powi(k as i32) * b[i].powi((e - k) as i32);
                    if w != 0.0 {
                        let mut ex = exps.clone();
                        ex[i] += k;
                        next.push((ex, val * w));
                    }
                    binom = binom * (e - k) as f64 / (k + 1) as f64;
                }
            }
            terms = next;
        }
        for (exps, v) in terms {
            *out.entry(exps).or_insert(0.0) += v;
        }
    }
    Ok(out)
}

fn max_degree(dict: &Dictionary) -> u32 {
    dict.features().iter().map(|f| f.degree()).max().unwrap_or(0).max(1)
}

/// Re-expands one part under `z = a ∘ z' + b` and multiplies equation `j`
/// by `out_scale[j]`. Entries that vanish exactly stay inactive.
fn transform_part(part: &ModelPart, a: &[f64], b: &[f64], out_scale: &[f64], constant: bool) -> Result<(ModelPart, Vec<f64>)> {
    let dict = Dictionary::polynomial_named(part.dictionary.variable_names().to_vec(), max_degree(&part.dictionary), constant)?;
    let n = part.coefficients.ncols();
    let mut values = DMatrix::zeros(dict.len(), n);
    let mut constants = vec![0.0; n];
    for j in 0..n {
        let col: Vec<f64> = part.coefficients.values().column(j).iter().copied().collect();
        for (exps, v) in substitute(&part.dictionary, &col, a, b)? {
            if exps.iter().all(|e| *e == 0) && !constant {
                constants[j] += v;
                continue;
            }
            let d = dict.index_of_monomial(&exps).expect("expanded monomial within degree");
            values[(d, j)] += v * out_scale[j];
        }
    }
    Ok((ModelPart::new(dict, CoefficientMatrix::from_sparse(values))?, constants))
}

/// Rewrites `dz/dt = F(z)` for `z = a ∘ z' + b` (states only; auxiliary
/// variables pass through) as `dz'/dt = F(a ∘ z' + b) / a`.
fn change_variables(form: &ModelForm, a_state: &[f64], b_state: &[f64]) -> Result<ModelForm> {
    let n = form.state_dim();
    let q = form.num_vars();
    if a_state.len() != n {
        return Err(Error::Dimension(format!("record has {} states, model has {n}", a_state.len())));
    }
    let mut a = a_state.to_vec();
    let mut b = b_state.to_vec();
    a.resize(q, 1.0);
    b.resize(q, 0.0);
    let inv: Vec<f64> = a_state.iter().map(|v| 1.0 / v).collect();
    let ones = vec![1.0; n];
    let mut parts = Vec::new();
    let mut numerator_index = None;
    let mut denominator_constants = None;
    for (role, p) in form.parts() {
        match role {
            PartRole::Additive => parts.push(transform_part(p, &a, &b, &inv, true)?.0),
            PartRole::Numerator => {
                numerator_index = Some(parts.len());
                parts.push(transform_part(p, &a, &b, &inv, true)?.0);
            }
            PartRole::Denominator => {
                let (part, consts) = transform_part(p, &a, &b, &ones, false)?;
                denominator_constants = Some(consts);
                parts.push(part);
            }
        }
    }
    // The denominator constant 1 + c_j is folded back to exactly 1.
    if let (Some(ni), Some(consts)) = (numerator_index, denominator_constants) {
        for j in 0..n {
            let c = 1.0 + consts[j];
            if c.abs() < 1e-12 {
                return Err(Error::Parameter(format!("denominator of equation {} has no constant term after the change of variables", j + 1)));
            }
            for pi in [ni, ni + 1] {
                let coefs = &mut parts[pi].coefficients;
                for d in 0..coefs.nrows() {
                    if coefs.is_active(d, j) {
                        let v = coefs.get(d, j) / c;
                        coefs.set(d, j, v);
                    }
                }
            }
        }
    }
    ModelForm::from_parts(form.kind(), parts)
}

/// Maps a model identified on normalized data back to original variables.
pub fn denormalize_model(form: &ModelForm, record: &NormalizationRecord) -> Result<ModelForm> {
    record.validate()?;
    let a: Vec<f64> = record.scale.iter().map(|s| 1.0 / s).collect();
    let b: Vec<f64> = record.shift.iter().zip(&record.scale).map(|(s, c)| -s / c).collect();
    change_variables(form, &a, &b)
}

/// Expresses a model in original variables in normalized variables.
pub fn normalize_model(form: &ModelForm, record: &NormalizationRecord) -> Result<ModelForm> {
    record.validate()?;
    change_variables(form, &record.scale, &record.shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::uniform_times;

    #[test]
    fn five_point_quadratic_weights() {
        let w = savgol_coefficients(5, 2, 0, 0.0).unwrap();
        let expected = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn filter_rejects_bad_windows() {
        let s = vec![0.0; 10];
        assert!(savgol_filter(&s, 4, 2).is_err());
        assert!(savgol_filter(&s, 5, 5).is_err());
        assert!(savgol_filter(&s, 11, 2).is_err());
        assert!(savgol_filter(&s, 1, 0).is_err());
    }

    #[test]
    fn derivative_of_cubic_is_exact() {
        let t = uniform_times(0.0, 2.0, 0.05);
        let s: Vec<f64> = t.iter().map(|x| x.powi(3) - x).collect();
        let d = savgol_derivative(&s, 7, 3, 0.05).unwrap();
        for (x, v) in t.iter().zip(d) {
            assert!((v - (3.0 * x * x - 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_noise_is_identity_and_seed_is_deterministic() {
        let traj = Trajectory::from_rows(vec![0.0, 1.0, 2.0], &[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(add_gaussian_noise(&traj, 0.0, 1).unwrap(), traj);
        let a = add_gaussian_noise(&traj, 0.3, 9).unwrap();
        let b = add_gaussian_noise(&traj, 0.3, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, traj);
        assert!(add_gaussian_noise(&traj, -1.0, 0).is_err());
    }

    #[test]
    fn custom_record_rejects_nonpositive_scale() {
        assert!(NormalizationRecord::custom(vec![0.0], vec![0.0]).is_err());
    }
}
