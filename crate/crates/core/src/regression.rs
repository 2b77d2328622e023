//! One-step RK4 prediction loss, its exact gradient, and the Adam solver.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelSettings, RowSums};
use crate::model::{ModelForm, PartRole};
use crate::rk4::{build_pairs_set, Direction, PredictionPair, Rk4Weights};
use crate::trajectory::TrajectorySet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub l1_weight: f64,
    pub use_backward: bool,
    /// Weight of the backward mean when `use_backward` is set; the forward
    /// mean gets `1 - backward_weight`.
    pub backward_weight: f64,
    pub denominator_floor: f64,
    /// Per-component residual charged to a pair whose stages are undefined.
    pub penalty_value: f64,
    pub rk4_weights: Rk4Weights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            l1_weight: 0.0,
            use_backward: false,
            backward_weight: 0.5,
            denominator_floor: 1e-3,
            penalty_value: 1e6,
            rk4_weights: Rk4Weights::Classical,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l1_weight >= 0.0) {
            return Err(Error::Config("l1_weight must be non-negative".into()));
        }
        if !(self.denominator_floor > 0.0) {
            return Err(Error::Config("denominator_floor must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.backward_weight) {
            return Err(Error::Config("backward_weight must lie in [0, 1]".into()));
        }
        if !(self.penalty_value.is_finite() && self.penalty_value > 0.0) {
            return Err(Error::Config("penalty_value must be positive and finite".into()));
        }
        Ok(())
    }

    fn settings(&self) -> KernelSettings {
        KernelSettings {
            weights: self.rk4_weights,
            denominator_floor: self.denominator_floor,
            penalty_value: self.penalty_value,
        }
    }
}

/// Forward and backward prediction pairs of a data set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub forward: PredictionPair,
    pub backward: PredictionPair,
}

impl TrainingData {
    pub fn new(set: &TrajectorySet) -> Result<Self> {
        Ok(Self {
            forward: build_pairs_set(set, Direction::Forward)?,
            backward: build_pairs_set(set, Direction::Backward)?,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.forward.state_dim()
    }

    pub fn aux_dim(&self) -> usize {
        self.forward.aux_dim()
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }
}

/// Loss split into its terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub data: f64,
    pub l1: f64,
    /// Number of pairs charged the penalty value.
    pub penalized: usize,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.data + self.l1
    }
}

fn check_dims(form: &ModelForm, data: &TrainingData) -> Result<()> {
    let n = data.state_dim();
    if form.state_dim() != n {
        return Err(Error::Dimension(format!("model has {} states, data has {n}", form.state_dim())));
    }
    if form.num_vars() != n + data.aux_dim() {
        return Err(Error::Dimension(format!(
            "dictionary takes {} variables, data provides {}",
            form.num_vars(),
            n + data.aux_dim()
        )));
    }
    if data.is_empty() {
        return Err(Error::InsufficientData("no prediction pairs".into()));
    }
    Ok(())
}

/// Rows to use from each direction; `None` means all.
struct Batch<'a> {
    forward: Option<&'a [usize]>,
    backward: Option<&'a [usize]>,
}

const FULL: Batch<'static> = Batch { forward: None, backward: None };

struct Evaluation {
    breakdown: LossBreakdown,
    gradient: Option<Vec<f64>>,
}

fn evaluate(form: &ModelForm, data: &TrainingData, cfg: &LossConfig, batch: &Batch, with_gradient: bool) -> Result<Evaluation> {
    check_dims(form, data)?;
    cfg.validate()?;
    let kernel = Kernel::new(form, cfg.settings());
    let n = data.state_dim() as f64;
    let mut directions: Vec<(&PredictionPair, Option<&[usize]>, f64)> = Vec::with_capacity(2);
    if cfg.use_backward {
        directions.push((&data.forward, batch.forward, 1.0 - cfg.backward_weight));
        directions.push((&data.backward, batch.backward, cfg.backward_weight));
    } else {
        directions.push((&data.forward, batch.forward, 1.0));
    }

    let mut data_loss = 0.0;
    let mut penalized = 0;
    let mut total: Option<RowSums> = None;
    for (pair, rows, weight) in directions {
        if weight == 0.0 {
            continue;
        }
        let count = rows.map_or(pair.len(), <[usize]>::len) as f64;
        let scale = weight / (count * n);
        let sums = kernel.sums(pair, rows, with_gradient.then_some(scale));
        data_loss += scale * sums.loss;
        penalized += sums.penalized;
        match total.as_mut() {
            None => total = Some(sums),
            Some(t) => t.add(&sums),
        }
    }
    let l1 = cfg.l1_weight * form.l1_norm();
    let gradient = if with_gradient {
        let sums = total.expect("at least one direction");
        Some(pack_gradient(form, &sums, cfg.l1_weight)?)
    } else {
        None
    };
    Ok(Evaluation { breakdown: LossBreakdown { data: data_loss, l1, penalized }, gradient })
}

fn pack_gradient(form: &ModelForm, sums: &RowSums, l1_weight: f64) -> Result<Vec<f64>> {
    let n = form.state_dim();
    let parts = form.parts();
    let mut out = Vec::with_capacity(form.num_trainable());
    for (pi, (_, p)) in parts.iter().enumerate() {
        for (d, j) in p.coefficients.active_entries() {
            let theta = p.coefficients.get(d, j);
            let sign = if theta > 0.0 {
                1.0
            } else if theta < 0.0 {
                -1.0
            } else {
                0.0
            };
            out.push(sums.theta[pi][d * n + j] + l1_weight * sign);
        }
    }
    for pi in 0..parts.len() {
        out.extend_from_slice(&sums.eta[pi]);
    }
    if let Some(index) = out.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    Ok(out)
}

/// Data term plus l1 penalty, split.
pub fn loss_breakdown(form: &ModelForm, data: &TrainingData, cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(evaluate(form, data, cfg, &FULL, false)?.breakdown)
}

/// Mean squared one-step prediction residual plus the l1 penalty.
pub fn loss(form: &ModelForm, data: &TrainingData, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_breakdown(form, data, cfg)?.total())
}

/// Mean squared residual alone (data fidelity).
pub fn data_loss(form: &ModelForm, data: &TrainingData, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_breakdown(form, data, cfg)?.data)
}

/// Gradient over the packed trainable values (see [`ModelForm::pack`]).
pub fn gradient(form: &ModelForm, data: &TrainingData, cfg: &LossConfig) -> Result<Vec<f64>> {
    Ok(loss_and_gradient(form, data, cfg)?.1)
}

pub fn loss_and_gradient(form: &ModelForm, data: &TrainingData, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    let e = evaluate(form, data, cfg, &FULL, true)?;
    Ok((e.breakdown.total(), e.gradient.expect("gradient requested")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Iterations over which the relative improvement is measured.
    pub window: usize,
    /// Step-size cuts by `lr_decay` applied on a plateau before stopping.
    pub lr_reductions: usize,
    pub lr_decay: f64,
    pub seed: u64,
    /// Rows per direction per step; full batch when unset.
    pub batch_size: Option<usize>,
    /// Least-squares initialisation before the first solve.
    pub warm_start: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_iters: 10_000,
            rel_tol: 1e-10,
            window: 50,
            lr_reductions: 3,
            lr_decay: 0.1,
            seed: 0,
            batch_size: None,
            warm_start: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("moment decays must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.rel_tol >= 0.0) {
            return Err(Error::Config("eps must be positive and rel_tol non-negative".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1)".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Optimizer settings together with the loss settings, as read from a
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SolverConfig {
    #[serde(flatten)]
    pub optimizer: OptimizerConfig,
    #[serde(flatten)]
    pub loss: LossConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub form: ModelForm,
    /// Full-batch loss at the returned point.
    pub loss: f64,
    pub iterations: usize,
    /// True when stopped by the plateau rule rather than `max_iters`.
    pub converged: bool,
}

const DIVERGENCE_LOSS: f64 = 1e12;

/// Adam on the packed trainable values; returns the best point seen.
pub fn optimize(form: &ModelForm, data: &TrainingData, cfg: &LossConfig, opt: &OptimizerConfig) -> Result<OptimizeResult> {
    opt.validate()?;
    check_dims(form, data)?;
    let mut current = form.clone();
    let mut x = current.pack();
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("initial value {index} is not finite")));
    }
    let dim = x.len();
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let batch_rows = |rng: &mut ChaCha8Rng, len: usize| -> Option<Vec<usize>> {
        opt.batch_size.filter(|&b| b < len).map(|b| {
            let mut rows = sample(rng, len, b).into_vec();
            rows.sort_unstable();
            rows
        })
    };

    let mut best_x = x.clone();
    let mut best_loss = f64::INFINITY;
    let mut history: Vec<f64> = Vec::with_capacity(opt.max_iters.min(100_000) + 1);
    let mut lr = opt.lr;
    let mut reductions = 0;
    let mut plateau_start = 0;
    let mut t = 0usize;
    let mut iterations = 0;
    let mut converged = false;

    for it in 0..=opt.max_iters {
        current.unpack(&x)?;
        let fwd = batch_rows(&mut rng, data.forward.len());
        let bwd = if cfg.use_backward { batch_rows(&mut rng, data.backward.len()) } else { None };
        let batch = Batch { forward: fwd.as_deref(), backward: bwd.as_deref() };
        let want_grad = it < opt.max_iters;
        let e = evaluate(&current, data, cfg, &batch, want_grad)?;
        let loss_now = if fwd.is_some() || bwd.is_some() {
            evaluate(&current, data, cfg, &FULL, false)?.breakdown.total()
        } else {
            e.breakdown.total()
        };
        if !loss_now.is_finite() || loss_now > DIVERGENCE_LOSS {
            return Err(Error::OptimizerDivergence { iteration: it, loss: loss_now, last_finite: best_x });
        }
        if loss_now < best_loss {
            best_loss = loss_now;
            best_x.clone_from(&x);
        }
        history.push(best_loss);
        iterations = it;

        let since = history.len() - 1 - plateau_start;
        if since >= opt.window {
            let old = history[history.len() - 1 - opt.window];
            if old - best_loss <= opt.rel_tol * old {
                if reductions < opt.lr_reductions {
                    reductions += 1;
                    lr *= opt.lr_decay;
                    plateau_start = history.len() - 1;
                    x.clone_from(&best_x);
                    m.fill(0.0);
                    v.fill(0.0);
                    t = 0;
                    log::debug!("plateau at iteration {it}, step size now {lr:e}");
                    continue;
                }
                converged = true;
                break;
            }
        }
        let Some(g) = e.gradient else { break };
        t += 1;
        let b1t = 1.0 - opt.beta1.powi(t as i32);
        let b2t = 1.0 - opt.beta2.powi(t as i32);
        for i in 0..dim {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            let mh = m[i] / b1t;
            let vh = v[i] / b2t;
            x[i] -= lr * mh / (vh.sqrt() + opt.eps);
        }
    }
    current.unpack(&best_x)?;
    log::debug!("optimizer stopped after {iterations} iterations, loss {best_loss:e}");
    Ok(OptimizeResult { form: current, loss: best_loss, iterations, converged })
}

const WARM_START_RIDGE: f64 = 1e-8;

/// Column-scaled ridge least squares `min |A x - b|^2 + ridge |x|^2` on the
/// scaled problem.
pub(crate) fn ridge_solve(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    let cols = a.ncols();
    if cols == 0 {
        return Some(DVector::zeros(0));
    }
    let norms: Vec<f64> = (0..cols)
        .map(|j| {
            let s = a.column(j).norm();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(a.nrows(), cols, |i, j| a[(i, j)] / norms[j]);
    let mut normal = scaled.transpose() * &scaled;
    for j in 0..cols {
        normal[(j, j)] += ridge;
    }
    let rhs = scaled.transpose() * b;
    let sol = match normal.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => normal.svd(true, true).solve(&rhs, 1e-14).ok()?,
    };
    let out = DVector::from_fn(cols, |j, _| sol[j] / norms[j]);
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Secant derivative estimates at step midpoints: `(midpoints, aux, slopes)`.
fn secants(pair: &PredictionPair) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let rows = pair.len();
    let n = pair.state_dim();
    let mid = DMatrix::from_fn(rows, n, |k, j| 0.5 * (pair.sources[(k, j)] + pair.targets[(k, j)]));
    let slope = DMatrix::from_fn(rows, n, |k, j| (pair.targets[(k, j)] - pair.sources[(k, j)]) / pair.steps[k]);
    (mid, pair.aux_mid.clone(), slope)
}

/// Initialises the active coefficients by least squares on finite-difference
/// derivative estimates. η values are left as they are.
pub fn warm_start(form: &ModelForm, data: &TrainingData) -> Result<ModelForm> {
    check_dims(form, data)?;
    let (mid, aux, slope) = secants(&data.forward);
    let rows = mid.nrows();
    let n = form.state_dim();
    let z_row = |k: usize| -> Vec<f64> {
        let mut z: Vec<f64> = mid.row(k).iter().copied().collect();
        z.extend(aux.row(k).iter());
        z
    };
    let features = |part: &crate::model::ModelPart| -> DMatrix<f64> {
        let d = part.dictionary.len();
        let mut phi = DMatrix::zeros(rows, d);
        let mut buf = vec![0.0; d];
        for k in 0..rows {
            part.dictionary.eval_into(&z_row(k), &mut buf);
            for (c, v) in buf.iter().enumerate() {
                phi[(k, c)] = *v;
            }
        }
        phi
    };
    let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
    let mut out = form.clone();
    {
        let mut parts = out.parts_mut();
        let has_numerator = parts.iter().any(|(r, _)| *r == PartRole::Numerator);
        let has_additive = parts.iter().any(|(r, _)| *r == PartRole::Additive);
        if has_additive {
            let part = &mut parts.iter_mut().find(|(r, _)| *r == PartRole::Additive).unwrap().1;
            let phi = features(part);
            if !finite(&phi) {
                log::warn!("warm start skipped: non-finite features");
                return Ok(form.clone());
            }
            for j in 0..n {
                let active: Vec<usize> = (0..phi.ncols()).filter(|&d| part.coefficients.is_active(d, j)).collect();
                let a = phi.select_columns(&active);
                let b = slope.column(j).into_owned();
                if let Some(sol) = ridge_solve(&a, &b, WARM_START_RIDGE) {
                    for (c, &d) in active.iter().enumerate() {
                        part.coefficients.set(d, j, sol[c]);
                    }
                }
            }
        }
        if has_numerator && !has_additive {
            let idx_g = parts.iter().position(|(r, _)| *r == PartRole::Numerator).unwrap();
            let idx_h = parts.iter().position(|(r, _)| *r == PartRole::Denominator).unwrap();
            let phi_g = features(parts[idx_g].1);
            let phi_h = features(parts[idx_h].1);
            if !finite(&phi_g) || !finite(&phi_h) {
                log::warn!("warm start skipped: non-finite features");
                return Ok(form.clone());
            }
            for j in 0..n {
                let ag: Vec<usize> = (0..phi_g.ncols()).filter(|&d| parts[idx_g].1.coefficients.is_active(d, j)).collect();
                let ah: Vec<usize> = (0..phi_h.ncols()).filter(|&d| parts[idx_h].1.coefficients.is_active(d, j)).collect();
                let a = DMatrix::from_fn(rows, ag.len() + ah.len(), |k, c| {
                    if c < ag.len() {
                        phi_g[(k, ag[c])]
                    } else {
                        -slope[(k, j)] * phi_h[(k, ah[c - ag.len()])]
                    }
                });
                let b = slope.column(j).into_owned();
                if let Some(sol) = ridge_solve(&a, &b, WARM_START_RIDGE) {
                    for (c, &d) in ag.iter().enumerate() {
                        parts[idx_g].1.coefficients.set(d, j, sol[c]);
                    }
                    for (c, &d) in ah.iter().enumerate() {
                        parts[idx_h].1.coefficients.set(d, j, sol[ag.len() + c]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Warm start (when enabled) followed by [`optimize`].
pub fn fit(form: &ModelForm, data: &TrainingData, cfg: &LossConfig, opt: &OptimizerConfig) -> Result<OptimizeResult> {
    let start = if opt.warm_start { warm_start(form, data)? } else { form.clone() };
    // A warm start that lands on a pole is worse than no warm start.
    let start = if opt.warm_start && loss_breakdown(&start, data, cfg)?.penalized > 0 { form.clone() } else { start };
    optimize(&start, data, cfg, opt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Dictionary;
    use crate::model::CoefficientMatrix;
    use crate::trajectory::{simulate_reference, uniform_times};

    fn oscillator(x: &[f64], dx: &mut [f64]) {
        dx[0] = -0.1 * x[0] + 2.0 * x[1];
        dx[1] = -2.0 * x[0] - 0.1 * x[1];
    }

    fn oscillator_data(dt: f64, t_final: f64, substeps: usize) -> TrainingData {
        let times = uniform_times(0.0, t_final, dt);
        let traj = simulate_reference(&|_t: f64, x: &[f64], dx: &mut [f64]| oscillator(x, dx), &[2.0, 0.0], &times, substeps).unwrap();
        TrainingData::new(&TrajectorySet::single(traj)).unwrap()
    }

    fn true_linear(degree: u32) -> ModelForm {
        let dict = Dictionary::polynomial(2, degree, true).unwrap();
        let mut vals = DMatrix::zeros(dict.len(), 2);
        let x = dict.index_of_monomial(&[1, 0]).unwrap();
        let y = dict.index_of_monomial(&[0, 1]).unwrap();
        vals[(x, 0)] = -0.1;
        vals[(y, 0)] = 2.0;
        vals[(x, 1)] = -2.0;
        vals[(y, 1)] = -0.1;
        let mut form = ModelForm::plain(dict, 2);
        if let ModelForm::Plain { field } = &mut form {
            field.coefficients = CoefficientMatrix::from_values(vals);
        }
        form
    }

    #[test]
    fn true_model_has_zero_loss_on_single_substep_data() {
        let data = oscillator_data(0.1, 5.0, 1);
        let form = true_linear(2);
        let cfg = LossConfig::default();
        assert!(loss(&form, &data, &cfg).unwrap() < 1e-20);
        let back = LossConfig { use_backward: true, ..cfg };
        // Backward steps of an RK4 map are not its exact inverse.
        assert!(loss(&form, &data, &back).unwrap() > 0.0);
    }

    #[test]
    fn l1_term_adds_sum_of_magnitudes() {
        let data = oscillator_data(0.1, 5.0, 1);
        let cfg = LossConfig { l1_weight: 0.1, ..LossConfig::default() };
        let l = loss(&true_linear(1), &data, &cfg).unwrap();
        assert!((l - 0.42).abs() < 1e-12, "{l}");
    }

    #[test]
    fn zero_model_loss_is_mean_squared_state_change() {
        let data = oscillator_data(0.1, 5.0, 4);
        let form = ModelForm::plain(Dictionary::polynomial(2, 3, true).unwrap(), 2);
        let l = loss(&form, &data, &LossConfig::default()).unwrap();
        let p = &data.forward;
        let direct = (&p.targets - &p.sources).map(|v| v * v).sum() / (p.len() * 2) as f64;
        assert!((l - direct).abs() < 1e-15 * direct.max(1.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let data = oscillator_data(0.1, 1.0, 1);
        let form = ModelForm::plain(Dictionary::polynomial(3, 2, true).unwrap(), 3);
        assert!(matches!(loss(&form, &data, &LossConfig::default()), Err(Error::Dimension(_))));
    }

    #[test]
    fn gradient_vanishes_at_exact_minimum() {
        let data = oscillator_data(0.1, 5.0, 1);
        let g = gradient(&true_linear(3), &data, &LossConfig::default()).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-10, "{norm}");
    }

    #[test]
    fn warm_start_then_optimize_reaches_exact_model() {
        let data = oscillator_data(0.05, 10.0, 1);
        let form = ModelForm::plain(Dictionary::polynomial(2, 2, true).unwrap(), 2);
        let res = fit(&form, &data, &LossConfig::default(), &OptimizerConfig::default()).unwrap();
        assert!(res.loss < 1e-12, "{}", res.loss);
    }

    #[test]
    fn optimizer_at_optimum_stops_within_window() {
        let data = oscillator_data(0.1, 5.0, 1);
        let opt = OptimizerConfig { lr_reductions: 0, ..OptimizerConfig::default() };
        let res = optimize(&true_linear(1), &data, &LossConfig::default(), &opt).unwrap();
        assert!(res.iterations <= opt.window);
        assert!(res.loss < 1e-20);
    }

    #[test]
    fn masked_entries_stay_zero() {
        let data = oscillator_data(0.1, 5.0, 2);
        let mut form = ModelForm::plain(Dictionary::polynomial(2, 2, true).unwrap(), 2);
        if let ModelForm::Plain { field } = &mut form {
            field.coefficients.deactivate(0, 0);
            field.coefficients.deactivate(3, 1);
        }
        let opt = OptimizerConfig { max_iters: 200, ..OptimizerConfig::default() };
        let res = fit(&form, &data, &LossConfig::default(), &opt).unwrap();
        if let ModelForm::Plain { field } = &res.form {
            assert_eq!(field.coefficients.get(0, 0), 0.0);
            assert_eq!(field.coefficients.get(3, 1), 0.0);
        }
    }

    #[test]
    fn config_json_uses_flat_field_names() {
        let cfg: SolverConfig =
            serde_json::from_str(r#"{"lr":1e-2,"max_iters":10000,"rel_tol":1e-10,"seed":0,"use_backward":false,"l1_weight":0.0}"#).unwrap();
        assert_eq!(cfg.optimizer.max_iters, 10000);
        assert!(!cfg.loss.use_backward);
        assert_eq!(cfg.loss.denominator_floor, 1e-3);
    }

    #[test]
    fn minibatch_runs_are_deterministic() {
        let data = oscillator_data(0.1, 10.0, 2);
        let form = ModelForm::plain(Dictionary::polynomial(2, 2, true).unwrap(), 2);
        let opt = OptimizerConfig { batch_size: Some(16), max_iters: 100, seed: 7, ..OptimizerConfig::default() };
        let a = fit(&form, &data, &LossConfig::default(), &opt).unwrap();
        let b = fit(&form, &data, &LossConfig::default(), &opt).unwrap();
        assert_eq!(a.form, b.form);
    }
}
