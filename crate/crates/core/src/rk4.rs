//! Classical RK4 stepping over candidate vector fields and the one-step
//! prediction pairs that define the discovery loss.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{Trajectory, TrajectorySet};

/// A time-dependent vector field `dx = f(t, x)`.
pub trait VectorField: Sync {
    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]);
}

impl<F> VectorField for F
where
    F: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        self(t, x, dx)
    }
}

/// A vector field over the state plus auxiliary variables (inputs, then
/// parameters) held fixed or interpolated at each stage point.
pub trait AugmentedField: Sync {
    fn eval_aug(&self, x: &[f64], aux: &[f64], dx: &mut [f64]);
}

/// Lifts an autonomous [`VectorField`] to an [`AugmentedField`] ignoring the
/// auxiliary variables.
pub struct Autonomous<F>(pub F);

impl<F: VectorField> AugmentedField for Autonomous<F> {
    fn eval_aug(&self, x: &[f64], _aux: &[f64], dx: &mut [f64]) {
        self.0.eval(0.0, x, dx)
    }
}

/// Stage weights of the final RK4 combination.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rk4Weights {
    /// `(k1 + 2 k2 + 2 k3 + k4) / 6`.
    #[default]
    Classical,
    /// `(k1 + k2 + k3 + k4) / 6`, taken literally; the weights sum to 2/3 so
    /// the scheme is not consistent and learned fields absorb a 3/2 factor.
    Uniform,
}

impl Rk4Weights {
    pub fn weights(self) -> [f64; 4] {
        match self {
            Rk4Weights::Classical => [1.0 / 6.0, 2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0],
            Rk4Weights::Uniform => [1.0 / 6.0; 4],
        }
    }
}

impl std::str::FromStr for Rk4Weights {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Self::Classical),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::Config(format!("unknown rk4 weights '{other}'"))),
        }
    }
}

/// Runs one RK4 step with a stage evaluator `eval(stage, point, out)`.
/// Returns the index (1-based) of the first non-finite stage on failure.
pub(crate) fn rk4_generic<E>(mut eval: E, x: &[f64], h: f64, weights: Rk4Weights) -> std::result::Result<Vec<f64>, usize>
where
    E: FnMut(usize, &[f64], &mut [f64]),
{
    let n = x.len();
    let w = weights.weights();
    let mut k = vec![0.0; n];
    let mut point = x.to_vec();
    let mut out = x.to_vec();
    let offsets = [0.5 * h, 0.5 * h, h];
    for stage in 0..4 {
        eval(stage, &point, &mut k);
        if k.iter().any(|v| !v.is_finite()) {
            return Err(stage + 1);
        }
        for i in 0..n {
            out[i] += h * w[stage] * k[i];
        }
        if stage < 3 {
            for i in 0..n {
                point[i] = x[i] + offsets[stage] * k[i];
            }
        }
    }
    Ok(out)
}

pub(crate) fn rk4_stages<F>(field: &F, t: f64, x: &[f64], h: f64, weights: Rk4Weights) -> Result<Vec<f64>>
where
    F: VectorField + ?Sized,
{
    let stage_times = [t, t + 0.5 * h, t + 0.5 * h, t + h];
    rk4_generic(|s, p, out| field.eval(stage_times[s], p, out), x, h, weights)
        .map_err(|stage| Error::Stage { stage, row: 0 })
}

/// One classical RK4 step of an autonomous field; `h` may be negative.
pub fn rk4_step<F>(field: &F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: VectorField + ?Sized,
{
    rk4_step_at(field, 0.0, x, h, Rk4Weights::Classical)
}

/// RK4 step from time `t` with selectable stage weights.
pub fn rk4_step_at<F>(field: &F, t: f64, x: &[f64], h: f64, weights: Rk4Weights) -> Result<Vec<f64>>
where
    F: VectorField + ?Sized,
{
    if h == 0.0 || !h.is_finite() {
        return Err(Error::Parameter(format!("step must be finite and nonzero, got {h}")));
    }
    rk4_stages(field, t, x, h, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Aligned one-step prediction problems: predict `targets[k]` from
/// `sources[k]` with a signed step `steps[k]`.
///
/// `aux_start`, `aux_mid` and `aux_end` hold the auxiliary variables (inputs
/// linearly interpolated, then parameters) at the first, middle and last
/// stage times of each step; they have zero columns for autonomous data.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPair {
    pub targets: DMatrix<f64>,
    pub sources: DMatrix<f64>,
    pub steps: Vec<f64>,
    pub aux_start: DMatrix<f64>,
    pub aux_mid: DMatrix<f64>,
    pub aux_end: DMatrix<f64>,
    pub direction: Direction,
}

impl PredictionPair {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.sources.ncols()
    }

    pub fn aux_dim(&self) -> usize {
        self.aux_start.ncols()
    }

    /// Appends the rows of `other` (same direction and dimensions).
    pub fn concat(pairs: &[PredictionPair]) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::InsufficientData("no pairs".into()))?;
        let n = first.state_dim();
        let a = first.aux_dim();
        if pairs.iter().any(|p| p.state_dim() != n || p.aux_dim() != a || p.direction != first.direction) {
            return Err(Error::Dimension("pair sets disagree in shape or direction".into()));
        }
        let rows: usize = pairs.iter().map(PredictionPair::len).sum();
        let stack = |get: fn(&PredictionPair) -> &DMatrix<f64>, cols: usize| {
            let mut out = DMatrix::zeros(rows, cols);
            let mut r = 0;
            for p in pairs {
                let m = get(p);
                out.view_mut((r, 0), (m.nrows(), cols)).copy_from(m);
                r += m.nrows();
            }
            out
        };
        Ok(Self {
            targets: stack(|p| &p.targets, n),
            sources: stack(|p| &p.sources, n),
            steps: pairs.iter().flat_map(|p| p.steps.iter().copied()).collect(),
            aux_start: stack(|p| &p.aux_start, a),
            aux_mid: stack(|p| &p.aux_mid, a),
            aux_end: stack(|p| &p.aux_end, a),
            direction: first.direction,
        })
    }
}

fn aux_row(traj: &Trajectory, k: usize) -> Vec<f64> {
    let mut v = traj.input(k);
    v.extend(traj.param_values());
    v
}

/// Forms the aligned sample pairs `k -> k+1` (forward) or `k+1 -> k`
/// (backward, negative steps).
pub fn build_pairs(traj: &Trajectory, direction: Direction) -> Result<PredictionPair> {
    if traj.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 samples, trajectory has {}",
            traj.len()
        )));
    }
    let rows = traj.len() - 1;
    let n = traj.state_dim();
    let a = traj.input_dim() + traj.param_dim();
    let steps = traj.steps();
    let (src_off, tgt_off, sign) = match direction {
        Direction::Forward => (0, 1, 1.0),
        Direction::Backward => (1, 0, -1.0),
    };
    let states = traj.states();
    let sources = DMatrix::from_fn(rows, n, |k, j| states[(k + src_off, j)]);
    let targets = DMatrix::from_fn(rows, n, |k, j| states[(k + tgt_off, j)]);
    let mut aux_start = DMatrix::zeros(rows, a);
    let mut aux_mid = DMatrix::zeros(rows, a);
    let mut aux_end = DMatrix::zeros(rows, a);
    if a > 0 {
        for k in 0..rows {
            let s = aux_row(traj, k + src_off);
            let e = aux_row(traj, k + tgt_off);
            for j in 0..a {
                aux_start[(k, j)] = s[j];
                aux_end[(k, j)] = e[j];
                aux_mid[(k, j)] = 0.5 * (s[j] + e[j]);
            }
        }
    }
    Ok(PredictionPair {
        targets,
        sources,
        steps: steps.iter().map(|h| sign * h).collect(),
        aux_start,
        aux_mid,
        aux_end,
        direction,
    })
}

/// Pairs of every trajectory in a set, stacked in set order.
pub fn build_pairs_set(set: &TrajectorySet, direction: Direction) -> Result<PredictionPair> {
    let pairs = set
        .iter()
        .map(|t| build_pairs(t, direction))
        .collect::<Result<Vec<_>>>()?;
    PredictionPair::concat(&pairs)
}

/// Row-wise RK4 predictions of the pair sources under `field`.
pub fn predict<F>(pair: &PredictionPair, field: &F, weights: Rk4Weights) -> Result<DMatrix<f64>>
where
    F: AugmentedField + ?Sized,
{
    let n = pair.state_dim();
    let rows: Vec<Result<Vec<f64>>> = (0..pair.len())
        .into_par_iter()
        .map(|k| {
            let x: Vec<f64> = pair.sources.row(k).iter().copied().collect();
            let aux = [
                pair.aux_start.row(k).iter().copied().collect::<Vec<_>>(),
                pair.aux_mid.row(k).iter().copied().collect(),
                pair.aux_end.row(k).iter().copied().collect(),
            ];
            let stage_aux = [0, 1, 1, 2];
            rk4_generic(|s, p, out| field.eval_aug(p, &aux[stage_aux[s]], out), &x, pair.steps[k], weights)
                .map_err(|stage| Error::Stage { stage, row: k })
        })
        .collect();
    let mut out = DMatrix::zeros(pair.len(), n);
    for (k, row) in rows.into_iter().enumerate() {
        out.row_mut(k).copy_from_slice(&row?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::simulate_reference;

    fn oscillator(_t: f64, x: &[f64], dx: &mut [f64]) {
        dx[0] = -0.1 * x[0] + 2.0 * x[1];
        dx[1] = -2.0 * x[0] - 0.1 * x[1];
    }

    /// Exact flow of the damped oscillator: e^{-0.1 t} times a rotation by 2t.
    fn oscillator_flow(x: &[f64], t: f64) -> [f64; 2] {
        let decay = (-0.1 * t).exp();
        let (s, c) = (2.0 * t).sin_cos();
        [decay * (c * x[0] + s * x[1]), decay * (-s * x[0] + c * x[1])]
    }

    #[test]
    fn zero_field_fixed_point() {
        let zero = |_t: f64, _x: &[f64], dx: &mut [f64]| dx.fill(0.0);
        assert_eq!(rk4_step(&zero, &[3.5], 0.2).unwrap(), vec![3.5]);
    }

    #[test]
    fn scalar_linear_field_matches_taylor_polynomial() {
        let id = |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = x[0];
        let h: f64 = 0.1;
        let expected = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        let got = rk4_step(&id, &[1.0], h).unwrap()[0];
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 1.1051708333333334).abs() < 1e-15);
    }

    #[test]
    fn forward_then_backward_returns_start() {
        let y = rk4_step(&oscillator, &[2.0, 0.0], 0.01).unwrap();
        let back = rk4_step(&oscillator, &y, -0.01).unwrap();
        assert!((back[0] - 2.0).abs() < 1e-10 && back[1].abs() < 1e-10);
    }

    #[test]
    fn zero_step_rejected() {
        assert!(rk4_step(&oscillator, &[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn stage_failure_names_stage() {
        // finite at x = 0, infinite one half step later
        let f = |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = if x[0] == 0.0 { 1.0 } else { f64::INFINITY };
        match rk4_step(&f, &[0.0], 0.1) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pairs_keep_irregular_steps() {
        let tr = Trajectory::from_rows(vec![0.0, 0.1, 0.3], &[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let fwd = build_pairs(&tr, Direction::Forward).unwrap();
        assert_eq!(fwd.len(), 2);
        assert!((fwd.steps[0] - 0.1).abs() < 1e-15 && (fwd.steps[1] - 0.2).abs() < 1e-15);
        assert_eq!(fwd.sources[(1, 0)], 2.0);
        assert_eq!(fwd.targets[(1, 0)], 3.0);
        let bwd = build_pairs(&tr, Direction::Backward).unwrap();
        assert!((bwd.steps[0] + 0.1).abs() < 1e-15 && (bwd.steps[1] + 0.2).abs() < 1e-15);
        assert_eq!(bwd.sources[(0, 0)], 2.0);
        assert_eq!(bwd.targets[(0, 0)], 1.0);
    }

    #[test]
    fn forward_and_backward_share_sample_pairs() {
        let tr = Trajectory::from_rows(
            vec![0.0, 0.5, 0.7, 1.9],
            &[vec![1.0, 4.0], vec![2.0, 5.0], vec![3.0, 6.0], vec![7.0, 8.0]],
        )
        .unwrap();
        let fwd = build_pairs(&tr, Direction::Forward).unwrap();
        let bwd = build_pairs(&tr, Direction::Backward).unwrap();
        let key = |p: &PredictionPair, k: usize| {
            let a: Vec<f64> = p.sources.row(k).iter().copied().collect();
            let b: Vec<f64> = p.targets.row(k).iter().copied().collect();
            if p.direction == Direction::Forward { (a, b) } else { (b, a) }
        };
        for k in 0..fwd.len() {
            assert_eq!(key(&fwd, k), key(&bwd, k));
            assert_eq!(fwd.steps[k], -bwd.steps[k]);
        }
    }

    #[test]
    fn single_sample_is_insufficient() {
        let tr = Trajectory::from_rows(vec![0.0], &[vec![1.0]]).unwrap();
        assert!(matches!(build_pairs(&tr, Direction::Forward), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn predict_reproduces_self_generated_data() {
        let times: Vec<f64> = (0..200).map(|k| k as f64 * 0.05).collect();
        let tr = simulate_reference(&oscillator, &[2.0, 0.0], &times, 1).unwrap();
        let pair = build_pairs(&tr, Direction::Forward).unwrap();
        let pred = predict(&pair, &Autonomous(oscillator), Rk4Weights::Classical).unwrap();
        let err = (&pair.targets - pred).abs().max();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn local_error_against_exact_flow() {
        let x = [2.0, 0.0];
        let err = |h: f64| {
            let y = rk4_step(&oscillator, &x, h).unwrap();
            let e = oscillator_flow(&x, h);
            ((y[0] - e[0]).powi(2) + (y[1] - e[1]).powi(2)).sqrt()
        };
        assert!(err(0.01) < 1e-10);
        let ratio = err(0.1) / err(0.05);
        assert!((28.0..=36.0).contains(&ratio), "ratio {ratio}");
    }
}
