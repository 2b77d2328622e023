//! Sampled trajectories: storage, reference simulation and CSV exchange.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rk4::{rk4_stages, Rk4Weights, VectorField};

/// Time-stamped samples of a state vector, with optional control inputs and
/// per-trajectory constant parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: DMatrix<f64>,
    inputs: Option<DMatrix<f64>>,
    params: Option<DVector<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: DMatrix<f64>) -> Result<Self> {
        if times.len() != states.nrows() {
            return Err(Error::InvalidTrajectory(format!(
                "{} time stamps but {} state rows",
                times.len(),
                states.nrows()
            )));
        }
        if times.is_empty() {
            return Err(Error::InvalidTrajectory("no samples".into()));
        }
        if states.ncols() == 0 {
            return Err(Error::InvalidTrajectory("state dimension is zero".into()));
        }
        if let Some(k) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidTrajectory(format!("time {k} is not finite")));
        }
        if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidTrajectory(format!(
                "times not strictly increasing at index {}",
                k + 1
            )));
        }
        if let Some(k) = (0..states.nrows()).find(|&k| states.row(k).iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidTrajectory(format!("state row {k} is not finite")));
        }
        Ok(Self { times, states, inputs: None, params: None })
    }

    /// Builds a trajectory from state rows.
    pub fn from_rows(times: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidTrajectory("ragged state rows".into()));
        }
        let states = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Self::new(times, states)
    }

    pub fn with_inputs(mut self, inputs: DMatrix<f64>) -> Result<Self> {
        if inputs.nrows() != self.times.len() {
            return Err(Error::InvalidTrajectory(format!(
                "{} input rows for {} samples",
                inputs.nrows(),
                self.times.len()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTrajectory("non-finite input".into()));
        }
        self.inputs = (inputs.ncols() > 0).then_some(inputs);
        Ok(self)
    }

    pub fn with_params(mut self, params: DVector<f64>) -> Result<Self> {
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTrajectory("non-finite parameter".into()));
        }
        self.params = (!params.is_empty()).then_some(params);
        Ok(self)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn inputs(&self) -> Option<&DMatrix<f64>> {
        self.inputs.as_ref()
    }

    pub fn params(&self) -> Option<&DVector<f64>> {
        self.params.as_ref()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.as_ref().map_or(0, |u| u.ncols())
    }

    pub fn param_dim(&self) -> usize {
        self.params.as_ref().map_or(0, |p| p.len())
    }

    pub fn state(&self, k: usize) -> Vec<f64> {
        self.states.row(k).iter().copied().collect()
    }

    pub fn input(&self, k: usize) -> Vec<f64> {
        self.inputs.as_ref().map_or_else(Vec::new, |u| u.row(k).iter().copied().collect())
    }

    pub fn param_values(&self) -> Vec<f64> {
        self.params.as_ref().map_or_else(Vec::new, |p| p.iter().copied().collect())
    }

    /// Sample spacings `t[k+1] - t[k]`.
    pub fn steps(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Returns a copy with the states replaced; inputs and parameters carry over.
    pub fn with_states(&self, states: DMatrix<f64>) -> Result<Self> {
        if states.shape() != self.states.shape() {
            return Err(Error::Dimension(format!(
                "replacement states {:?} vs {:?}",
                states.shape(),
                self.states.shape()
            )));
        }
        let mut out = Self::new(self.times.clone(), states)?;
        out.inputs = self.inputs.clone();
        out.params = self.params.clone();
        Ok(out)
    }

    /// Reads a trajectory from CSV with header `t,x1..xn[,u1..um][,p1..pp]`.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let n = self.state_dim();
        let m = self.input_dim();
        let p = self.param_dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend((1..=p).map(|i| format!("p{i}")));
        let mut out = header.join(",");
        out.push('\n');
        for k in 0..self.len() {
            let mut row = vec![self.times[k]];
            row.extend(self.states.row(k).iter());
            if let Some(u) = &self.inputs {
                row.extend(u.row(k).iter());
            }
            if let Some(pv) = &self.params {
                row.extend(pv.iter());
            }
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Format { line: 1, message: "empty file".into() })?;
        let roles = parse_header(header)?;
        let width = roles.len();
        let n = roles.iter().filter(|r| **r == Role::State).count();
        let m = roles.iter().filter(|r| **r == Role::Input).count();
        let p = roles.iter().filter(|r| **r == Role::Param).count();

        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        let mut params: Option<Vec<f64>> = None;
        for (idx, line) in lines {
            let line_no = idx + 1;
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != width {
                return Err(Error::Format {
                    line: line_no,
                    message: format!("expected {width} columns, found {}", cells.len()),
                });
            }
            let mut values = Vec::with_capacity(width);
            for cell in cells {
                let v: f64 = cell.parse().map_err(|_| Error::Format {
                    line: line_no,
                    message: format!("cannot parse '{cell}' as a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Format { line: line_no, message: "non-finite value".into() });
                }
                values.push(v);
            }
            let t = values[0];
            if let Some(&prev) = times.last() {
                if t <= prev {
                    return Err(Error::Format {
                        line: line_no,
                        message: format!("time {t} does not increase past {prev}"),
                    });
                }
            }
            times.push(t);
            states.push(values[1..=n].to_vec());
            inputs.push(values[1 + n..1 + n + m].to_vec());
            let row_params = values[1 + n + m..].to_vec();
            match &params {
                None => params = Some(row_params),
                Some(first) if *first != row_params => {
                    return Err(Error::Format {
                        line: line_no,
                        message: "parameter columns must be constant".into(),
                    });
                }
                Some(_) => {}
            }
        }
        if times.is_empty() {
            return Err(Error::Format { line: 2, message: "no data rows".into() });
        }
        let rows = times.len();
        let traj = Self::new(times, DMatrix::from_fn(rows, n, |i, j| states[i][j]))?;
        let traj = if m > 0 {
            traj.with_inputs(DMatrix::from_fn(rows, m, |i, j| inputs[i][j]))?
        } else {
            traj
        };
        if p > 0 {
            traj.with_params(DVector::from_vec(params.unwrap_or_default()))
        } else {
            Ok(traj)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Role {
    Time,
    State,
    Input,
    Param,
}

fn parse_header(header: &str) -> Result<Vec<Role>> {
    let err = |message: String| Error::Format { line: 1, message };
    let mut roles = Vec::new();
    for (i, name) in header.split(',').map(str::trim).enumerate() {
        let role = match (i, name.chars().next()) {
            (0, _) if name == "t" => Role::Time,
            (0, _) => return Err(err(format!("first column must be 't', found '{name}'"))),
            (_, Some('x')) => Role::State,
            (_, Some('u')) => Role::Input,
            (_, Some('p')) => Role::Param,
            _ => return Err(err(format!("unrecognised column '{name}'"))),
        };
        if i > 0 && name[1..].parse::<usize>().is_err() {
            return Err(err(format!("column '{name}' lacks an index")));
        }
        roles.push(role);
    }
    if roles.windows(2).any(|w| w[1] < w[0]) {
        return Err(err("columns must be ordered t, states, inputs, parameters".into()));
    }
    if !roles.contains(&Role::State) {
        return Err(err("no state columns".into()));
    }
    Ok(roles)
}

/// A collection of trajectories of the same system (several initial
/// conditions or parameter values).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectorySet {
    trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if let Some(first) = trajectories.first() {
            let dims = (first.state_dim(), first.input_dim(), first.param_dim());
            for (i, t) in trajectories.iter().enumerate() {
                if (t.state_dim(), t.input_dim(), t.param_dim()) != dims {
                    return Err(Error::Dimension(format!(
                        "trajectory {i} has dimensions {:?}, expected {dims:?}",
                        (t.state_dim(), t.input_dim(), t.param_dim())
                    )));
                }
            }
        }
        Ok(Self { trajectories })
    }

    pub fn single(trajectory: Trajectory) -> Self {
        Self { trajectories: vec![trajectory] }
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trajectory> {
        self.trajectories.iter()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::state_dim)
    }

    /// Number of augmented variables: states, inputs, then parameters.
    pub fn augmented_dim(&self) -> usize {
        self.trajectories
            .first()
            .map_or(0, |t| t.state_dim() + t.input_dim() + t.param_dim())
    }

    pub fn map<F>(&self, f: F) -> Result<Self>
    where
        F: FnMut(&Trajectory) -> Result<Trajectory>,
    {
        Ok(Self { trajectories: self.trajectories.iter().map(f).collect::<Result<_>>()? })
    }
}

impl From<Trajectory> for TrajectorySet {
    fn from(t: Trajectory) -> Self {
        Self::single(t)
    }
}

/// Integrates `rhs` over the sample grid with `substeps` uniform classical RK4
/// steps per sample interval.
pub fn simulate_reference<F>(rhs: &F, x0: &[f64], times: &[f64], substeps: usize) -> Result<Trajectory>
where
    F: VectorField + ?Sized,
{
    if substeps == 0 {
        return Err(Error::Parameter("substeps must be at least 1".into()));
    }
    if times.is_empty() {
        return Err(Error::InvalidTrajectory("empty time grid".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidTrajectory("times not strictly increasing".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { index: 0 });
    }
    let n = x0.len();
    let mut states = DMatrix::zeros(times.len(), n);
    let mut x = x0.to_vec();
    states.row_mut(0).copy_from_slice(&x);
    for k in 1..times.len() {
        let h = (times[k] - times[k - 1]) / substeps as f64;
        for s in 0..substeps {
            let t = times[k - 1] + s as f64 * h;
            x = rk4_stages(rhs, t, &x, h, Rk4Weights::Classical)
                .map_err(|_| Error::Divergence { index: k })?;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { index: k });
        }
        states.row_mut(k).copy_from_slice(&x);
    }
    Trajectory::new(times.to_vec(), states)
}

/// Uniform grid `t0, t0 + dt, ...` up to and including `t_final` (within
/// rounding).
pub fn uniform_times(t0: f64, t_final: f64, dt: f64) -> Vec<f64> {
    let steps = ((t_final - t0) / dt + 1e-9).floor() as usize;
    (0..=steps).map(|k| t0 + k as f64 * dt).collect()
}
