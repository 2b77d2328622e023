//! Reference systems with their experiment presets.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, DictionarySpec};
use crate::error::{Error, Result};
use crate::model::{CoefficientMatrix, FormKind, ModelForm, ModelPart};
use crate::pipeline::{DiscoveryConfig, NormalizationMode};
use crate::preprocess::add_gaussian_noise_set;
use crate::regression::{LossConfig, SolverConfig};
use crate::sparsify::{ThresholdMode, Tolerance};
use crate::trajectory::{simulate_reference, uniform_times, TrajectorySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Linear2d,
    Cubic2d,
    Fhn,
    Lorenz,
    Mm,
    Hopf,
}

impl Benchmark {
    pub const ALL: [Benchmark; 6] = [Self::Linear2d, Self::Cubic2d, Self::Fhn, Self::Lorenz, Self::Mm, Self::Hopf];

    pub fn name(self) -> &'static str {
        match self {
            Self::Linear2d => "linear2d",
            Self::Cubic2d => "cubic2d",
            Self::Fhn => "fhn",
            Self::Lorenz => "lorenz",
            Self::Mm => "mm",
            Self::Hopf => "hopf",
        }
    }

    pub fn state_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Self::Linear2d | Self::Cubic2d | Self::Hopf => &["x", "y"],
            Self::Fhn => &["v", "w"],
            Self::Lorenz => &["x", "y", "z"],
            Self::Mm => &["s"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// State names followed by parameter names.
    pub fn variable_names(self) -> Vec<String> {
        let mut v = self.state_names();
        if self == Self::Hopf {
            v.push("mu".into());
        }
        v
    }

    pub fn state_dim(self) -> usize {
        self.state_names().len()
    }

    /// Right-hand side with parameters `p` (only the Hopf system uses `p[0] = μ`).
    pub fn rhs(self, x: &[f64], p: &[f64], dx: &mut [f64]) {
        match self {
            Self::Linear2d => {
                dx[0] = -0.1 * x[0] + 2.0 * x[1];
                dx[1] = -2.0 * x[0] - 0.1 * x[1];
            }
            Self::Cubic2d => {
                let (x3, y3) = (x[0].powi(3), x[1].powi(3));
                dx[0] = -0.1 * x3 + 2.0 * y3;
                dx[1] = -2.0 * x3 - 0.1 * y3;
            }
            Self::Fhn => {
                dx[0] = x[0] - x[1] - x[0].powi(3) / 3.0 + 0.5;
                dx[1] = 0.040 * x[0] - 0.028 * x[1] + 0.032;
            }
            Self::Lorenz => {
                dx[0] = -10.0 * x[0] + 10.0 * x[1];
                dx[1] = x[0] * (28.0 - x[2]) - x[1];
                dx[2] = x[0] * x[1] - 8.0 / 3.0 * x[2];
            }
            Self::Mm => {
                dx[0] = 0.6 - 1.5 * x[0] / (0.3 + x[0]);
            }
            Self::Hopf => {
                let mu = p[0];
                let r2 = x[0] * x[0] + x[1] * x[1];
                dx[0] = mu * x[0] - x[1] - x[0] * r2;
                dx[1] = x[0] + mu * x[1] - x[1] * r2;
            }
        }
    }

    /// Ground truth as a model over a polynomial dictionary of `degree`
    /// (numerator and denominator for the rational system), in original
    /// coordinates.
    pub fn true_model(self, degree: u32) -> Result<ModelForm> {
        let names = self.variable_names();
        let dict = Dictionary::polynomial_named(names.clone(), degree.max(self.min_degree()), true)?;
        let n = self.state_dim();
        let terms: Vec<(usize, Vec<u32>, f64)> = match self {
            Self::Linear2d => vec![(0, vec![1, 0], -0.1), (0, vec![0, 1], 2.0), (1, vec![1, 0], -2.0), (1, vec![0, 1], -0.1)],
            Self::Cubic2d => vec![(0, vec![3, 0], -0.1), (0, vec![0, 3], 2.0), (1, vec![3, 0], -2.0), (1, vec![0, 3], -0.1)],
            Self::Fhn => vec![
                (0, vec![0, 0], 0.5),
                (0, vec![1, 0], 1.0),
                (0, vec![0, 1], -1.0),
                (0, vec![3, 0], -1.0 / 3.0),
                (1, vec![0, 0], 0.032),
                (1, vec![1, 0], 0.040),
                (1, vec![0, 1], -0.028),
            ],
            Self::Lorenz => vec![
                (0, vec![1, 0, 0], -10.0),
                (0, vec![0, 1, 0], 10.0),
                (1, vec![1, 0, 0], 28.0),
                (1, vec![1, 0, 1], -1.0),
                (1, vec![0, 1, 0], -1.0),
                (2, vec![1, 1, 0], 1.0),
                (2, vec![0, 0, 1], -8.0 / 3.0),
            ],
            Self::Hopf => vec![
                (0, vec![1, 0, 1], 1.0),
                (0, vec![0, 1, 0], -1.0),
                (0, vec![3, 0, 0], -1.0),
                (0, vec![1, 2, 0], -1.0),
                (1, vec![1, 0, 0], 1.0),
                (1, vec![0, 1, 1], 1.0),
                (1, vec![2, 1, 0], -1.0),
                (1, vec![0, 3, 0], -1.0),
            ],
            Self::Mm => {
                // 0.6 - 1.5 s / (0.3 + s) = (0.6 - 3 s) / (1 + s / 0.3)
                let den_dict = dict.without_constant();
                let mut g = DMatrix::zeros(dict.len(), 1);
                g[(dict.index_of_monomial(&[0]).unwrap(), 0)] = 0.6;
                g[(dict.index_of_monomial(&[1]).unwrap(), 0)] = -3.0;
                let mut h = DMatrix::zeros(den_dict.len(), 1);
                h[(den_dict.index_of_monomial(&[1]).unwrap(), 0)] = 1.0 / 0.3;
                return ModelForm::from_parts(
                    FormKind::Rational,
                    vec![
                        ModelPart::new(dict, CoefficientMatrix::from_sparse(g))?,
                        ModelPart::new(den_dict, CoefficientMatrix::from_sparse(h))?,
                    ],
                );
            }
        };
        let mut values = DMatrix::zeros(dict.len(), n);
        for (j, e, v) in terms {
            values[(dict.index_of_monomial(&e).expect("term within degree"), j)] = v;
        }
        ModelForm::from_parts(FormKind::Plain, vec![ModelPart::new(dict, CoefficientMatrix::from_sparse(values))?])
    }

    fn min_degree(self) -> u32 {
        match self {
            Self::Linear2d => 1,
            Self::Fhn | Self::Cubic2d | Self::Hopf => 3,
            Self::Lorenz => 2,
            Self::Mm => 1,
        }
    }

    pub fn preset(self) -> Preset {
        let names = self.variable_names();
        let fixed = |lambda: f64| ThresholdMode::Fixed { lambda };
        let (dt, t_final, initial_conditions, params, degree, mode, normalization, form) = match self {
            Self::Linear2d => (0.01, 25.0, vec![vec![2.0, 0.0]], vec![], 5, fixed(5e-2), NormalizationMode::Off, FormKind::Plain),
            Self::Cubic2d => (0.01, 25.0, vec![vec![2.0, 0.0]], vec![], 5, fixed(5e-2), NormalizationMode::Off, FormKind::Plain),
            Self::Fhn => (0.1, 600.0, vec![vec![0.0, 0.0]], vec![], 3, fixed(1e-2), NormalizationMode::Off, FormKind::Plain),
            Self::Lorenz => (
                0.01,
                20.0,
                vec![vec![-8.0, 7.0, 27.0]],
                vec![],
                3,
                fixed(0.5),
                NormalizationMode::Custom { shift: vec![0.0, 0.0, 25.0], scale: vec![8.0, 8.0, 8.0] },
                FormKind::Plain,
            ),
            Self::Mm => (
                0.05,
                8.0,
                vec![vec![0.5], vec![1.0], vec![1.5], vec![2.0]],
                vec![],
                4,
                ThresholdMode::Iterative { tol: Tolerance::default() },
                NormalizationMode::Statistical,
                FormKind::Rational,
            ),
            Self::Hopf => {
                let mus = HOPF_MU.to_vec();
                let ics = mus.iter().map(|_| vec![2.0, 0.0]).collect();
                (0.2, HOPF_T_FINAL, ics, mus.into_iter().map(|m| vec![m]).collect(), 3, fixed(5e-2), NormalizationMode::Off, FormKind::Plain)
            }
        };
        Preset {
            benchmark: self,
            dt,
            t_final,
            initial_conditions,
            params,
            substeps: 100,
            noise: if self == Self::Hopf { 1e-2 } else { 0.0 },
            seed: 0,
            filter: None,
            discovery: DiscoveryConfig {
                variable_names: names,
                dictionary: DictionarySpec::polynomial(degree),
                form,
                mode,
                normalization,
                solver: SolverConfig { loss: LossConfig { use_backward: true, ..LossConfig::default() }, ..SolverConfig::default() },
                ..DiscoveryConfig::default()
            },
        }
    }
}

/// Parameter values for the Hopf preset: four below and four above the
/// bifurcation.
pub const HOPF_MU: [f64; 8] = [-0.2, -0.15, -0.1, -0.05, 0.05, 0.2, 0.4, 0.6];
pub const HOPF_T_FINAL: f64 = 50.0;

impl FromStr for Benchmark {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown benchmark '{s}' (expected one of linear2d, cubic2d, fhn, lorenz, mm, hopf)")))
    }
}

/// Data generation and discovery settings of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub benchmark: Benchmark,
    pub dt: f64,
    pub t_final: f64,
    pub initial_conditions: Vec<Vec<f64>>,
    /// Per-trajectory parameter values; empty for unparameterized systems.
    pub params: Vec<Vec<f64>>,
    /// Classical RK4 substeps per sample interval for the reference data.
    pub substeps: usize,
    pub noise: f64,
    pub seed: u64,
    /// Savitzky–Golay `(window, polyorder)` applied before discovery.
    pub filter: Option<(usize, usize)>,
    pub discovery: DiscoveryConfig,
}

impl Preset {
    /// Noise-free reference trajectories.
    pub fn clean_data(&self) -> Result<TrajectorySet> {
        if !(self.dt > 0.0 && self.t_final > 0.0) {
            return Err(Error::Config("dt and t_final must be positive".into()));
        }
        let times = uniform_times(0.0, self.t_final, self.dt);
        let b = self.benchmark;
        let trajs = self
            .initial_conditions
            .iter()
            .enumerate()
            .map(|(i, x0)| {
                let p = self.params.get(i).cloned().unwrap_or_default();
                let field = |_t: f64, x: &[f64], dx: &mut [f64]| b.rhs(x, &p, dx);
                let t = simulate_reference(&field, x0, &times, self.substeps)?;
                if p.is_empty() {
                    Ok(t)
                } else {
                    t.with_params(DVector::from_vec(p))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        TrajectorySet::new(trajs)
    }

    /// Reference trajectories with the preset's noise added.
    pub fn data(&self) -> Result<TrajectorySet> {
        add_gaussian_noise_set(&self.clean_data()?, self.noise, self.seed)
    }

    /// Full discovery configuration, with the preset's filter folded in.
    pub fn discovery_config(&self) -> DiscoveryConfig {
        let mut cfg = self.discovery.clone();
        if let Some(f) = self.filter {
            cfg.filter = Some(f);
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn true_models_match_right_hand_sides() {
        for b in Benchmark::ALL {
            let m = b.true_model(b.preset().discovery.dictionary.degree).unwrap();
            let x: Vec<f64> = (0..b.state_dim()).map(|i| 0.3 + 0.2 * i as f64).collect();
            let p = if b == Benchmark::Hopf { vec![0.25] } else { vec![] };
            let mut expected = vec![0.0; x.len()];
            b.rhs(&x, &p, &mut expected);
            let mut got = vec![0.0; x.len()];
            m.eval(&x, &p, &mut got);
            for (a, e) in got.iter().zip(&expected) {
                assert!((a - e).abs() < 1e-12, "{}: {a} vs {e}", b.name());
            }
        }
    }

    #[test]
    fn presets_generate_expected_shapes() {
        let lorenz = Benchmark::Lorenz.preset().clean_data().unwrap();
        assert_eq!(lorenz.trajectories()[0].len(), 2001);
        assert_eq!(lorenz.state_dim(), 3);
        let mm = Benchmark::Mm.preset().clean_data().unwrap();
        assert_eq!(mm.len(), 4);
        let hopf = Benchmark::Hopf.preset().clean_data().unwrap();
        assert_eq!(hopf.len(), HOPF_MU.len());
        assert_eq!(hopf.augmented_dim(), 3);
    }

    #[test]
    fn unknown_benchmark_is_config_error() {
        assert!(matches!("vanderpol".parse::<Benchmark>(), Err(Error::Config(_))));
    }
}
