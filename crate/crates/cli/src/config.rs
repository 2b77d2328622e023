use std::fs;
use std::path::PathBuf;

use rksindy::baseline::{BaselineConfig, DerivativeMethod};
use rksindy::benchmarks::{Benchmark, Preset};
use rksindy::{DiscoveryConfig, Error, FormKind, NormalizationMode, Result, Rk4Weights, ThresholdMode, Tolerance, Trajectory, TrajectorySet};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::{DataArgs, FormArg, ModeArg, ModelArgs, NormalizeArg, WeightsArg};

/// Everything a command needs; read from `--config` and echoed to the
/// output directory after flags are applied.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: Option<String>,
    pub data: Vec<PathBuf>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub noise: Option<f64>,
    pub seed: Option<u64>,
    /// Merged over the benchmark preset (or library defaults) key by key.
    pub discovery: Option<Value>,
    pub baseline: Option<BaselineConfig>,
    pub out: Option<PathBuf>,
}

/// A fully resolved run.
pub struct Resolved {
    pub config: RunConfig,
    pub discovery: DiscoveryConfig,
    pub preset: Option<Preset>,
    pub out: PathBuf,
}

impl Resolved {
    /// Data to fit and, for benchmarks, the noise-free reference.
    pub fn load(&self) -> Result<(TrajectorySet, TrajectorySet)> {
        match &self.preset {
            Some(p) => Ok((p.data()?, p.clean_data()?)),
            None => {
                let set = TrajectorySet::new(self.config.data.iter().map(Trajectory::load_csv).collect::<Result<_>>()?)?;
                Ok((set.clone(), set))
            }
        }
    }

    pub fn baseline(&self) -> BaselineConfig {
        self.config.baseline.unwrap_or_else(|| BaselineConfig {
            derivative: match self.discovery.filter {
                Some((window, polyorder)) => DerivativeMethod::SavgolDerivative { window, polyorder },
                None => DerivativeMethod::CentralDifference,
            },
            lambda: match self.discovery.mode {
                ThresholdMode::Fixed { lambda } => lambda,
                ThresholdMode::Iterative { .. } => BaselineConfig::default().lambda,
            },
            ..BaselineConfig::default()
        })
    }

    pub fn echo(&self) -> Result<String> {
        let mut c = self.config.clone();
        c.discovery = Some(serde_json::to_value(&self.discovery)?);
        c.baseline = Some(self.baseline());
        c.out = Some(self.out.clone());
        if let Some(p) = &self.preset {
            c.dt = Some(p.dt);
            c.t_final = Some(p.t_final);
            c.noise = Some(p.noise);
            c.seed = Some(p.seed);
        }
        Ok(serde_json::to_string_pretty(&c)?)
    }
}

fn read_file(args: &DataArgs) -> Result<RunConfig> {
    match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
        None => Ok(RunConfig::default()),
    }
}

/// Replaces top-level keys, merging the flattened solver settings field by
/// field.
fn merge(base: &mut Value, patch: Value) {
    let (Value::Object(base), Value::Object(patch)) = (base, patch) else { return };
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(Value::Object(b)), Value::Object(p)) if k == "solver" => b.extend(p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn merge_data_flags(c: &mut RunConfig, args: &DataArgs) {
    if args.benchmark.is_some() {
        c.benchmark.clone_from(&args.benchmark);
    }
    if !args.data.is_empty() {
        c.data.clone_from(&args.data);
    }
    c.dt = args.dt.or(c.dt);
    c.t_final = args.t_final.or(c.t_final);
    c.noise = args.noise.or(c.noise);
    c.seed = args.seed.or(c.seed);
    if args.out.is_some() {
        c.out.clone_from(&args.out);
    }
}

fn preset_for(c: &RunConfig) -> Result<Option<Preset>> {
    let Some(name) = &c.benchmark else { return Ok(None) };
    let mut p = name.parse::<Benchmark>()?.preset();
    p.dt = c.dt.unwrap_or(p.dt);
    p.t_final = c.t_final.unwrap_or(p.t_final);
    p.noise = c.noise.unwrap_or(p.noise);
    p.seed = c.seed.unwrap_or(p.seed);
    if !(p.dt > 0.0 && p.t_final > p.dt) {
        return Err(Error::Config(format!("need 0 < dt < t_final, got dt={} t_final={}", p.dt, p.t_final)));
    }
    if !(p.noise >= 0.0) {
        return Err(Error::Config(format!("noise must be non-negative, got {}", p.noise)));
    }
    Ok(Some(p))
}

fn parse_tol(s: &str) -> Result<Tolerance> {
    let bad = || Error::Config(format!("cannot parse tolerance '{s}'"));
    match s.strip_suffix('x') {
        Some(f) => Ok(Tolerance::RelativeToDense(f.parse().map_err(|_| bad())?)),
        None => Ok(Tolerance::Absolute(s.parse().map_err(|_| bad())?)),
    }
}

fn apply_model_flags(cfg: &mut DiscoveryConfig, m: &ModelArgs) -> Result<()> {
    if let Some(d) = m.dict_degree {
        cfg.dictionary.degree = d;
    }
    if let Some(f) = m.form {
        cfg.form = match f {
            FormArg::Plain => FormKind::Plain,
            FormArg::Rational => FormKind::Rational,
            FormArg::Extended => FormKind::Extended,
        };
    }
    let tol = m.tol.as_deref().map(parse_tol).transpose()?;
    let mode = m.mode.or(if tol.is_some() {
        Some(ModeArg::Iterative)
    } else if m.lambda.is_some() {
        Some(ModeArg::Fixed)
    } else {
        None
    });
    match mode {
        Some(ModeArg::Fixed) => {
            let current = match cfg.mode {
                ThresholdMode::Fixed { lambda } => lambda,
                ThresholdMode::Iterative { .. } => 5e-2,
            };
            if tol.is_some() {
                return Err(Error::Config("--tol applies to iterative mode only".into()));
            }
            cfg.mode = ThresholdMode::Fixed { lambda: m.lambda.unwrap_or(current) };
        }
        Some(ModeArg::Iterative) => {
            if m.lambda.is_some() {
                return Err(Error::Config("--lambda applies to fixed mode only".into()));
            }
            let current = match cfg.mode {
                ThresholdMode::Iterative { tol } => tol,
                ThresholdMode::Fixed { .. } => Tolerance::default(),
            };
            cfg.mode = ThresholdMode::Iterative { tol: tol.unwrap_or(current) };
        }
        None => {}
    }
    if let Some(b) = m.backward {
        cfg.solver.loss.use_backward = b;
    }
    if m.filter_window.is_some() || m.filter_order.is_some() {
        let (w, o) = cfg.filter.unwrap_or((21, 3));
        cfg.filter = Some((m.filter_window.unwrap_or(w), m.filter_order.unwrap_or(o)));
    }
    match m.normalize {
        Some(NormalizeArg::Auto) => cfg.normalization = NormalizationMode::Auto,
        Some(NormalizeArg::Off) => cfg.normalization = NormalizationMode::Off,
        Some(NormalizeArg::Statistical) => cfg.normalization = NormalizationMode::Statistical,
        Some(NormalizeArg::Custom) => {
            let (Some(shift), Some(scale)) = (m.shift.clone(), m.scale.clone()) else {
                return Err(Error::Config("--normalize custom needs --shift and --scale".into()));
            };
            cfg.normalization = NormalizationMode::Custom { shift, scale };
        }
        None if m.shift.is_some() || m.scale.is_some() => {
            return Err(Error::Config("--shift and --scale need --normalize custom".into()));
        }
        None => {}
    }
    if let Some(w) = m.rk4_weights {
        cfg.solver.loss.rk4_weights = match w {
            WeightsArg::Classical => Rk4Weights::Classical,
            WeightsArg::Uniform => Rk4Weights::Uniform,
        };
    }
    if let Some(l1) = m.l1 {
        cfg.solver.loss.l1_weight = l1;
    }
    if let Some(n) = m.max_iters {
        cfg.solver.optimizer.max_iters = n;
    }
    Ok(())
}

/// Defaults, then the config file, then flags.
pub fn resolve(args: &DataArgs, model: Option<&ModelArgs>, need_out: bool) -> Result<Resolved> {
    let mut config = read_file(args)?;
    merge_data_flags(&mut config, args);
    match (&config.benchmark, config.data.is_empty()) {
        (Some(_), false) => return Err(Error::Config("give either a benchmark or data files, not both".into())),
        (None, true) => return Err(Error::Config("no data source: give --benchmark or --data".into())),
        _ => {}
    }
    let preset = preset_for(&config)?;
    if preset.is_none() && (config.dt.is_some() || config.t_final.is_some() || config.noise.is_some()) {
        return Err(Error::Config("--dt, --t-final and --noise apply to benchmarks only".into()));
    }
    let base = preset.as_ref().map(Preset::discovery_config).unwrap_or_default();
    let mut value = serde_json::to_value(&base)?;
    if let Some(patch) = config.discovery.clone() {
        merge(&mut value, patch);
    }
    let mut discovery: DiscoveryConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("discovery settings: {e}")))?;
    if let Some(m) = model {
        apply_model_flags(&mut discovery, m)?;
    }
    discovery.validate()?;
    let out = match (&config.out, need_out) {
        (Some(o), _) => o.clone(),
        (None, true) => return Err(Error::Config("--out is required".into())),
        (None, false) => PathBuf::from("."),
    };
    Ok(Resolved { config, discovery, preset, out })
}
