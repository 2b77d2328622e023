use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use rksindy::baseline::std_sindy_discover;
use rksindy::benchmarks::Benchmark;
use rksindy::pipeline::{prepare, trajectory_rmse};
use rksindy::regression::TrainingData;
use rksindy::render::render_equations;
use rksindy::sparsify::{degree_assessment, degree_csv};
use rksindy::{run_discovery, DiscoveredModel, Error, ModelForm, PartRole, Result, ThresholdMode, Trajectory, TrajectorySet};
use serde::Serialize;

use crate::args::{DataArgs, RunArgs};
use crate::config::{resolve, Resolved};

const PRECISION: usize = 3;

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents).map_err(|e| Error::Config(format!("cannot write {}: {e}", dir.join(name).display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn label(v: f64) -> String {
    format!("{v}")
}

pub fn simulate(args: &DataArgs) -> Result<()> {
    if !args.data.is_empty() {
        return Err(Error::Config("simulate takes --benchmark, not --data".into()));
    }
    let res = resolve(args, None, true)?;
    let preset = res.preset.as_ref().ok_or_else(|| Error::Config("simulate needs --benchmark".into()))?;
    let set = preset.data()?;
    create_dir(&res.out)?;
    let name = preset.benchmark.name();
    for (i, t) in set.iter().enumerate() {
        let file = match preset.benchmark {
            _ if set.len() == 1 => format!("{name}.csv"),
            Benchmark::Hopf => format!("{name}_mu_{}.csv", label(preset.params[i][0])),
            Benchmark::Mm => format!("{name}_s0_{}.csv", label(preset.initial_conditions[i][0])),
            _ => format!("{name}_{i}.csv"),
        };
        write(&res.out, &file, &t.to_csv_string())?;
        log::info!("wrote {} ({} rows)", res.out.join(&file).display(), t.len());
    }
    write(&res.out, "config.json", &res.echo()?)?;
    Ok(())
}

fn equations_text(model: &DiscoveredModel) -> String {
    let mut out = render_equations(&model.form, Some(PRECISION)).join("\n");
    out.push('\n');
    if !model.normalization.is_identity() {
        let _ = writeln!(
            out,
            "\n# fitted in normalized coordinates: shift {:?}, scale {:?}",
            model.normalization.shift, model.normalization.scale
        );
        match model.original_form() {
            Ok(f) => {
                out.push_str("# original coordinates\n");
                out.push_str(&render_equations(&f, Some(PRECISION)).join("\n"));
                out.push('\n');
            }
            Err(e) => {
                let _ = writeln!(out, "# original coordinates unavailable: {e}");
            }
        }
    }
    out
}

/// Simulates the model from each trajectory's initial condition; `None`
/// where that is impossible (time-varying inputs) or the model diverges.
fn reconstruct(model: &DiscoveredModel, set: &TrajectorySet) -> Vec<Option<Trajectory>> {
    set.iter()
        .map(|t| {
            if t.input_dim() > 0 {
                log::warn!("skipping reconstruction of a trajectory with time-varying inputs");
                return None;
            }
            match model.simulate(&t.state(0), t.times(), &t.param_values(), 10) {
                Ok(s) => Some(match t.params() {
                    Some(p) => s.with_params(p.clone()).ok()?,
                    None => s,
                }),
                Err(e) => {
                    log::warn!("simulation of the discovered model failed: {e}");
                    None
                }
            }
        })
        .collect()
}

fn write_model(dir: &Path, model: &DiscoveredModel, data: &TrajectorySet) -> Result<Vec<Option<Trajectory>>> {
    create_dir(dir)?;
    write(dir, "model.json", &model.to_json()?)?;
    write(dir, "equations.txt", &equations_text(model))?;
    write(dir, "pareto.csv", &model.pareto_csv())?;
    let sims = reconstruct(model, data);
    for (i, s) in sims.iter().enumerate() {
        if let Some(s) = s {
            let name = if sims.len() == 1 { "reconstruction.csv".to_string() } else { format!("reconstruction_{i}.csv") };
            write(dir, &name, &s.to_csv_string())?;
        }
    }
    Ok(sims)
}

pub fn discover(args: &RunArgs) -> Result<()> {
    let res = resolve(&args.data, Some(&args.model), true)?;
    create_dir(&res.out)?;
    write(&res.out, "config.json", &res.echo()?)?;
    let (data, _) = res.load()?;
    let model = run_discovery(&data, &res.discovery)?;
    write_model(&res.out, &model, &data)?;
    print!("{}", equations_text(&model));
    for w in &model.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct MethodReport {
    method: String,
    equations: Vec<String>,
    /// Active feature labels per state equation.
    support: Vec<Vec<String>>,
    support_size: Vec<usize>,
    /// Mean over trajectories; `None` when a simulation failed.
    rmse: Option<f64>,
    stable: bool,
}

fn support(form: &ModelForm) -> Vec<Vec<String>> {
    (0..form.state_dim())
        .map(|j| {
            form.parts()
                .into_iter()
                .flat_map(|(role, p)| {
                    let prefix = match (form.kind(), role) {
                        (rksindy::FormKind::Plain, _) => "",
                        (_, PartRole::Additive) => "k:",
                        (_, PartRole::Numerator) => "g:",
                        (_, PartRole::Denominator) => "h:",
                    };
                    (0..p.coefficients.nrows())
                        .filter(move |&d| p.coefficients.is_active(d, j))
                        .map(move |d| format!("{prefix}{}", p.dictionary.feature_label(d, None)))
                })
                .collect()
        })
        .collect()
}

fn method_report(model: &DiscoveredModel, sims: &[Option<Trajectory>], reference: &TrajectorySet) -> Result<MethodReport> {
    let mut total = 0.0;
    let mut ok = true;
    for (s, r) in sims.iter().zip(reference.iter()) {
        match s {
            Some(s) => total += trajectory_rmse(s, r)?,
            None => ok = false,
        }
    }
    let rmse = (ok && !sims.is_empty()).then(|| total / sims.len() as f64);
    let sup = support(&model.form);
    Ok(MethodReport {
        method: serde_json::to_value(model.method)?.as_str().unwrap_or_default().to_string(),
        equations: render_equations(&model.form, Some(PRECISION)),
        support_size: sup.iter().map(Vec::len).collect(),
        support: sup,
        rmse,
        stable: rmse.is_some_and(f64::is_finite),
    })
}

fn report_text(reports: &[MethodReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(out, "[{}]", r.method);
        for e in &r.equations {
            let _ = writeln!(out, "  {e}");
        }
        let _ = writeln!(out, "  support size: {:?}", r.support_size);
        match r.rmse {
            Some(v) => {
                let _ = writeln!(out, "  trajectory RMSE: {v:.6e}");
            }
            None => {
                let _ = writeln!(out, "  trajectory RMSE: unavailable (simulation failed; model unstable)");
            }
        }
    }
    out
}

pub fn compare(args: &RunArgs) -> Result<()> {
    let res = resolve(&args.data, Some(&args.model), true)?;
    create_dir(&res.out)?;
    write(&res.out, "config.json", &res.echo()?)?;
    let (data, reference) = res.load()?;
    let rk = run_discovery(&data, &res.discovery)?;
    let rk_sims = write_model(&res.out.join("rk-sindy"), &rk, &data)?;
    let std = std_sindy_discover(&data, &res.discovery, &res.baseline())?;
    let std_sims = write_model(&res.out.join("std-sindy"), &std, &data)?;
    let reports = vec![method_report(&rk, &rk_sims, &reference)?, method_report(&std, &std_sims, &reference)?];
    let text = report_text(&reports);
    write(&res.out, "report.txt", &text)?;
    write(&res.out, "report.json", &serde_json::to_string_pretty(&reports)?)?;
    print!("{text}");
    Ok(())
}

fn training_data(res: &Resolved) -> Result<(TrainingData, Vec<String>)> {
    let (data, _) = res.load()?;
    let names = res.discovery.names_for(&data)?;
    let (fitted, _) = prepare(&data, &res.discovery)?;
    Ok((TrainingData::new(&fitted)?, names))
}

pub fn assess_degree(args: &RunArgs, max_degree: u32) -> Result<()> {
    let res = resolve(&args.data, Some(&args.model), true)?;
    create_dir(&res.out)?;
    write(&res.out, "config.json", &res.echo()?)?;
    let (data, names) = training_data(&res)?;
    let rows = degree_assessment(&data, &names, max_degree, &res.discovery.solver.loss, &res.discovery.solver.optimizer)?;
    let csv = degree_csv(&rows);
    write(&res.out, "degree.csv", &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn sweep(args: &RunArgs, lambdas: &[f64]) -> Result<()> {
    let res = resolve(&args.data, Some(&args.model), true)?;
    create_dir(&res.out)?;
    write(&res.out, "config.json", &res.echo()?)?;
    let (data, _) = res.load()?;
    let models: Vec<DiscoveredModel> = lambdas
        .par_iter()
        .map(|&lambda| {
            let mut cfg = res.discovery.clone();
            cfg.mode = ThresholdMode::Fixed { lambda };
            run_discovery(&data, &cfg)
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("lambda,nonzero_count,loss\n");
    let mut text = String::new();
    for (lambda, m) in lambdas.iter().zip(&models) {
        let _ = writeln!(csv, "{lambda},{},{:e}", m.form.active_count(), m.loss);
        let _ = writeln!(text, "[lambda = {lambda}]\n{}", equations_text(m));
    }
    write(&res.out, "sweep.csv", &csv)?;
    write(&res.out, "sweep.txt", &text)?;
    print!("{csv}");
    Ok(())
}
