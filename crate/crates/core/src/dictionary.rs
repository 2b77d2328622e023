//! Candidate feature dictionaries: polynomial, trigonometric and exponential
//! features over the augmented variable vector (states, inputs, parameters),
//! including features with trainable inner scales.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Constant,
    Monomial,
    Sine,
    Cosine,
    Exponential,
}

/// One dictionary column.
///
/// For monomials `exponents` is the monomial itself; for sine, cosine and
/// exponential features it selects the inner monomial `a(v)` so the feature
/// reads `sin(s * a(v))` with `s` either the fixed `scale` or, when
/// `eta_index` is set, the trainable scale stored in the owning dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub kind: FeatureKind,
    pub exponents: Vec<u32>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_index: Option<usize>,
}

fn one() -> f64 {
    1.0
}

impl FeatureDescriptor {
    pub fn constant(num_vars: usize) -> Self {
        Self { kind: FeatureKind::Constant, exponents: vec![0; num_vars], scale: 1.0, eta_index: None }
    }

    pub fn monomial(exponents: Vec<u32>) -> Self {
        Self { kind: FeatureKind::Monomial, exponents, scale: 1.0, eta_index: None }
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self.kind, FeatureKind::Constant | FeatureKind::Monomial)
    }
}

/// Number of monomials of total degree at most `degree` in `num_vars`
/// variables, constant included: `binomial(num_vars + degree, degree)`.
pub fn polynomial_count(num_vars: usize, degree: u32) -> usize {
    let d = degree as u64;
    let q = num_vars as u64;
    let mut acc: u64 = 1;
    for i in 1..=d {
        acc = acc * (q + i) / i;
    }
    acc as usize
}

/// All exponent vectors of exactly total degree `degree`, lexicographically
/// descending: for two variables `(2,0), (1,1), (0,2)`.
pub fn exponents_of_degree(num_vars: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(prefix: &mut Vec<u32>, remaining_vars: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
        if remaining_vars == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            rec(prefix, remaining_vars - 1, remaining - e, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if num_vars > 0 {
        rec(&mut Vec::with_capacity(num_vars), num_vars, degree, &mut out);
    }
    out
}

/// Ordered feature library Φ with its trainable scales η.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    features: Vec<FeatureDescriptor>,
    #[serde(default)]
    eta: Vec<f64>,
    variable_names: Vec<String>,
}

impl Dictionary {
    pub fn new(variable_names: Vec<String>) -> Self {
        Self { features: Vec::new(), eta: Vec::new(), variable_names }
    }

    /// Graded-lexicographic monomials up to `degree`, constant first when
    /// requested. Variables are named `v1..vq`.
    pub fn polynomial(num_vars: usize, degree: u32, include_constant: bool) -> Result<Self> {
        let names = (1..=num_vars).map(|i| format!("v{i}")).collect();
        Self::polynomial_named(names, degree, include_constant)
    }

    pub fn polynomial_named(variable_names: Vec<String>, degree: u32, include_constant: bool) -> Result<Self> {
        if degree == 0 {
            return Err(Error::Parameter("polynomial degree must be at least 1".into()));
        }
        let q = variable_names.len();
        if q == 0 {
            return Err(Error::Parameter("dictionary needs at least one variable".into()));
        }
        let mut dict = Self::new(variable_names);
        if include_constant {
            dict.features.push(FeatureDescriptor::constant(q));
        }
        for d in 1..=degree {
            dict.features
                .extend(exponents_of_degree(q, d).into_iter().map(FeatureDescriptor::monomial));
        }
        Ok(dict)
    }

    /// Appends a feature, rejecting duplicates and malformed descriptors.
    pub fn push(&mut self, feature: FeatureDescriptor) -> Result<usize> {
        if feature.exponents.len() != self.num_vars() {
            return Err(Error::Dimension(format!(
                "feature has {} exponents for {} variables",
                feature.exponents.len(),
                self.num_vars()
            )));
        }
        match feature.kind {
            FeatureKind::Constant if feature.degree() != 0 => {
                return Err(Error::Parameter("constant feature with nonzero exponents".into()))
            }
            FeatureKind::Monomial if feature.degree() == 0 => {
                return Err(Error::Parameter("monomial needs a positive exponent".into()))
            }
            _ => {}
        }
        if let Some(i) = feature.eta_index {
            if i >= self.eta.len() {
                return Err(Error::Parameter(format!("eta index {i} out of range")));
            }
            if feature.is_polynomial() {
                return Err(Error::Parameter("only trig/exp features take a trainable scale".into()));
            }
        }
        if self.features.contains(&feature) {
            return Err(Error::Parameter(format!("duplicate feature {}", self.describe(&feature, None))));
        }
        self.features.push(feature);
        Ok(self.features.len() - 1)
    }

    /// Adds a trig/exp feature whose inner scale is a new trainable η slot.
    pub fn push_parameterized(&mut self, kind: FeatureKind, exponents: Vec<u32>, init: f64) -> Result<usize> {
        if matches!(kind, FeatureKind::Constant | FeatureKind::Monomial) {
            return Err(Error::Parameter("parameterized features must be sine, cosine or exponential".into()));
        }
        self.eta.push(init);
        let slot = self.eta.len() - 1;
        let res = self.push(FeatureDescriptor { kind, exponents, scale: 1.0, eta_index: Some(slot) });
        if res.is_err() {
            self.eta.pop();
        }
        res
    }

    pub fn features(&self) -> &[FeatureDescriptor] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn num_vars(&self) -> usize {
        self.variable_names.len()
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn set_variable_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.num_vars() {
            return Err(Error::Dimension("variable name count changed".into()));
        }
        self.variable_names = names;
        Ok(())
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn eta_mut(&mut self) -> &mut [f64] {
        &mut self.eta
    }

    pub fn has_constant(&self) -> bool {
        self.features.iter().any(|f| f.kind == FeatureKind::Constant)
    }

    pub fn is_polynomial(&self) -> bool {
        self.features.iter().all(FeatureDescriptor::is_polynomial)
    }

    /// Copy with the constant feature removed (denominator dictionaries).
    pub fn without_constant(&self) -> Self {
        let mut out = self.clone();
        out.features.retain(|f| f.kind != FeatureKind::Constant);
        out
    }

    pub fn index_of(&self, feature: &FeatureDescriptor) -> Option<usize> {
        self.features.iter().position(|f| f == feature)
    }

    /// Index of the monomial (or constant, for all-zero exponents).
    pub fn index_of_monomial(&self, exponents: &[u32]) -> Option<usize> {
        self.features.iter().position(|f| f.is_polynomial() && f.exponents == exponents)
    }

    fn inner_scale(&self, f: &FeatureDescriptor) -> f64 {
        f.eta_index.map_or(f.scale, |i| self.eta[i])
    }

    /// Evaluates all features at one augmented state.
    pub fn evaluate(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.num_vars() {
            return Err(Error::Dimension(format!(
                "state has {} entries, dictionary expects {}",
                z.len(),
                self.num_vars()
            )));
        }
        let mut out = vec![0.0; self.len()];
        self.eval_into(z, &mut out);
        if let Some(d) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { feature: self.feature_name(d) });
        }
        Ok(out)
    }

    /// Evaluates every row of `batch` (samples by variables).
    pub fn evaluate_batch(&self, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(batch.nrows(), self.len());
        for r in 0..batch.nrows() {
            let z: Vec<f64> = batch.row(r).iter().copied().collect();
            let row = self.evaluate(&z)?;
            out.row_mut(r).copy_from_slice(&row);
        }
        Ok(out)
    }

    /// Unchecked evaluation into `out` (length `len()`).
    pub fn eval_into(&self, z: &[f64], out: &mut [f64]) {
        for (f, o) in self.features.iter().zip(out.iter_mut()) {
            *o = match f.kind {
                FeatureKind::Constant => 1.0,
                FeatureKind::Monomial => monomial(&f.exponents, z),
                FeatureKind::Sine => (self.inner_scale(f) * monomial(&f.exponents, z)).sin(),
                FeatureKind::Cosine => (self.inner_scale(f) * monomial(&f.exponents, z)).cos(),
                FeatureKind::Exponential => (self.inner_scale(f) * monomial(&f.exponents, z)).exp(),
            };
        }
    }

    /// Accumulates `sum_d weights[d] * dΦ_d/dz_i` into `grad[i]` for the
    /// first `grad.len()` variables.
    pub fn accumulate_state_vjp(&self, z: &[f64], weights: &[f64], grad: &mut [f64]) {
        for (f, &w) in self.features.iter().zip(weights) {
            if w == 0.0 || f.kind == FeatureKind::Constant {
                continue;
            }
            let outer = match f.kind {
                FeatureKind::Monomial => w,
                FeatureKind::Sine => {
                    let s = self.inner_scale(f);
                    w * s * (s * monomial(&f.exponents, z)).cos()
                }
                FeatureKind::Cosine => {
                    let s = self.inner_scale(f);
                    -w * s * (s * monomial(&f.exponents, z)).sin()
                }
                FeatureKind::Exponential => {
                    let s = self.inner_scale(f);
                    w * s * (s * monomial(&f.exponents, z)).exp()
                }
                FeatureKind::Constant => unreachable!(),
            };
            for (i, g) in grad.iter_mut().enumerate() {
                if f.exponents[i] > 0 {
                    *g += outer * monomial_partial(&f.exponents, z, i);
                }
            }
        }
    }

    /// Accumulates `sum_d weights[d] * dΦ_d/dη_j` into `grad[j]`.
    pub fn accumulate_eta_vjp(&self, z: &[f64], weights: &[f64], grad: &mut [f64]) {
        for (f, &w) in self.features.iter().zip(weights) {
            let Some(j) = f.eta_index else { continue };
            let a = monomial(&f.exponents, z);
            let s = self.eta[j];
            grad[j] += w * a * match f.kind {
                FeatureKind::Sine => (s * a).cos(),
                FeatureKind::Cosine => -(s * a).sin(),
                FeatureKind::Exponential => (s * a).exp(),
                _ => 0.0,
            };
        }
    }

    pub fn feature_name(&self, d: usize) -> String {
        self.describe(&self.features[d], None)
    }

    /// Human-readable feature label; trainable scales are printed as their
    /// current value with `precision` decimals when given.
    pub fn feature_label(&self, d: usize, precision: Option<usize>) -> String {
        self.describe(&self.features[d], precision)
    }

    fn describe(&self, f: &FeatureDescriptor, precision: Option<usize>) -> String {
        let mono = monomial_name(&f.exponents, &self.variable_names);
        let inner = || {
            let s = match (f.eta_index, precision) {
                (Some(j), Some(p)) => format_number(self.eta[j], p),
                (Some(j), None) => format!("η{}", j + 1),
                (None, _) if f.scale == 1.0 => return mono.clone(),
                (None, _) if f.scale == -1.0 => return format!("-{mono}"),
                (None, Some(p)) => format_number(f.scale, p),
                (None, None) => format!("{}", f.scale),
            };
            format!("{s} {mono}")
        };
        match f.kind {
            FeatureKind::Constant => "1".into(),
            FeatureKind::Monomial => mono,
            FeatureKind::Sine => format!("sin({})", inner()),
            FeatureKind::Cosine => format!("cos({})", inner()),
            FeatureKind::Exponential => format!("exp({})", inner()),
        }
    }
}

fn format_number(v: f64, precision: usize) -> String {
    format!("{v:.precision$}")
}

pub(crate) fn monomial(exponents: &[u32], z: &[f64]) -> f64 {
    exponents
        .iter()
        .zip(z)
        .filter(|(e, _)| **e > 0)
        .map(|(&e, &v)| v.powi(e as i32))
        .product()
}

fn monomial_partial(exponents: &[u32], z: &[f64], i: usize) -> f64 {
    let mut acc = exponents[i] as f64 * z[i].powi(exponents[i] as i32 - 1);
    for (k, (&e, &v)) in exponents.iter().zip(z).enumerate() {
        if k != i && e > 0 {
            acc *= v.powi(e as i32);
        }
    }
    acc
}

/// `x^2 y` style name of a monomial; `1` for the empty monomial.
pub fn monomial_name(exponents: &[u32], names: &[String]) -> String {
    let parts: Vec<String> = exponents
        .iter()
        .zip(names)
        .filter(|(e, _)| **e > 0)
        .map(|(&e, n)| if e == 1 { n.clone() } else { format!("{n}^{e}") })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join(" ")
    }
}

/// Non-polynomial feature over one variable, as written in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgumentSpec {
    /// Variable index into the augmented vector.
    pub var: usize,
    #[serde(default = "default_power")]
    pub power: u32,
    #[serde(default = "one")]
    pub scale: f64,
}

fn default_power() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterizedSpec {
    pub kind: FeatureKind,
    pub var: usize,
    #[serde(default = "default_power")]
    pub power: u32,
    #[serde(default = "one")]
    pub init: f64,
}

/// Dictionary configuration, e.g.
/// `{"degree": 3, "constant": true, "trig": [], "exp": [], "parameterized": []}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionarySpec {
    pub degree: u32,
    #[serde(default = "yes")]
    pub constant: bool,
    /// Each entry adds both `sin` and `cos` of the argument.
    #[serde(default)]
    pub trig: Vec<ArgumentSpec>,
    #[serde(default)]
    pub exp: Vec<ArgumentSpec>,
    #[serde(default)]
    pub parameterized: Vec<ParameterizedSpec>,
}

fn yes() -> bool {
    true
}

impl DictionarySpec {
    pub fn polynomial(degree: u32) -> Self {
        Self { degree, constant: true, trig: Vec::new(), exp: Vec::new(), parameterized: Vec::new() }
    }

    pub fn build(&self, variable_names: Vec<String>) -> Result<Dictionary> {
        let q = variable_names.len();
        let mut dict = if self.degree == 0 {
            let mut d = Dictionary::new(variable_names);
            if self.constant {
                d.push(FeatureDescriptor::constant(q))?;
            }
            d
        } else {
            Dictionary::polynomial_named(variable_names, self.degree, self.constant)?
        };
        let arg = |var: usize, power: u32| -> Result<Vec<u32>> {
            if var >= q || power == 0 {
                return Err(Error::Config(format!("bad feature argument var={var} power={power}")));
            }
            let mut e = vec![0; q];
            e[var] = power;
            Ok(e)
        };
        for t in &self.trig {
            let e = arg(t.var, t.power)?;
            for kind in [FeatureKind::Sine, FeatureKind::Cosine] {
                dict.push(FeatureDescriptor { kind, exponents: e.clone(), scale: t.scale, eta_index: None })?;
            }
        }
        for x in &self.exp {
            let e = arg(x.var, x.power)?;
            dict.push(FeatureDescriptor {
                kind: FeatureKind::Exponential,
                exponents: e,
                scale: x.scale,
                eta_index: None,
            })?;
        }
        for p in &self.parameterized {
            dict.push_parameterized(p.kind, arg(p.var, p.power)?, p.init)?;
        }
        if dict.is_empty() {
            return Err(Error::Config("dictionary is empty".into()));
        }
        Ok(dict)
    }
}
