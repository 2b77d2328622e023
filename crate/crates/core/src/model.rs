//! Coefficient matrices and the plain / rational / extended model forms.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::rk4::AugmentedField;

/// Θ (features by state equations) with its active-entry mask. Masked-off
/// entries are kept at exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoefficients", into = "RawCoefficients")]
pub struct CoefficientMatrix {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

#[derive(Serialize, Deserialize)]
struct RawCoefficients {
    values: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
}

impl From<CoefficientMatrix> for RawCoefficients {
    fn from(c: CoefficientMatrix) -> Self {
        let (r, k) = c.values.shape();
        Self {
            values: (0..r).map(|i| (0..k).map(|j| c.values[(i, j)]).collect()).collect(),
            mask: (0..r).map(|i| (0..k).map(|j| c.mask[(i, j)]).collect()).collect(),
        }
    }
}

impl TryFrom<RawCoefficients> for CoefficientMatrix {
    type Error = Error;
    fn try_from(raw: RawCoefficients) -> Result<Self> {
        let rows = raw.values.len();
        let cols = raw.values.first().map_or(0, Vec::len);
        if raw.mask.len() != rows
            || raw.values.iter().any(|r| r.len() != cols)
            || raw.mask.iter().any(|r| r.len() != cols)
        {
            return Err(Error::Dimension("ragged coefficient matrix".into()));
        }
        let mut c = Self {
            values: DMatrix::from_fn(rows, cols, |i, j| raw.values[i][j]),
            mask: DMatrix::from_fn(rows, cols, |i, j| raw.mask[i][j]),
        };
        c.enforce_mask();
        Ok(c)
    }
}

impl CoefficientMatrix {
    /// All entries active and zero.
    pub fn zeros(features: usize, states: usize) -> Self {
        Self { values: DMatrix::zeros(features, states), mask: DMatrix::from_element(features, states, true) }
    }

    /// Dense matrix; every entry active.
    pub fn from_values(values: DMatrix<f64>) -> Self {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self { values, mask }
    }

    /// Entries that are exactly zero start inactive.
    pub fn from_sparse(values: DMatrix<f64>) -> Self {
        let mask = values.map(|v| v != 0.0);
        Self { values, mask }
    }

    pub fn with_mask(values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::Dimension("mask and values differ in shape".into()));
        }
        let mut c = Self { values, mask };
        c.enforce_mask();
        Ok(c)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, feature: usize, state: usize) -> f64 {
        self.values[(feature, state)]
    }

    pub fn is_active(&self, feature: usize, state: usize) -> bool {
        self.mask[(feature, state)]
    }

    /// Writes an entry; writes to inactive entries are ignored.
    pub fn set(&mut self, feature: usize, state: usize, value: f64) {
        if self.mask[(feature, state)] {
            self.values[(feature, state)] = value;
        }
    }

    /// Zeroes and deactivates an entry.
    pub fn deactivate(&mut self, feature: usize, state: usize) {
        self.mask[(feature, state)] = false;
        self.values[(feature, state)] = 0.0;
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Active entries as `(feature, state)` in column-major order.
    pub fn active_entries(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.ncols() {
            for d in 0..self.nrows() {
                if self.mask[(d, j)] {
                    out.push((d, j));
                }
            }
        }
        out
    }

    fn enforce_mask(&mut self) {
        for (v, m) in self.values.iter_mut().zip(self.mask.iter()) {
            if !m {
                *v = 0.0;
            }
        }
    }
}

/// A dictionary together with the coefficients that combine its features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPart {
    pub dictionary: Dictionary,
    pub coefficients: CoefficientMatrix,
}

impl ModelPart {
    pub fn new(dictionary: Dictionary, coefficients: CoefficientMatrix) -> Result<Self> {
        if coefficients.nrows() != dictionary.len() {
            return Err(Error::Dimension(format!(
                "{} coefficient rows for {} features",
                coefficients.nrows(),
                dictionary.len()
            )));
        }
        Ok(Self { dictionary, coefficients })
    }

    /// Zero-initialised, fully active part.
    pub fn zeros(dictionary: Dictionary, states: usize) -> Self {
        let coefficients = CoefficientMatrix::zeros(dictionary.len(), states);
        Self { dictionary, coefficients }
    }

    /// `out[j] = sum_d Φ_d(z) Θ[d, j]`.
    pub fn eval(&self, z: &[f64], out: &mut [f64]) {
        let mut phi = vec![0.0; self.dictionary.len()];
        self.dictionary.eval_into(z, &mut phi);
        combine(&phi, self.coefficients.values(), out);
    }
}

pub(crate) fn combine(phi: &[f64], theta: &DMatrix<f64>, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = phi.iter().enumerate().map(|(d, p)| p * theta[(d, j)]).sum();
    }
}

/// Which term of the vector field a part represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartRole {
    /// The plain field, or the additive `k` of the extended form.
    Additive,
    Numerator,
    Denominator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormKind {
    Plain,
    Rational,
    Extended,
}

impl std::str::FromStr for FormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Self::Plain),
            "rational" => Ok(Self::Rational),
            "extended" => Ok(Self::Extended),
            other => Err(Error::Config(format!("unknown model form '{other}'"))),
        }
    }
}

/// The candidate vector field: `Φ(x)Θ`, `g/(1+h)` or `k + g/(1+h)` per
/// state equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum ModelForm {
    Plain { field: ModelPart },
    Rational { numerator: ModelPart, denominator: ModelPart },
    Extended { additive: ModelPart, numerator: ModelPart, denominator: ModelPart },
}

impl ModelForm {
    pub fn plain(dictionary: Dictionary, states: usize) -> Self {
        Self::Plain { field: ModelPart::zeros(dictionary, states) }
    }

    /// Rational form; the constant feature is stripped from the denominator
    /// dictionary since its constant is fixed to one.
    pub fn rational(numerator: Dictionary, denominator: &Dictionary, states: usize) -> Self {
        Self::Rational {
            numerator: ModelPart::zeros(numerator, states),
            denominator: ModelPart::zeros(denominator.without_constant(), states),
        }
    }

    pub fn extended(additive: Dictionary, numerator: Dictionary, denominator: &Dictionary, states: usize) -> Self {
        Self::Extended {
            additive: ModelPart::zeros(additive, states),
            numerator: ModelPart::zeros(numerator, states),
            denominator: ModelPart::zeros(denominator.without_constant(), states),
        }
    }

    /// Builds a form from parts, checking shapes and the denominator rule.
    pub fn from_parts(kind: FormKind, parts: Vec<ModelPart>) -> Result<Self> {
        let form = match (kind, parts.len()) {
            (FormKind::Plain, 1) => {
                let mut it = parts.into_iter();
                Self::Plain { field: it.next().unwrap() }
            }
            (FormKind::Rational, 2) => {
                let mut it = parts.into_iter();
                Self::Rational { numerator: it.next().unwrap(), denominator: it.next().unwrap() }
            }
            (FormKind::Extended, 3) => {
                let mut it = parts.into_iter();
                Self::Extended {
                    additive: it.next().unwrap(),
                    numerator: it.next().unwrap(),
                    denominator: it.next().unwrap(),
                }
            }
            (k, len) => return Err(Error::Dimension(format!("{k:?} form cannot take {len} parts"))),
        };
        form.validate()?;
        Ok(form)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = self.parts();
        let n = parts[0].1.coefficients.ncols();
        let q = parts[0].1.dictionary.num_vars();
        for (role, p) in &parts {
            if p.coefficients.ncols() != n || p.dictionary.num_vars() != q {
                return Err(Error::Dimension("model parts disagree in dimensions".into()));
            }
            if p.coefficients.nrows() != p.dictionary.len() {
                return Err(Error::Dimension("coefficient rows differ from dictionary size".into()));
            }
            if *role == PartRole::Denominator && p.dictionary.has_constant() {
                return Err(Error::Parameter("denominator dictionary must not contain the constant".into()));
            }
        }
        if q < n {
            return Err(Error::Dimension("dictionary has fewer variables than states".into()));
        }
        Ok(())
    }

    pub fn kind(&self) -> FormKind {
        match self {
            Self::Plain { .. } => FormKind::Plain,
            Self::Rational { .. } => FormKind::Rational,
            Self::Extended { .. } => FormKind::Extended,
        }
    }

    pub fn parts(&self) -> Vec<(PartRole, &ModelPart)> {
        match self {
            Self::Plain { field } => vec![(PartRole::Additive, field)],
            Self::Rational { numerator, denominator } => {
                vec![(PartRole::Numerator, numerator), (PartRole::Denominator, denominator)]
            }
            Self::Extended { additive, numerator, denominator } => vec![
                (PartRole::Additive, additive),
                (PartRole::Numerator, numerator),
                (PartRole::Denominator, denominator),
            ],
        }
    }

    pub fn parts_mut(&mut self) -> Vec<(PartRole, &mut ModelPart)> {
        match self {
            Self::Plain { field } => vec![(PartRole::Additive, field)],
            Self::Rational { numerator, denominator } => {
                vec![(PartRole::Numerator, numerator), (PartRole::Denominator, denominator)]
            }
            Self::Extended { additive, numerator, denominator } => vec![
                (PartRole::Additive, additive),
                (PartRole::Numerator, numerator),
                (PartRole::Denominator, denominator),
            ],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.parts()[0].1.coefficients.ncols()
    }

    /// Augmented variable count (states, inputs, parameters).
    pub fn num_vars(&self) -> usize {
        self.parts()[0].1.dictionary.num_vars()
    }

    pub fn active_count(&self) -> usize {
        self.parts().iter().map(|(_, p)| p.coefficients.active_count()).sum()
    }

    /// Number of trainable scalars: active coefficients plus all η.
    pub fn num_trainable(&self) -> usize {
        self.parts()
            .iter()
            .map(|(_, p)| p.coefficients.active_count() + p.dictionary.eta().len())
            .sum()
    }

    /// Flattens trainable values: per part, active coefficients in
    /// column-major order; then every part's η in part order.
    pub fn pack(&self) -> Vec<f64> {
        let parts = self.parts();
        let mut out = Vec::with_capacity(self.num_trainable());
        for (_, p) in &parts {
            out.extend(p.coefficients.active_entries().into_iter().map(|(d, j)| p.coefficients.get(d, j)));
        }
        for (_, p) in &parts {
            out.extend_from_slice(p.dictionary.eta());
        }
        out
    }

    pub fn unpack(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_trainable() {
            return Err(Error::Dimension(format!(
                "{} values for {} trainable entries",
                values.len(),
                self.num_trainable()
            )));
        }
        let mut it = values.iter().copied();
        let mut parts = self.parts_mut();
        for (_, p) in parts.iter_mut() {
            for (d, j) in p.coefficients.active_entries() {
                p.coefficients.set(d, j, it.next().unwrap());
            }
        }
        for (_, p) in parts.iter_mut() {
            for e in p.dictionary.eta_mut() {
                *e = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Labels of the packed trainable entries, for diagnostics.
    pub fn trainable_labels(&self) -> Vec<String> {
        let parts = self.parts();
        let mut out = Vec::new();
        for (role, p) in &parts {
            for (d, j) in p.coefficients.active_entries() {
                out.push(format!("{role:?}[{}, eq {}]", p.dictionary.feature_name(d), j + 1));
            }
        }
        for (role, p) in &parts {
            for k in 0..p.dictionary.eta().len() {
                out.push(format!("{role:?}.eta{}", k + 1));
            }
        }
        out
    }

    /// Sum of absolute values of active coefficients (η excluded).
    pub fn l1_norm(&self) -> f64 {
        self.parts()
            .iter()
            .map(|(_, p)| p.coefficients.values().iter().map(|v| v.abs()).sum::<f64>())
            .sum()
    }

    /// Evaluates the vector field at augmented point `[x, aux]`.
    pub fn eval(&self, x: &[f64], aux: &[f64], dx: &mut [f64]) {
        let mut z = Vec::with_capacity(x.len() + aux.len());
        z.extend_from_slice(x);
        z.extend_from_slice(aux);
        let n = dx.len();
        match self {
            Self::Plain { field } => field.eval(&z, dx),
            Self::Rational { numerator, denominator } => {
                let mut g = vec![0.0; n];
                let mut h = vec![0.0; n];
                numerator.eval(&z, &mut g);
                denominator.eval(&z, &mut h);
                for j in 0..n {
                    dx[j] = g[j] / (1.0 + h[j]);
                }
            }
            Self::Extended { additive, numerator, denominator } => {
                let mut k = vec![0.0; n];
                let mut g = vec![0.0; n];
                let mut h = vec![0.0; n];
                additive.eval(&z, &mut k);
                numerator.eval(&z, &mut g);
                denominator.eval(&z, &mut h);
                for j in 0..n {
                    dx[j] = k[j] + g[j] / (1.0 + h[j]);
                }
            }
        }
    }

    /// Renames the augmented variables in every part's dictionary.
    pub fn set_variable_names(&mut self, names: &[String]) -> Result<()> {
        for (_, p) in self.parts_mut() {
            p.dictionary.set_variable_names(names.to_vec())?;
        }
        Ok(())
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.parts()[0].1.dictionary.variable_names().to_vec()
    }
}

impl AugmentedField for ModelForm {
    fn eval_aug(&self, x: &[f64], aux: &[f64], dx: &mut [f64]) {
        self.eval(x, aux, dx)
    }
}
