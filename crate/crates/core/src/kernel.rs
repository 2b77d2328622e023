//! Row kernel for the one-step RK4 loss: forward stage evaluation and the
//! reverse sweep through the four stages.
//!
//! Monomials are evaluated once per point through a parent table (each
//! monomial is a lower one times a single variable), and partial derivatives
//! reuse the same table.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::dictionary::{Dictionary, FeatureKind};
use crate::model::{FormKind, ModelForm, PartRole};
use crate::rk4::{PredictionPair, Rk4Weights};

#[derive(Debug, Clone, Copy)]
enum Scale {
    Fixed(f64),
    Eta(usize),
}

#[derive(Debug, Clone)]
struct CompiledFeature {
    kind: FeatureKind,
    mono: usize,
    scale: Scale,
    /// `(state variable, exponent, index of monomial with that exponent lowered)`
    partials: Vec<(usize, f64, usize)>,
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledDictionary {
    /// Monomial `m >= 1` equals `monos[parent] * z[var]`; monomial 0 is 1.
    parents: Vec<(usize, usize)>,
    features: Vec<CompiledFeature>,
}

impl CompiledDictionary {
    pub(crate) fn new(dict: &Dictionary, n_state: usize) -> Self {
        let q = dict.num_vars();
        let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut parents = vec![(0, 0)];
        index.insert(vec![0; q], 0);

        fn insert(e: &[u32], index: &mut HashMap<Vec<u32>, usize>, parents: &mut Vec<(usize, usize)>) -> usize {
            if let Some(&i) = index.get(e) {
                return i;
            }
            let var = e.iter().position(|&x| x > 0).expect("nonzero exponent");
            let mut lower = e.to_vec();
            lower[var] -= 1;
            let parent = insert(&lower, index, parents);
            parents.push((parent, var));
            index.insert(e.to_vec(), parents.len() - 1);
            parents.len() - 1
        }

        let features = dict
            .features()
            .iter()
            .map(|f| {
                let mono = insert(&f.exponents, &mut index, &mut parents);
                let mut partials = Vec::new();
                if f.kind != FeatureKind::Constant {
                    for i in 0..n_state.min(q) {
                        if f.exponents[i] > 0 {
                            let mut lower = f.exponents.clone();
                            lower[i] -= 1;
                            let r = insert(&lower, &mut index, &mut parents);
                            partials.push((i, f.exponents[i] as f64, r));
                        }
                    }
                }
                CompiledFeature {
                    kind: f.kind,
                    mono,
                    scale: f.eta_index.map_or(Scale::Fixed(f.scale), Scale::Eta),
                    partials,
                }
            })
            .collect();
        Self { parents, features }
    }

    pub(crate) fn num_monos(&self) -> usize {
        self.parents.len()
    }

    pub(crate) fn len(&self) -> usize {
        self.features.len()
    }

    fn scale(&self, f: &CompiledFeature, eta: &[f64]) -> f64 {
        match f.scale {
            Scale::Fixed(s) => s,
            Scale::Eta(i) => eta[i],
        }
    }

    pub(crate) fn eval(&self, z: &[f64], eta: &[f64], monos: &mut [f64], out: &mut [f64]) {
        monos[0] = 1.0;
        for m in 1..self.parents.len() {
            let (p, v) = self.parents[m];
            monos[m] = monos[p] * z[v];
        }
        for (f, o) in self.features.iter().zip(out.iter_mut()) {
            let a = monos[f.mono];
            *o = match f.kind {
                FeatureKind::Constant => 1.0,
                FeatureKind::Monomial => a,
                FeatureKind::Sine => (self.scale(f, eta) * a).sin(),
                FeatureKind::Cosine => (self.scale(f, eta) * a).cos(),
                FeatureKind::Exponential => (self.scale(f, eta) * a).exp(),
            };
        }
    }

    /// Given monomials evaluated at the point, accumulates
    /// `sum_d w[d] dΦ_d/dz` into `zbar` (when given) and the η gradient.
    pub(crate) fn vjp(&self, eta: &[f64], monos: &[f64], w: &[f64], mut zbar: Option<&mut [f64]>, etabar: &mut [f64]) {
        for (f, &wd) in self.features.iter().zip(w) {
            if wd == 0.0 || f.kind == FeatureKind::Constant {
                continue;
            }
            let a = monos[f.mono];
            let (outer, d_scale) = match f.kind {
                FeatureKind::Monomial => (1.0, 0.0),
                FeatureKind::Sine => {
                    let s = self.scale(f, eta);
                    let c = (s * a).cos();
                    (s * c, a * c)
                }
                FeatureKind::Cosine => {
                    let s = self.scale(f, eta);
                    let sn = (s * a).sin();
                    (-s * sn, -a * sn)
                }
                FeatureKind::Exponential => {
                    let s = self.scale(f, eta);
                    let e = (s * a).exp();
                    (s * e, a * e)
                }
                FeatureKind::Constant => unreachable!(),
            };
            if let Some(zb) = zbar.as_deref_mut() {
                let g = wd * outer;
                for &(i, c, r) in &f.partials {
                    zb[i] += g * c * monos[r];
                }
            }
            if let Scale::Eta(j) = f.scale {
                etabar[j] += wd * d_scale;
            }
        }
    }
}

struct KernelPart {
    role: PartRole,
    dict: CompiledDictionary,
    /// Row-major features by states.
    theta: Vec<f64>,
    eta: Vec<f64>,
}

/// Evaluation settings shared by loss and gradient.
#[derive(Debug, Clone, Copy)]
pub(crate) struct KernelSettings {
    pub weights: Rk4Weights,
    pub denominator_floor: f64,
    pub penalty_value: f64,
}

pub(crate) struct Kernel {
    kind: FormKind,
    n: usize,
    q: usize,
    parts: Vec<KernelPart>,
    settings: KernelSettings,
}

/// Accumulated sums over a set of rows.
#[derive(Debug, Clone)]
pub(crate) struct RowSums {
    pub loss: f64,
    pub penalized: usize,
    /// Per part, dense row-major Θ gradient.
    pub theta: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
}

impl RowSums {
    fn zeros(kernel: &Kernel) -> Self {
        Self {
            loss: 0.0,
            penalized: 0,
            theta: kernel.parts.iter().map(|p| vec![0.0; p.theta.len()]).collect(),
            eta: kernel.parts.iter().map(|p| vec![0.0; p.eta.len()]).collect(),
        }
    }

    pub(crate) fn add(&mut self, other: &RowSums) {
        self.loss += other.loss;
        self.penalized += other.penalized;
        for (a, b) in self.theta.iter_mut().zip(&other.theta) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.eta.iter_mut().zip(&other.eta) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

struct Scratch {
    z: [Vec<f64>; 4],
    monos: Vec<[Vec<f64>; 4]>,
    feats: Vec<[Vec<f64>; 4]>,
    outs: Vec<[Vec<f64>; 4]>,
    k: [Vec<f64>; 4],
    residual: Vec<f64>,
    kbar: [Vec<f64>; 4],
    zbar: Vec<f64>,
    outbar: Vec<Vec<f64>>,
    w: Vec<f64>,
}

fn four(len: usize) -> [Vec<f64>; 4] {
    [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]]
}

const CHUNK: usize = 256;

impl Kernel {
    pub(crate) fn new(form: &ModelForm, settings: KernelSettings) -> Self {
        let n = form.state_dim();
        let parts = form
            .parts()
            .into_iter()
            .map(|(role, p)| {
                let d = p.dictionary.len();
                let vals = p.coefficients.values();
                let mut theta = vec![0.0; d * n];
                for r in 0..d {
                    for j in 0..n {
                        theta[r * n + j] = vals[(r, j)];
                    }
                }
                KernelPart {
                    role,
                    dict: CompiledDictionary::new(&p.dictionary, n),
                    theta,
                    eta: p.dictionary.eta().to_vec(),
                }
            })
            .collect();
        Self { kind: form.kind(), n, q: form.num_vars(), parts, settings }
    }

    fn scratch(&self) -> Scratch {
        let max_d = self.parts.iter().map(|p| p.dict.len()).max().unwrap_or(0);
        Scratch {
            z: four(self.q),
            monos: self.parts.iter().map(|p| four(p.dict.num_monos())).collect(),
            feats: self.parts.iter().map(|p| four(p.dict.len())).collect(),
            outs: self.parts.iter().map(|_| four(self.n)).collect(),
            k: four(self.n),
            residual: vec![0.0; self.n],
            kbar: four(self.n),
            zbar: vec![0.0; self.n],
            outbar: self.parts.iter().map(|_| vec![0.0; self.n]).collect(),
            w: vec![0.0; max_d],
        }
    }

    fn part_index(&self, role: PartRole) -> Option<usize> {
        self.parts.iter().position(|p| p.role == role)
    }

    /// Evaluates stage `s` at `s.z[s]` into `s.k[s]`; false when the
    /// denominator crosses the floor or the value is non-finite.
    fn eval_stage(&self, stage: usize, s: &mut Scratch) -> bool {
        let n = self.n;
        for (pi, p) in self.parts.iter().enumerate() {
            p.dict.eval(&s.z[stage], &p.eta, &mut s.monos[pi][stage], &mut s.feats[pi][stage]);
            let feats = &s.feats[pi][stage];
            let out = &mut s.outs[pi][stage];
            out.fill(0.0);
            for (d, &phi) in feats.iter().enumerate() {
                if phi == 0.0 {
                    continue;
                }
                let row = &p.theta[d * n..(d + 1) * n];
                for j in 0..n {
                    out[j] += phi * row[j];
                }
            }
        }
        let k = &mut s.k[stage];
        match self.kind {
            FormKind::Plain => k.copy_from_slice(&s.outs[0][stage]),
            FormKind::Rational | FormKind::Extended => {
                let off = usize::from(self.kind == FormKind::Extended);
                for j in 0..n {
                    let den = 1.0 + s.outs[off + 1][stage][j];
                    if !(den.abs() >= self.settings.denominator_floor) {
                        return false;
                    }
                    k[j] = s.outs[off][stage][j] / den;
                    if off == 1 {
                        k[j] += s.outs[0][stage][j];
                    }
                }
            }
        }
        k.iter().all(|v| v.is_finite())
    }

    /// Forward pass for one row; returns the squared residual sum or `None`
    /// for a penalised row.
    fn forward(&self, pair: &PredictionPair, row: usize, s: &mut Scratch) -> Option<f64> {
        let n = self.n;
        let h = pair.steps[row];
        let offsets = [0.5 * h, 0.5 * h, h];
        let aux = [&pair.aux_start, &pair.aux_mid, &pair.aux_mid, &pair.aux_end];
        let a = pair.aux_dim();
        for stage in 0..4 {
            for i in 0..n {
                let x = pair.sources[(row, i)];
                s.z[stage][i] = if stage == 0 { x } else { x + offsets[stage - 1] * s.k[stage - 1][i] };
            }
            for i in 0..a {
                s.z[stage][n + i] = aux[stage][(row, i)];
            }
            if !self.eval_stage(stage, s) {
                return None;
            }
        }
        let w = self.settings.weights.weights();
        let mut sum = 0.0;
        for i in 0..n {
            let y = pair.sources[(row, i)] + h * (0..4).map(|st| w[st] * s.k[st][i]).sum::<f64>();
            let r = pair.targets[(row, i)] - y;
            s.residual[i] = r;
            sum += r * r;
        }
        sum.is_finite().then_some(sum)
    }

    /// Reverse sweep for one row after `forward`, with `d loss / d r = 2 scale r`.
    fn backward(&self, pair: &PredictionPair, row: usize, scale: f64, s: &mut Scratch, acc: &mut RowSums) {
        let n = self.n;
        let h = pair.steps[row];
        let w = self.settings.weights.weights();
        let offsets = [0.5 * h, 0.5 * h, h];
        for st in 0..4 {
            for i in 0..n {
                s.kbar[st][i] = -2.0 * scale * s.residual[i] * h * w[st];
            }
        }
        let num = self.part_index(PartRole::Numerator);
        let den = self.part_index(PartRole::Denominator);
        let add = self.part_index(PartRole::Additive);
        for st in (0..4).rev() {
            for ob in s.outbar.iter_mut() {
                ob.fill(0.0);
            }
            let kb = &s.kbar[st];
            if let Some(ai) = add {
                s.outbar[ai].copy_from_slice(kb);
            }
            if let (Some(gi), Some(hi)) = (num, den) {
                for j in 0..n {
                    let g = s.outs[gi][st][j];
                    let d = 1.0 + s.outs[hi][st][j];
                    s.outbar[gi][j] = kb[j] / d;
                    s.outbar[hi][j] = -kb[j] * g / (d * d);
                }
            }
            s.zbar.fill(0.0);
            for (pi, p) in self.parts.iter().enumerate() {
                let feats = &s.feats[pi][st];
                let ob = &s.outbar[pi];
                let tg = &mut acc.theta[pi];
                let dcount = p.dict.len();
                for d in 0..dcount {
                    let phi = feats[d];
                    let row_t = &p.theta[d * n..(d + 1) * n];
                    let mut wd = 0.0;
                    for j in 0..n {
                        tg[d * n + j] += phi * ob[j];
                        wd += row_t[j] * ob[j];
                    }
                    s.w[d] = wd;
                }
                let zb = if st > 0 { Some(&mut s.zbar[..]) } else { None };
                p.dict.vjp(&p.eta, &s.monos[pi][st], &s.w[..dcount], zb, &mut acc.eta[pi]);
            }
            if st > 0 {
                let c = offsets[st - 1];
                for i in 0..n {
                    s.kbar[st - 1][i] += c * s.zbar[i];
                }
            }
        }
    }

    /// Sums over `rows` of `pair`. With `gradient_scale = Some(c)`, also
    /// accumulates the gradient of `c * sum of squared residuals`.
    pub(crate) fn sums(&self, pair: &PredictionPair, rows: Option<&[usize]>, gradient_scale: Option<f64>) -> RowSums {
        let total = rows.map_or(pair.len(), <[usize]>::len);
        let chunks = total.div_ceil(CHUNK);
        let partial: Vec<RowSums> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut s = self.scratch();
                let mut acc = RowSums::zeros(self);
                let start = c * CHUNK;
                let end = (start + CHUNK).min(total);
                for idx in start..end {
                    let row = rows.map_or(idx, |r| r[idx]);
                    match self.forward(pair, row, &mut s) {
                        Some(sq) => {
                            acc.loss += sq;
                            if let Some(scale) = gradient_scale {
                                self.backward(pair, row, scale, &mut s, &mut acc);
                            }
                        }
                        None => {
                            acc.loss += self.settings.penalty_value * self.n as f64;
                            acc.penalized += 1;
                        }
                    }
                }
                acc
            })
            .collect();
        let mut out = RowSums::zeros(self);
        for p in &partial {
            out.add(p);
        }
        out
    }
}
