//! Text rendering of model equations.

use crate::model::{ModelForm, ModelPart};

fn number(v: f64, precision: Option<usize>) -> String {
    match precision {
        Some(p) => format!("{v:.p$}"),
        None => format!("{v}"),
    }
}

/// `-0.100 x + 2.000 y` for column `j` of a part, each coefficient
/// multiplied by `factor`; `None` when the column is empty.
fn sum_terms(part: &ModelPart, j: usize, factor: f64, precision: Option<usize>, skip_constant: bool) -> Option<String> {
    let mut out = String::new();
    for d in 0..part.coefficients.nrows() {
        if !part.coefficients.is_active(d, j) {
            continue;
        }
        let v = part.coefficients.get(d, j) * factor;
        let label = part.dictionary.feature_label(d, precision);
        if skip_constant && label == "1" {
            continue;
        }
        let body = if label == "1" { number(v.abs(), precision) } else { format!("{} {label}", number(v.abs(), precision)) };
        if out.is_empty() {
            if v.is_sign_negative() {
                out.push('-');
            }
        } else {
            out.push_str(if v.is_sign_negative() { " - " } else { " + " });
        }
        out.push_str(&body);
    }
    (!out.is_empty()).then_some(out)
}

/// One line per state equation, e.g. `dx/dt = -0.100 x + 2.000 y`.
/// `precision` is the number of decimals; `None` prints the shortest
/// representation that reads back exactly.
pub fn render_equations(form: &ModelForm, precision: Option<usize>) -> Vec<String> {
    render_with_denominator(form, precision, 1.0)
}

/// Like [`render_equations`], but rational equations are scaled so that the
/// denominator's constant reads `denominator_constant`, e.g.
/// `(-0.449 - 0.900 s) / (0.674 + 0.350 s)`.
pub fn render_with_denominator(form: &ModelForm, precision: Option<usize>, denominator_constant: f64) -> Vec<String> {
    let names = form.variable_names();
    (0..form.state_dim())
        .map(|j| {
            let lhs = format!("d{}/dt = ", names[j]);
            let rhs = match form {
                ModelForm::Plain { field } => sum_terms(field, j, 1.0, precision, false).unwrap_or_else(|| "0".into()),
                ModelForm::Rational { numerator, denominator } => {
                    rational(numerator, denominator, j, precision, denominator_constant)
                }
                ModelForm::Extended { additive, numerator, denominator } => {
                    let r = rational(numerator, denominator, j, precision, denominator_constant);
                    match sum_terms(additive, j, 1.0, precision, false) {
                        Some(k) => format!("{k} + {r}"),
                        None => r,
                    }
                }
            };
            lhs + &rhs
        })
        .collect()
}

fn rational(g: &ModelPart, h: &ModelPart, j: usize, precision: Option<usize>, c: f64) -> String {
    let num = sum_terms(g, j, c, precision, false).unwrap_or_else(|| "0".into());
    let den = match sum_terms(h, j, c, precision, true) {
        Some(rest) if rest.starts_with('-') => format!("{} - {}", number(c, precision), &rest[1..]),
        Some(rest) => format!("{} + {rest}", number(c, precision)),
        None => number(c, precision),
    };
    format!("({num}) / ({den})")
}
