//! Numeric kernels shared by the probes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("sample of size {0} is too small (need at least 2)")]
    SampleTooSmall(usize),
    #[error("floor must be positive, got {0}")]
    BadFloor(f64),
}

/// Norms below this are treated as zero by [`cosine_similarity`].
pub const ZERO_NORM: f64 = 1e-30;

/// `KL(target || predicted)` in nats, with `predicted` floored at `floor`.
/// Terms where the target is zero contribute nothing.
pub fn kl_divergence(target: &[f64], predicted: &[f64], floor: f64) -> Result<f64, StatsError> {
    if target.len() != predicted.len() {
        return Err(StatsError::LengthMismatch(target.len(), predicted.len()));
    }
    if floor.is_nan() || floor <= 0.0 {
        return Err(StatsError::BadFloor(floor));
    }
    let mut total = 0.0;
    for (&t, &p) in target.iter().zip(predicted) {
        if t > 0.0 {
            total += t * (t / p.max(floor)).ln();
        }
    }
    // Rounding can leave a tiny negative value when target == predicted.
    Ok(total.max(0.0))
}

/// Cosine similarity; 0 when either vector has (numerically) zero norm.
pub fn cosine_similarity<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64, StatsError> {
    if u.len() != v.len() {
        return Err(StatsError::LengthMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.into(), b.into());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let (nu, nv) = (nu.sqrt(), nv.sqrt());
    if nu < ZERO_NORM || nv < ZERO_NORM {
        log::debug!("cosine similarity with zero-norm vector, defined as 0");
        return Ok(0.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64), StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

pub fn mean(values: &[f64]) -> Result<f64, StatsError> {
    mean_std(values).map(|(m, _)| m)
}

/// Text normalization applied before token-level F1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lowercase: bool,
    pub strip_punctuation: bool,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            lowercase: true,
            strip_punctuation: true,
        }
    }
}

impl Normalizer {
    pub fn tokens(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|tok| {
                let tok = if self.strip_punctuation {
                    tok.trim_matches(|c: char| c.is_ascii_punctuation() || is_unicode_punct(c))
                } else {
                    tok
                };
                if self.lowercase {
                    tok.to_lowercase()
                } else {
                    tok.to_string()
                }
            })
            .filter(|t| !t.is_empty())
            .collect()
    }
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2018}'
            | '\u{2019}'
            | '\u{201C}'
            | '\u{201D}'
            | '\u{2013}'
            | '\u{2014}'
            | '\u{2026}'
            | '\u{00BF}'
            | '\u{00A1}'
            | '\u{00AB}'
            | '\u{00BB}'
    )
}

/// Token-overlap F1 with multiset overlap.
pub fn token_f1(predicted: &str, gold: &str, normalizer: &Normalizer) -> f64 {
    let pred = normalizer.tokens(predicted);
    let gold = normalizer.tokens(gold);
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut remaining: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for g in &gold {
        *remaining.entry(g.as_str()).or_default() += 1;
    }
    let mut overlap = 0usize;
    for p in &pred {
        if let Some(n) = remaining.get_mut(p.as_str()) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Alternative: mean(a) > mean(b).
    Greater,
    /// Alternative: mean(a) < mean(b).
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value_one_sided: f64,
    pub direction: Direction,
    /// Both samples have zero variance; t and p are limits, not test results.
    pub degenerate: bool,
}

impl WelchResult {
    pub fn rejects_at(&self, alpha: f64) -> bool {
        !self.degenerate && self.p_value_one_sided < alpha
    }
}

fn sample_mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// One-sided Welch's unequal-variance t-test.
pub fn welch_one_sided(
    sample_a: &[f64],
    sample_b: &[f64],
    direction: Direction,
) -> Result<WelchResult, StatsError> {
    for s in [sample_a, sample_b] {
        if s.len() < 2 {
            return Err(StatsError::SampleTooSmall(s.len()));
        }
    }
    let (na, nb) = (sample_a.len() as f64, sample_b.len() as f64);
    let (ma, va) = sample_mean_var(sample_a);
    let (mb, vb) = sample_mean_var(sample_b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let diff = ma - mb;
        let t = if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        let p_greater = if diff > 0.0 {
            0.0
        } else if diff < 0.0 {
            1.0
        } else {
            0.5
        };
        return Ok(WelchResult {
            t_statistic: t,
            degrees_of_freedom: na + nb - 2.0,
            p_value_one_sided: match direction {
                Direction::Greater => p_greater,
                Direction::Less => 1.0 - p_greater,
            },
            direction,
            degenerate: true,
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let p = match direction {
        Direction::Greater => student_t_sf(t, dof),
        Direction::Less => student_t_cdf(t, dof),
    };
    Ok(WelchResult {
        t_statistic: t,
        degrees_of_freedom: dof,
        p_value_one_sided: p.clamp(0.0, 1.0),
        direction,
        degenerate: false,
    })
}

/// `P(T > t)` for Student's t with `dof` degrees of freedom.
pub fn student_t_sf(t: f64, dof: f64) -> f64 {
    if t.is_nan() || dof.is_nan() || dof <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let t2 = t * t;
    // P(|T| > |t|) = I_{dof/(dof+t^2)}(dof/2, 1/2)
    let x = dof / (dof + t2);
    let one_minus_x = t2 / (dof + t2);
    let tail = 0.5 * reg_inc_beta_split(0.5 * dof, 0.5, x, one_minus_x);
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    if t.is_nan() || dof.is_nan() || dof <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    student_t_sf(-t, dof)
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    reg_inc_beta_split(a, b, x, 1.0 - x)
}

// `y` carries 1 - x so callers can supply it without cancellation.
fn reg_inc_beta_split(a: f64, b: f64, x: f64, y: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if y <= 0.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * y.ln();
    let front = ln_front.exp();
    // The continued fraction converges fast for x < (a+1)/(a+b+2); use the
    // reflection I_x(a,b) = 1 - I_{1-x}(b,a) otherwise.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, y) / b
    }
}

const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 1000;

/// Modified Lentz evaluation of the incomplete-beta continued fraction
/// `1/(1+ d1/(1+ d2/(1+ ...)))` with
/// `d_{2m+1} = -(a+m)(a+b+m)x / ((a+2m)(a+2m+1))` and
/// `d_{2m} = m(b-m)x / ((a+2m-1)(a+2m))`.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_EPS {
            return h;
        }
    }
    log::warn!("incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})");
    h
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
