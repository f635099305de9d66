//! Maximum-likelihood fitters for the five candidate families.

use thiserror::Error;

use super::dist::{Distribution, Family};
use super::special::{digamma, trigamma};

const TOL: f64 = 1e-10;
const MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FitError {
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("sample contains non-finite values")]
    NonFiniteSample,
    #[error("sample contains non-positive values")]
    NonPositiveSample,
    #[error("sample is degenerate (no spread)")]
    DegenerateSample,
    #[error("{0:?} fit did not converge")]
    NoConvergence(Family),
    #[error("no requested family could be fitted")]
    AllFitsFailed,
}

fn check(sample: &[f64], positive: bool) -> Result<(), FitError> {
    if sample.len() < 2 {
        return Err(FitError::TooFewObservations(sample.len()));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(FitError::NonFiniteSample);
    }
    if positive && sample.iter().any(|&x| x <= 0.0) {
        return Err(FitError::NonPositiveSample);
    }
    Ok(())
}

fn all_equal(sample: &[f64]) -> bool {
    sample.iter().all(|&x| x == sample[0])
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn fit(family: Family, sample: &[f64]) -> Result<Distribution, FitError> {
    match family {
        Family::Exponential => fit_exponential(sample),
        Family::Normal => fit_normal(sample),
        Family::Gamma => fit_gamma(sample),
        Family::Weibull => fit_weibull(sample),
        Family::LogLogistic => fit_loglogistic(sample),
    }
}

pub fn fit_exponential(sample: &[f64]) -> Result<Distribution, FitError> {
    check(sample, true)?;
    Ok(Distribution::Exponential { rate: 1.0 / mean(sample) })
}

/// Population (divide-by-n) variance, which is the MLE.
pub fn fit_normal(sample: &[f64]) -> Result<Distribution, FitError> {
    check(sample, false)?;
    let mu = mean(sample);
    let var = sample.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / sample.len() as f64;
    if var <= 0.0 || all_equal(sample) {
        return Err(FitError::DegenerateSample);
    }
    Ok(Distribution::Normal { mean: mu, std_dev: var.sqrt() })
}

/// Newton iteration on `ln k - ψ(k) = ln(mean) - mean(ln x)`.
pub fn fit_gamma(sample: &[f64]) -> Result<Distribution, FitError> {
    check(sample, true)?;
    if all_equal(sample) {
        return Err(FitError::DegenerateSample);
    }
    let m = mean(sample);
    let mean_ln = sample.iter().map(|x| x.ln()).sum::<f64>() / sample.len() as f64;
    let s = m.ln() - mean_ln;
    if s <= 0.0 || !s.is_finite() {
        return Err(FitError::DegenerateSample);
    }
    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..MAX_ITER {
        let f = k.ln() - digamma(k) - s;
        let df = 1.0 / k - trigamma(k);
        let mut next = k - f / df;
        if next <= 0.0 {
            next = k / 2.0;
        }
        let step = (next - k).abs();
        k = next;
        if step < TOL {
            return Ok(Distribution::Gamma { shape: k, scale: m / k });
        }
    }
    Err(FitError::NoConvergence(Family::Gamma))
}

/// Safeguarded Newton on the profile score for the shape, bracketed in
/// `[0.01, 100]`. Works on centred logs so `x^k` never overflows.
pub fn fit_weibull(sample: &[f64]) -> Result<Distribution, FitError> {
    check(sample, true)?;
    if all_equal(sample) {
        return Err(FitError::DegenerateSample);
    }
    let n = sample.len() as f64;
    let mean_ln = sample.iter().map(|x| x.ln()).sum::<f64>() / n;
    let y: Vec<f64> = sample.iter().map(|x| x.ln() - mean_ln).collect();
    let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // g(k) = Σ w y − 1/k with w ∝ exp(k y); g'(k) = Var_w(y) + 1/k²
    let score = |k: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &yi in &y {
            let w = (k * (yi - y_max)).exp();
            s0 += w;
            s1 += w * yi;
            s2 += w * yi * yi;
        }
        let m1 = s1 / s0;
        let var = (s2 / s0 - m1 * m1).max(0.0);
        (m1 - 1.0 / k, var + 1.0 / (k * k), s0)
    };

    let (mut lo, mut hi) = (0.01, 100.0);
    if score(lo).0 > 0.0 || score(hi).0 < 0.0 {
        return Err(FitError::NoConvergence(Family::Weibull));
    }
    let mut k = 1.0;
    let mut converged = false;
    for _ in 0..4 * MAX_ITER {
        let (g, dg, _) = score(k);
        if g < 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let mut next = k - g / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - k).abs();
        k = next;
        if step < TOL || hi - lo < TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FitError::NoConvergence(Family::Weibull));
    }
    let (_, _, s0) = score(k);
    // ln λ = mean_ln + (1/k) ln(mean(exp(k y)))
    let ln_scale = mean_ln + y_max + (s0 / n).ln() / k;
    Ok(Distribution::Weibull { shape: k, scale: ln_scale.exp() })
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Log-likelihood, gradient and Hessian in `(a, b) = (ln α, ln β)`.
fn loglogistic_terms(ln_x: &[f64], sum_ln_x: f64, a: f64, b: f64) -> (f64, [f64; 2], [f64; 3]) {
    let beta = b.exp();
    let n = ln_x.len() as f64;
    let mut ll = n * b - sum_ln_x;
    let (mut ga, mut gb) = (0.0, n);
    let (mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0);
    for &lx in ln_x {
        let t = beta * (lx - a);
        // softplus(t) = ln(1 + e^t), stable on both tails
        let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
        let sig = 1.0 / (1.0 + (-t).exp());
        let r = 1.0 - 2.0 * sig;
        let q = sig * (1.0 - sig);
        ll += t - 2.0 * softplus;
        ga -= r * beta;
        gb += r * t;
        haa -= 2.0 * q * beta * beta;
        hab += 2.0 * beta * q * t - beta * r;
        hbb += -2.0 * q * t * t + r * t;
    }
    (ll, [ga, gb], [haa, hab, hbb])
}

/// 2-D Newton with backtracking in log-parameter space, started from the
/// median and the quartile-ratio shape estimate.
pub fn fit_loglogistic(sample: &[f64]) -> Result<Distribution, FitError> {
    check(sample, true)?;
    if all_equal(sample) {
        return Err(FitError::DegenerateSample);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = quantile_sorted(&sorted, 0.5);
    let (q25, q75) = (quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75));
    let ln_x: Vec<f64> = sample.iter().map(|x| x.ln()).collect();
    let sum_ln_x: f64 = ln_x.iter().sum();

    let beta0 = if q75 > q25 {
        3f64.ln() / (q75 / q25).ln()
    } else {
        // logistic sd of ln x is π / (√3 β)
        let m = sum_ln_x / ln_x.len() as f64;
        let sd = (ln_x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / ln_x.len() as f64).sqrt();
        std::f64::consts::PI / (3f64.sqrt() * sd)
    };
    let (mut a, mut b) = (median.ln(), beta0.ln());
    let (mut ll, mut g, mut h) = loglogistic_terms(&ln_x, sum_ln_x, a, b);

    for _ in 0..2 * MAX_ITER {
        if g[0].abs().max(g[1].abs()) < 1e-8 {
            return Ok(Distribution::LogLogistic { scale: a.exp(), shape: b.exp() });
        }
        let [haa, hab, hbb] = h;
        let det = haa * hbb - hab * hab;
        // Newton direction when the Hessian is negative definite, otherwise
        // a scaled gradient step.
        let (da, db) = if haa < 0.0 && det > 0.0 {
            ((-hbb * g[0] + hab * g[1]) / det, (hab * g[0] - haa * g[1]) / det)
        } else {
            let scale = 1.0 / (1.0 + g[0].abs().max(g[1].abs()));
            (g[0] * scale, g[1] * scale)
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let (na, nb) = (a + t * da, b + t * db);
            let (nll, ng, nh) = loglogistic_terms(&ln_x, sum_ln_x, na, nb);
            if nll.is_finite() && nll >= ll - 1e-12 * ll.abs() {
                a = na;
                b = nb;
                ll = nll;
                g = ng;
                h = nh;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let tiny = (t * da).abs().max((t * db).abs()) < 1e-14;
        if !accepted || tiny {
            // Step can no longer change the parameters: the gradient sits at
            // the rounding floor of an n-term sum.
            let floor = 1e-12 * ln_x.len() as f64;
            if g[0].abs().max(g[1].abs()) < floor.max(1e-8) {
                return Ok(Distribution::LogLogistic { scale: a.exp(), shape: b.exp() });
            }
            if !accepted {
                break;
            }
        }
    }
    Err(FitError::NoConvergence(Family::LogLogistic))
}
