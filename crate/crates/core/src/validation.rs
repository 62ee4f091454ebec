//! Dwell time as a conversion signal: a Welch two-sample t-test on log-dwell
//! split by outcome, and linear versus logistic regression of the outcome on
//! log-dwell ranked by AIC.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::ingest::ClickRecord;

pub const IRLS_MAX_ITERS: u32 = 100;
pub const IRLS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledDwell {
    pub log_dwell: f64,
    pub converted: bool,
}

impl LabeledDwell {
    pub fn new(log_dwell: f64, converted: bool) -> Result<Self> {
        if !log_dwell.is_finite() {
            return Err(Error::Contract(format!("log dwell must be finite, got {log_dwell}")));
        }
        Ok(Self { log_dwell, converted })
    }
}

/// Labeled log-dwell from clicks that carry both a positive dwell and a
/// conversion flag. Returns the samples and the number of clicks skipped.
pub fn labeled_from_records(records: &[ClickRecord]) -> (Vec<LabeledDwell>, usize) {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if let (Some(c), true) = (r.converted, r.dwell_seconds > 0.0) {
            out.push(LabeledDwell { log_dwell: r.dwell_seconds.ln(), converted: c });
        }
    }
    let skipped = records.len() - out.len();
    (out, skipped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance t-test with a two-tailed p-value.
pub fn two_sample_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Contract(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Contract("t-test inputs must be finite".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let diff = ma - mb;
    let (t, df, p) = if se2 == 0.0 {
        let df = na + nb - 2.0;
        if diff == 0.0 {
            (0.0, df, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, df, 0.0)
        }
    } else {
        let t = diff / se2.sqrt();
        let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
        let dist = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::Contract(format!("t distribution: {e}")))?;
        (t, df, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(TTest { t, df, p, mean_a: ma, mean_b: mb, n_a: a.len(), n_b: b.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionModel {
    Linear,
    Logit,
}

impl fmt::Display for RegressionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegressionModel::Linear => "linear",
            RegressionModel::Logit => "logit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub model: RegressionModel,
    pub beta0: f64,
    pub beta1: f64,
    pub se0: f64,
    pub se1: f64,
    pub log_likelihood: f64,
    pub aic: f64,
    /// Free parameters counted in the AIC: 3 for linear (with the error
    /// variance), 2 for logit.
    pub params: u32,
    pub converged: bool,
    pub iterations: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

fn require_n(data: &[LabeledDwell]) -> Result<()> {
    if data.len() < 3 {
        return Err(Error::Contract(format!("regression needs at least 3 points, got {}", data.len())));
    }
    if data.iter().any(|d| !d.log_dwell.is_finite()) {
        return Err(Error::Contract("log dwell must be finite".into()));
    }
    Ok(())
}

fn y(d: &LabeledDwell) -> f64 {
    if d.converted {
        1.0
    } else {
        0.0
    }
}

/// Ordinary least squares of the 0/1 outcome on log-dwell. The likelihood is
/// Gaussian with the MLE variance `RSS/n`; a perfect fit gives `+inf`.
pub fn fit_linear(data: &[LabeledDwell]) -> Result<RegressionFit> {
    require_n(data)?;
    let n = data.len() as f64;
    let mx = data.iter().map(|d| d.log_dwell).sum::<f64>() / n;
    let my = data.iter().map(y).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for d in data {
        let dx = d.log_dwell - mx;
        sxx += dx * dx;
        sxy += dx * (y(d) - my);
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateDesign("log dwell is constant".into()));
    }
    let beta1 = sxy / sxx;
    let beta0 = my - beta1 * mx;
    let rss: f64 = data
        .iter()
        .map(|d| {
            let r = y(d) - beta0 - beta1 * d.log_dwell;
            r * r
        })
        .sum();
    let sigma2 = rss / n;
    let log_likelihood = if sigma2 > 0.0 {
        -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0)
    } else {
        f64::INFINITY
    };
    let s2 = if n > 2.0 { rss / (n - 2.0) } else { f64::NAN };
    let params = 3;
    Ok(RegressionFit {
        model: RegressionModel::Linear,
        beta0,
        beta1,
        se0: (s2 * (1.0 / n + mx * mx / sxx)).sqrt(),
        se1: (s2 / sxx).sqrt(),
        log_likelihood,
        aic: -2.0 * log_likelihood + 2.0 * params as f64,
        params,
        converged: true,
        iterations: 1,
        diagnostics: Vec::new(),
    })
}

/// `y·η - ln(1 + e^η)` without overflow.
fn bernoulli_ll(eta: f64, y: f64) -> f64 {
    y * eta - (eta.max(0.0) + (-eta.abs()).exp().ln_1p())
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn logit_ll(data: &[LabeledDwell], b0: f64, b1: f64) -> f64 {
    data.iter().map(|d| bernoulli_ll(b0 + b1 * d.log_dwell, y(d))).sum()
}

/// Score and Fisher information at (b0, b1).
fn score_info(data: &[LabeledDwell], b0: f64, b1: f64) -> ([f64; 2], [f64; 3]) {
    let mut g = [0.0; 2];
    let mut h = [0.0; 3];
    for d in data {
        let x = d.log_dwell;
        let p = logistic(b0 + b1 * x);
        let r = y(d) - p;
        let w = p * (1.0 - p);
        g[0] += r;
        g[1] += r * x;
        h[0] += w;
        h[1] += w * x;
        h[2] += w * x * x;
    }
    (g, h)
}

/// Log-likelihood after each accepted IRLS step; the first entry is the
/// starting point.
pub(crate) fn logit_irls(data: &[LabeledDwell]) -> Result<(RegressionFit, Vec<f64>)> {
    require_n(data)?;
    let n = data.len() as f64;
    let pos = data.iter().filter(|d| d.converted).count();
    if pos == 0 || pos == data.len() {
        return Err(Error::Contract("logit fit needs both converted and unconverted clicks".into()));
    }
    let ybar = pos as f64 / n;
    let (mut b0, mut b1) = ((ybar / (1.0 - ybar)).ln(), 0.0);
    let mut ll = logit_ll(data, b0, b1);
    let mut trace = vec![ll];
    let mut diagnostics = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < IRLS_MAX_ITERS {
        iterations += 1;
        let (g, h) = score_info(data, b0, b1);
        let det = h[0] * h[2] - h[1] * h[1];
        if !(det > f64::EPSILON * h[0] * h[2]) {
            diagnostics.push(format!("singular information matrix at iteration {iterations}"));
            break;
        }
        let d0 = (h[2] * g[0] - h[1] * g[1]) / det;
        let d1 = (h[0] * g[1] - h[1] * g[0]) / det;
        let mut step = 1.0;
        let (mut n0, mut n1, mut nll);
        loop {
            n0 = b0 + step * d0;
            n1 = b1 + step * d1;
            nll = logit_ll(data, n0, n1);
            if nll >= ll - 1e-9 * (ll.abs() + 1.0) || step < 1e-10 {
                break;
            }
            step *= 0.5;
        }
        let change = (n0 - b0).abs().max((n1 - b1).abs());
        let scale = n0.abs().max(n1.abs()).max(1.0);
        b0 = n0;
        b1 = n1;
        ll = nll;
        trace.push(ll);
        if change < IRLS_TOL * scale {
            converged = true;
            break;
        }
    }

    if !converged {
        let separated = data.iter().all(|d| (logistic(b0 + b1 * d.log_dwell) - y(d)).abs() < 1e-6);
        if separated {
            diagnostics.push("perfect separation: coefficients diverge".into());
        }
        diagnostics.push(format!("no convergence after {iterations} iterations"));
    }

    let (_, h) = score_info(data, b0, b1);
    let det = h[0] * h[2] - h[1] * h[1];
    let (se0, se1) = if det > 0.0 {
        ((h[2] / det).sqrt(), (h[0] / det).sqrt())
    } else {
        (f64::NAN, f64::NAN)
    };
    let params = 2;
    let fit = RegressionFit {
        model: RegressionModel::Logit,
        beta0: b0,
        beta1: b1,
        se0,
        se1,
        log_likelihood: ll,
        aic: -2.0 * ll + 2.0 * params as f64,
        params,
        converged,
        iterations,
        diagnostics,
    };
    Ok((fit, trace))
}

/// Maximum-likelihood logistic regression by IRLS (Newton with step halving).
/// Stops when the largest coefficient change falls below `1e-10` relative to
/// the coefficient scale (floored at 1), or after 100 iterations.
pub fn fit_logit(data: &[LabeledDwell]) -> Result<RegressionFit> {
    logit_irls(data).map(|(fit, _)| fit)
}

/// Ascending AIC; ties keep input order.
pub fn compare_aic(fits: &[RegressionFit]) -> Result<Vec<RegressionFit>> {
    if fits.len() < 2 {
        return Err(Error::Contract("AIC comparison needs at least two fits".into()));
    }
    let mut out = fits.to_vec();
    out.sort_by(|a, b| a.aic.total_cmp(&b.aic));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsReadout {
    pub odds_ratio: f64,
    pub percent_change: f64,
}

/// Multiplicative change in conversion odds per unit of log-dwell.
pub fn odds_readout(beta1: f64) -> OddsReadout {
    let odds_ratio = beta1.exp();
    OddsReadout { odds_ratio, percent_change: 100.0 * (odds_ratio - 1.0) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Converted (`a`) against unconverted (`b`) log-dwell.
    pub ttest: TTest,
    /// Ranked by AIC, winner first.
    pub fits: Vec<RegressionFit>,
    pub winner: RegressionModel,
    pub odds: OddsReadout,
    pub n: usize,
    pub skipped: usize,
}

impl ValidationReport {
    pub fn build(data: &[LabeledDwell], skipped: usize) -> Result<Self> {
        let (a, b): (Vec<&LabeledDwell>, Vec<&LabeledDwell>) = data.iter().partition(|d| d.converted);
        if a.is_empty() || b.is_empty() {
            return Err(Error::Contract(format!(
                "conversion column has a single class ({} converted of {})",
                a.len(),
                data.len()
            )));
        }
        let a: Vec<f64> = a.iter().map(|d| d.log_dwell).collect();
        let b: Vec<f64> = b.iter().map(|d| d.log_dwell).collect();
        let ttest = two_sample_ttest(&a, &b)?;
        let logit = fit_logit(data)?;
        let odds = odds_readout(logit.beta1);
        let fits = compare_aic(&[fit_linear(data)?, logit])?;
        Ok(Self { ttest, winner: fits[0].model, fits, odds, n: data.len(), skipped })
    }
}
