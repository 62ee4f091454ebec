//! Gaussian mixtures over log-dwell time, fitted by EM.
//!
//! Fitting `ln(dwell)` to a Gaussian mixture is the same as fitting `dwell` to
//! a mixture of Log-Normals: the densities differ only by the Jacobian `1/x`.
//!
//! [`em_fit`] runs several seeded restarts for a fixed component count and
//! keeps the run with the highest log-likelihood; [`select_model`] fits
//! K = 1, 2, 3 and picks the smallest AIC (or BIC). The free-parameter count
//! is `3k - 1`: k means, k variances, k - 1 independent weights.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const MAX_COMPONENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Mean of log-dwell, log-seconds.
    pub mu: f64,
    /// Variance of log-dwell.
    pub sigma2: f64,
}

impl MixtureComponent {
    pub fn new(weight: f64, mu: f64, sigma2: f64) -> Self {
        Self { weight, mu, sigma2 }
    }

    /// Weighted Gaussian density `w * phi(x; mu, sigma2)`.
    pub fn weighted_density(&self, x: f64) -> f64 {
        let d = x - self.mu;
        self.weight * (-0.5 * d * d / self.sigma2).exp() / (2.0 * PI * self.sigma2).sqrt()
    }

    fn log_weighted_density(&self, x: f64) -> f64 {
        let d = x - self.mu;
        self.weight.ln() - 0.5 * (2.0 * PI * self.sigma2).ln() - 0.5 * d * d / self.sigma2
    }
}

/// A fitted mixture. Components are sorted ascending by `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub k: usize,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub n: usize,
    pub components: Vec<MixtureComponent>,
}

impl MixtureModel {
    /// Builds a model from components fitted on `data`, filling in the
    /// likelihood and information criteria.
    pub fn from_fit(
        mut components: Vec<MixtureComponent>,
        data: &[f64],
        converged: bool,
        iterations: usize,
    ) -> Result<Self> {
        sort_components(&mut components);
        let ll = log_likelihood(&components, data)?;
        let k = components.len();
        Ok(Self {
            k,
            converged,
            iterations,
            log_likelihood: ll,
            aic: aic(ll, k),
            bic: bic(ll, k, data.len()),
            n: data.len(),
            components,
        })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        mixture_pdf(&self.components, x)
    }

    pub fn criterion(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
        }
    }

    /// The lowest-mean component, the one that captures accidental clicks.
    pub fn first_component(&self) -> &MixtureComponent {
        &self.components[0]
    }
}

pub fn free_parameters(k: usize) -> usize {
    3 * k - 1
}

pub fn aic(log_likelihood: f64, k: usize) -> f64 {
    -2.0 * log_likelihood + 2.0 * free_parameters(k) as f64
}

pub fn bic(log_likelihood: f64, k: usize, n: usize) -> f64 {
    -2.0 * log_likelihood + free_parameters(k) as f64 * (n as f64).ln()
}

/// Ascending by mean; equal means put the heavier component first.
pub fn sort_components(components: &mut [MixtureComponent]) {
    components.sort_by(|a, b| a.mu.total_cmp(&b.mu).then(b.weight.total_cmp(&a.weight)));
}

/// `sum_i w_i * phi(x; mu_i, sigma2_i)`.
pub fn mixture_pdf(components: &[MixtureComponent], x: f64) -> f64 {
    components.iter().map(|c| c.weighted_density(x)).sum()
}

/// Sum of log mixture densities, computed with log-sum-exp so that points far
/// in the tails stay finite.
pub fn log_likelihood(components: &[MixtureComponent], data: &[f64]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Contract("log-likelihood of an empty sample".into()));
    }
    let mut ll = 0.0;
    let mut buf = [0.0; MAX_COMPONENTS];
    for &x in data {
        for (slot, c) in buf.iter_mut().zip(components) {
            *slot = c.log_weighted_density(x);
        }
        ll += log_sum_exp(&buf[..components.len()]);
    }
    Ok(ll)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Aic,
    Bic,
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            _ => Err(format!("unknown criterion {s:?} (expected aic or bic)")),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once `|dLL| / (|LL| + 1)` drops below this.
    pub rel_tol: f64,
    /// Lower bound on every component variance (log-seconds squared).
    pub variance_floor: f64,
    pub seed: u64,
    pub criterion: Criterion,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 500,
            rel_tol: 1e-8,
            variance_floor: 1e-4,
            seed: 0,
            criterion: Criterion::Aic,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_iters == 0 {
            return Err(Error::Contract("restarts and max_iters must be positive".into()));
        }
        if !(self.rel_tol > 0.0 && self.variance_floor > 0.0) {
            return Err(Error::Contract("rel_tol and variance_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Smallest sample that can support `k` components: more points than free
/// parameters.
pub fn min_sample_size(k: usize) -> usize {
    free_parameters(k) + 1
}

/// Outcome of a single EM run.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub restart: usize,
    pub components: Vec<MixtureComponent>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after initialisation and after every M-step.
    pub trace: Vec<f64>,
    /// Set when a component ended up with fewer than two effective points.
    pub degenerate: bool,
}

struct Params {
    k: usize,
    w: [f64; MAX_COMPONENTS],
    mu: [f64; MAX_COMPONENTS],
    var: [f64; MAX_COMPONENTS],
}

impl Params {
    fn components(&self) -> Vec<MixtureComponent> {
        (0..self.k)
            .map(|i| MixtureComponent::new(self.w[i], self.mu[i], self.var[i]))
            .collect()
    }
}

/// Per-component log normalising constants and precisions.
fn log_terms(p: &Params) -> ([f64; MAX_COMPONENTS], [f64; MAX_COMPONENTS]) {
    let mut c = [0.0; MAX_COMPONENTS];
    let mut a = [0.0; MAX_COMPONENTS];
    for i in 0..p.k {
        c[i] = p.w[i].ln() - 0.5 * (2.0 * PI * p.var[i]).ln();
        a[i] = 0.5 / p.var[i];
    }
    (c, a)
}

#[cfg(test)]
/// Fills `row` with the responsibilities of `x` and returns its log mixture
/// density.
fn responsibilities(x: f64, p: &Params, c: &[f64], a: &[f64], row: &mut [f64; MAX_COMPONENTS]) -> f64 {
    match p.k {
        1 => resp_k::<1>(x, &p.mu, c, a, row),
        2 => resp_k::<2>(x, &p.mu, c, a, row),
        _ => resp_k::<3>(x, &p.mu, c, a, row),
    }
}

#[inline(always)]
fn resp_k<const K: usize>(x: f64, mu: &[f64], c: &[f64], a: &[f64], row: &mut [f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for i in 0..K {
        let d = x - mu[i];
        row[i] = c[i] - a[i] * d * d;
        m = m.max(row[i]);
    }
    let mut s = 0.0;
    for r in &mut row[..K] {
        *r = (*r - m).exp();
        s += *r;
    }
    let inv = 1.0 / s;
    for r in &mut row[..K] {
        *r *= inv;
    }
    m + s.ln()
}

/// Log-likelihood of the current parameters and the responsibility-weighted
/// sums needed by the next M-step. Sums are taken on `x - center`.
struct EStep {
    ll: f64,
    nk: [f64; MAX_COMPONENTS],
    sx: [f64; MAX_COMPONENTS],
    sxx: [f64; MAX_COMPONENTS],
}

fn e_step(data: &[f64], p: &Params, center: f64) -> EStep {
    match p.k {
        1 => e_step_k::<1>(data, p, center),
        2 => e_step_k::<2>(data, p, center),
        _ => e_step_k::<3>(data, p, center),
    }
}

fn e_step_k<const K: usize>(data: &[f64], p: &Params, center: f64) -> EStep {
    let (c, a) = log_terms(p);
    let mut out = EStep { ll: 0.0, nk: [0.0; 3], sx: [0.0; 3], sxx: [0.0; 3] };
    let mut row = [0.0; MAX_COMPONENTS];
    for &x in data {
        out.ll += resp_k::<K>(x, &p.mu, &c, &a, &mut row);
        let d = x - center;
        for (i, &r) in row[..K].iter().enumerate() {
            out.nk[i] += r;
            out.sx[i] += r * d;
            out.sxx[i] += r * d * d;
        }
    }
    out
}

/// M-step. Returns the smallest effective component count.
fn m_step(e: &EStep, p: &mut Params, center: f64, floor: f64) -> f64 {
    let k = p.k;
    let total: f64 = e.nk[..k].iter().sum();
    let mut min_nk = f64::INFINITY;
    for i in 0..k {
        let nk = e.nk[i];
        min_nk = min_nk.min(nk);
        p.w[i] = nk / total;
        if nk > 0.0 {
            let m = e.sx[i] / nk;
            p.mu[i] = center + m;
            p.var[i] = (e.sxx[i] / nk - m * m).max(floor);
        } else {
            p.var[i] = floor;
        }
    }
    min_nk
}

/// Inverse-CDF quantile of sorted data; unchanged when every point is duplicated.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[idx - 1]
}

fn mean_and_variance(data: &[f64]) -> (f64, f64) {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn initial_params(sorted: &[f64], k: usize, cfg: &FitConfig, restart: usize) -> Params {
    let (_, var) = mean_and_variance(sorted);
    let sd = var.sqrt();
    let mut p = Params {
        k,
        w: [0.0; MAX_COMPONENTS],
        mu: [0.0; MAX_COMPONENTS],
        var: [0.0; MAX_COMPONENTS],
    };
    let mut rng = stream_rng(cfg.seed, restart as u64);
    let half_cell = 0.5 / k as f64;
    for i in 0..k {
        let mut level = (2 * i + 1) as f64 * half_cell;
        let mut mu_jitter = 0.0;
        if restart > 0 {
            level += rng.random_range(-0.5..0.5) * half_cell;
            let z: f64 = StandardNormal.sample(&mut rng);
            mu_jitter = 0.1 * sd / k as f64 * z;
        }
        p.mu[i] = quantile_sorted(sorted, level.clamp(0.0, 1.0)) + mu_jitter;
        p.var[i] = (var / k as f64).max(cfg.variance_floor);
        p.w[i] = 1.0 / k as f64;
    }
    p
}

/// One EM run from the restart-specific initialisation.
pub fn em_run(data: &[f64], k: usize, cfg: &FitConfig, restart: usize) -> Result<EmRun> {
    check_fit_args(data, k)?;
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(em_run_sorted(data, &sorted, k, cfg, restart))
}

fn em_run_sorted(data: &[f64], sorted: &[f64], k: usize, cfg: &FitConfig, restart: usize) -> EmRun {
    let mut p = initial_params(sorted, k, cfg, restart);
    let center = sorted[sorted.len() / 2];
    let mut e = e_step(data, &p, center);
    let mut ll = e.ll;
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    let mut degenerate = false;

    while iterations < cfg.max_iters {
        let min_nk = m_step(&e, &mut p, center, cfg.variance_floor);
        iterations += 1;
        if !(min_nk > 1e-8) {
            // a component lost all support; its parameters are meaningless
            degenerate = true;
            break;
        }
        e = e_step(data, &p, center);
        let next = e.ll;
        debug_assert!(
            next >= ll - 1e-9 * (ll.abs() + 1.0),
            "EM log-likelihood decreased: {ll} -> {next}"
        );
        trace.push(next);
        let rel = (next - ll).abs() / (ll.abs() + 1.0);
        ll = next;
        if rel < cfg.rel_tol {
            converged = true;
            break;
        }
    }

    if !degenerate {
        degenerate = e.nk[..k].iter().any(|&n| n < 2.0);
    }

    let mut components = p.components();
    sort_components(&mut components);
    EmRun {
        restart,
        components,
        log_likelihood: ll,
        iterations,
        converged,
        trace,
        degenerate,
    }
}

fn check_fit_args(data: &[f64], k: usize) -> Result<()> {
    if !(1..=MAX_COMPONENTS).contains(&k) {
        return Err(Error::Contract(format!("k must be in 1..=3, got {k}")));
    }
    if data.len() < min_sample_size(k) {
        return Err(Error::Contract(format!(
            "{} points cannot support k={k} ({} needed)",
            data.len(),
            min_sample_size(k)
        )));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract("sample contains non-finite values".into()));
    }
    Ok(())
}

/// Fits a `k`-component mixture, keeping the best of `cfg.restarts` runs.
pub fn em_fit(data: &[f64], k: usize, cfg: &FitConfig) -> Result<MixtureModel> {
    cfg.validate()?;
    check_fit_args(data, k)?;

    if k == 1 {
        let (mean, var) = mean_and_variance(data);
        let c = MixtureComponent::new(1.0, mean, var.max(cfg.variance_floor));
        return MixtureModel::from_fit(vec![c], data, true, 1);
    }

    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut best: Option<EmRun> = None;
    let mut degenerate_runs = 0;
    for restart in 0..cfg.restarts {
        let run = em_run_sorted(data, &sorted, k, cfg, restart);
        if run.degenerate || !run.log_likelihood.is_finite() {
            degenerate_runs += 1;
            continue;
        }
        // strict comparison: ties keep the lower restart index
        if best.as_ref().is_none_or(|b| run.log_likelihood > b.log_likelihood) {
            best = Some(run);
        }
    }
    let best = best.ok_or_else(|| {
        Error::FitFailure(format!(
            "k={k}: all {degenerate_runs} restarts degenerate (a component kept fewer than 2 points) on n={}",
            data.len()
        ))
    })?;
    MixtureModel::from_fit(best.components, data, best.converged, best.iterations)
}

/// Per-K outcome recorded by [`select_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KDiagnostic {
    pub k: usize,
    pub status: KStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KStatus {
    Fitted,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub model: MixtureModel,
    pub diagnostics: Vec<KDiagnostic>,
}

/// Fits K = 1, 2, 3 and returns the model with the smallest criterion value.
/// Exact ties go to the smaller K.
pub fn select_model(data: &[f64], cfg: &FitConfig) -> Result<Selection> {
    cfg.validate()?;
    if data.len() < min_sample_size(2) {
        return Err(Error::Contract(format!(
            "model selection needs at least {} points, got {}",
            min_sample_size(2),
            data.len()
        )));
    }
    let mut best: Option<MixtureModel> = None;
    let mut diagnostics = Vec::with_capacity(MAX_COMPONENTS);
    for k in 1..=MAX_COMPONENTS {
        if data.len() < min_sample_size(k) {
            diagnostics.push(KDiagnostic {
                k,
                status: KStatus::Skipped,
                log_likelihood: None,
                aic: None,
                bic: None,
                detail: Some(format!("needs at least {} points", min_sample_size(k))),
            });
            continue;
        }
        match em_fit(data, k, cfg) {
            Ok(m) => {
                diagnostics.push(KDiagnostic {
                    k,
                    status: KStatus::Fitted,
                    log_likelihood: Some(m.log_likelihood),
                    aic: Some(m.aic),
                    bic: Some(m.bic),
                    detail: None,
                });
                let better = best
                    .as_ref()
                    .is_none_or(|b| m.criterion(cfg.criterion) < b.criterion(cfg.criterion));
                if better {
                    best = Some(m);
                }
            }
            Err(Error::FitFailure(msg)) => diagnostics.push(KDiagnostic {
                k,
                status: KStatus::Failed,
                log_likelihood: None,
                aic: None,
                bic: None,
                detail: Some(msg),
            }),
            Err(e) => return Err(e),
        }
    }
    match best {
        Some(model) => Ok(Selection { model, diagnostics }),
        None => Err(Error::FitFailure("no component count produced a usable fit".into())),
    }
}
