//! Smooth billing discounts for accidental clicks.
//!
//! Each app's non-accidental click rate (NACR) is estimated as a binomial
//! proportion, either as a point estimate or with a normal-approximation or
//! Agresti-Coull interval. The app with the highest NACR becomes the pivot;
//! every other app's accidental clicks are billed at `cpc * factor`, where the
//! factor compares the app's interval to the pivot's:
//!
//! ```text
//! guarded = max( lcb(app)/ucb(pivot), min( ucb(app)/ucb(pivot), 1 ) )
//! ```
//!
//! A factor above 1 therefore requires `lcb(app) > ucb(pivot)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ingest::{is_accidental, ClickRecord};
use crate::sum::ExactSum;
use crate::threshold::ThresholdLookup;

/// Two-sided 95% normal quantile.
pub const DEFAULT_Z: f64 = 1.959964;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Mle,
    NormalApprox,
    #[default]
    AgrestiCoull,
}

impl FromStr for IntervalMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mle" => Ok(IntervalMethod::Mle),
            "normal" | "normal_approx" => Ok(IntervalMethod::NormalApprox),
            "agresti-coull" | "agresti_coull" => Ok(IntervalMethod::AgrestiCoull),
            _ => Err(format!("unknown method {s:?} (expected mle, normal or agresti-coull)")),
        }
    }
}

impl fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntervalMethod::Mle => "mle",
            IntervalMethod::NormalApprox => "normal",
            IntervalMethod::AgrestiCoull => "agresti-coull",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickCounts {
    pub app_id: String,
    pub total_clicks: u64,
    pub non_accidental_clicks: u64,
    /// Set when the app kept fewer than the minimum number of clicks.
    pub insufficient: bool,
    /// (ad, app) pairs dropped for having fewer than the minimum clicks.
    pub dropped_ads: u64,
    pub dropped_clicks: u64,
}

impl ClickCounts {
    pub fn new(app_id: impl Into<String>, total_clicks: u64, non_accidental_clicks: u64) -> Self {
        assert!(non_accidental_clicks <= total_clicks);
        Self {
            app_id: app_id.into(),
            total_clicks,
            non_accidental_clicks,
            insufficient: false,
            dropped_ads: 0,
            dropped_clicks: 0,
        }
    }

    pub fn accidental_clicks(&self) -> u64 {
        self.total_clicks - self.non_accidental_clicks
    }
}

/// Per-app click counts. A click is non-accidental when its dwell is strictly
/// above the app's threshold. (ad, app) pairs with fewer than `min_clicks`
/// clicks are left out and tallied in the diagnostics fields; an app left with
/// fewer than `min_clicks` clicks is flagged insufficient.
pub fn count_clicks(
    records: &[ClickRecord],
    thresholds: &ThresholdLookup,
    min_clicks: u64,
) -> BTreeMap<String, ClickCounts> {
    let mut per_ad: BTreeMap<(&str, &str), (u64, u64)> = BTreeMap::new();
    for r in records {
        let e = per_ad.entry((r.app_id.as_str(), r.ad_id.as_str())).or_default();
        e.0 += 1;
        if !is_accidental(r.dwell_seconds, thresholds.seconds_for(&r.app_id)) {
            e.1 += 1;
        }
    }
    let mut out: BTreeMap<String, ClickCounts> = BTreeMap::new();
    for ((app, _), (total, non_acc)) in per_ad {
        let c = out
            .entry(app.to_owned())
            .or_insert_with(|| ClickCounts::new(app, 0, 0));
        if total < min_clicks {
            c.dropped_ads += 1;
            c.dropped_clicks += total;
        } else {
            c.total_clicks += total;
            c.non_accidental_clicks += non_acc;
        }
    }
    for c in out.values_mut() {
        c.insufficient = c.total_clicks == 0 || c.total_clicks < min_clicks;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NacrEstimate {
    pub app_id: String,
    /// MLE proportion, or the Agresti-Coull centre for that method.
    pub point: f64,
    pub lcb: f64,
    pub ucb: f64,
    pub method: IntervalMethod,
    pub n: u64,
    pub z: f64,
}

fn require_clicks(c: &ClickCounts) -> Result<()> {
    if c.total_clicks == 0 {
        return Err(Error::InsufficientData(format!("app {} has no clicks", c.app_id)));
    }
    Ok(())
}

fn check_z(z: f64) -> Result<()> {
    if !(z.is_finite() && z >= 0.0) {
        return Err(Error::Contract(format!("z must be finite and non-negative, got {z}")));
    }
    Ok(())
}

pub fn nacr_mle(c: &ClickCounts) -> Result<NacrEstimate> {
    require_clicks(c)?;
    let p = c.non_accidental_clicks as f64 / c.total_clicks as f64;
    Ok(NacrEstimate {
        app_id: c.app_id.clone(),
        point: p,
        lcb: p,
        ucb: p,
        method: IntervalMethod::Mle,
        n: c.total_clicks,
        z: 0.0,
    })
}

/// `p ± z·sqrt(p(1-p)/n)`, clamped to [0, 1].
pub fn nacr_normal_interval(c: &ClickCounts, z: f64) -> Result<NacrEstimate> {
    require_clicks(c)?;
    check_z(z)?;
    let n = c.total_clicks as f64;
    let p = c.non_accidental_clicks as f64 / n;
    let half = z * (p * (1.0 - p) / n).sqrt();
    Ok(NacrEstimate {
        app_id: c.app_id.clone(),
        point: p,
        lcb: (p - half).clamp(0.0, 1.0),
        ucb: (p + half).clamp(0.0, 1.0),
        method: IntervalMethod::NormalApprox,
        n: c.total_clicks,
        z,
    })
}

/// Agresti-Coull: `n~ = n + z²`, `p~ = (X + z²/2)/n~`, interval
/// `p~ ± z·sqrt(p~(1-p~)/n~)` clamped to [0, 1]. `point` carries `p~`.
pub fn nacr_agresti_coull(c: &ClickCounts, z: f64) -> Result<NacrEstimate> {
    require_clicks(c)?;
    check_z(z)?;
    let z2 = z * z;
    let n_t = c.total_clicks as f64 + z2;
    let p_t = (c.non_accidental_clicks as f64 + 0.5 * z2) / n_t;
    let half = z * (p_t * (1.0 - p_t) / n_t).sqrt();
    Ok(NacrEstimate {
        app_id: c.app_id.clone(),
        point: p_t,
        lcb: (p_t - half).clamp(0.0, 1.0),
        ucb: (p_t + half).clamp(0.0, 1.0),
        method: IntervalMethod::AgrestiCoull,
        n: c.total_clicks,
        z,
    })
}

pub fn nacr(c: &ClickCounts, method: IntervalMethod, z: f64) -> Result<NacrEstimate> {
    match method {
        IntervalMethod::Mle => nacr_mle(c),
        IntervalMethod::NormalApprox => nacr_normal_interval(c, z),
        IntervalMethod::AgrestiCoull => nacr_agresti_coull(c, z),
    }
}

/// Highest point estimate; ties go to the larger sample, then the
/// lexicographically smaller app id.
pub fn select_pivot(estimates: &[NacrEstimate]) -> Result<&NacrEstimate> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::Contract("pivot selection over an empty list".into()))?;
    if estimates.iter().any(|e| e.method != first.method) {
        return Err(Error::Contract("pivot selection across mixed interval methods".into()));
    }
    Ok(estimates
        .iter()
        .max_by(|a, b| {
            a.point
                .total_cmp(&b.point)
                .then(a.n.cmp(&b.n))
                .then_with(|| b.app_id.cmp(&a.app_id))
        })
        .expect("non-empty"))
}

/// Ratio of NACR bounds. Unguarded: `ucb(app)/ucb(pivot)`. Guarded:
/// `max(lcb(app)/ucb(pivot), min(ucb(app)/ucb(pivot), 1))`.
pub fn discount_factor(app: &NacrEstimate, pivot: &NacrEstimate, guarded: bool) -> Result<f64> {
    if app.method != pivot.method {
        return Err(Error::Contract("discount factor across mixed interval methods".into()));
    }
    if !(pivot.ucb > 0.0) {
        return Err(Error::UndefinedPivot(format!(
            "pivot {} has zero upper confidence bound",
            pivot.app_id
        )));
    }
    let upper = app.ucb / pivot.ucb;
    if !guarded {
        return Ok(upper);
    }
    Ok((app.lcb / pivot.ucb).max(upper.min(1.0)))
}

/// Price of one accidental click.
pub fn adjusted_cpc(cpc: f64, factor: f64) -> f64 {
    cpc * factor
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscountConfig {
    pub method: IntervalMethod,
    pub z: f64,
    /// Floor on clicks per (ad, app) pair.
    pub min_clicks: u64,
    /// When set and the pivot's accidental-click count exceeds it, the pivot's
    /// accidental clicks are billed at the largest factor among the other apps.
    pub pivot_alert_clicks: Option<u64>,
}

impl Default for DiscountConfig {
    fn default() -> Self {
        Self {
            method: IntervalMethod::AgrestiCoull,
            z: DEFAULT_Z,
            min_clicks: 40,
            pivot_alert_clicks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NacrSummary {
    pub point: f64,
    pub lcb: f64,
    pub ucb: f64,
    pub n: u64,
}

impl From<&NacrEstimate> for NacrSummary {
    fn from(e: &NacrEstimate) -> Self {
        Self { point: e.point, lcb: e.lcb, ucb: e.ucb, n: e.n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountEntry {
    pub app_id: String,
    pub nacr: NacrSummary,
    pub discount_factor: f64,
    /// Price of an accidental click when a valid click costs 1.
    pub adjusted_cpc_per_unit: f64,
    pub threshold_seconds: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountReport {
    pub pivot_app: String,
    pub method: IntervalMethod,
    pub z: f64,
    pub pivot_nacr: NacrSummary,
    /// Applied to the pivot's own accidental clicks; 1 unless the alert fired.
    pub pivot_factor: f64,
    pub entries: Vec<DiscountEntry>,
    /// Apps without enough clicks to estimate a rate.
    pub insufficient: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pivot_update_recommended: Option<String>,
    pub threshold_default_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub impact: Option<RevenueImpact>,
}

impl DiscountReport {
    pub fn factor_for(&self, app_id: &str) -> f64 {
        if app_id == self.pivot_app {
            return self.pivot_factor;
        }
        self.entries
            .iter()
            .find(|e| e.app_id == app_id)
            .map_or(1.0, |e| e.discount_factor)
    }
}

/// Counts clicks, estimates NACR per app, picks the pivot and computes the
/// guarded factor for every other app, then replays billing.
pub fn build_discount_report(
    records: &[ClickRecord],
    thresholds: &ThresholdLookup,
    cfg: &DiscountConfig,
) -> Result<DiscountReport> {
    let counts = count_clicks(records, thresholds, cfg.min_clicks);
    let mut estimates = Vec::new();
    let mut insufficient = Vec::new();
    for c in counts.values() {
        if c.insufficient {
            insufficient.push(c.app_id.clone());
        } else {
            estimates.push(nacr(c, cfg.method, cfg.z)?);
        }
    }
    if estimates.is_empty() {
        return Err(Error::UndefinedPivot("no app has enough clicks to serve as pivot".into()));
    }
    let pivot = select_pivot(&estimates)?.clone();

    let mut entries = Vec::new();
    for e in estimates.iter().filter(|e| e.app_id != pivot.app_id) {
        let factor = discount_factor(e, &pivot, true)?;
        let mut flags = Vec::new();
        if factor > 1.0 {
            flags.push("overperforms_pivot".to_owned());
        }
        entries.push(DiscountEntry {
            app_id: e.app_id.clone(),
            nacr: e.into(),
            discount_factor: factor,
            adjusted_cpc_per_unit: adjusted_cpc(1.0, factor),
            threshold_seconds: thresholds.seconds_for(&e.app_id),
            flags,
        });
    }

    let pivot_update_recommended = entries
        .iter()
        .filter(|e| e.discount_factor > 1.0)
        .max_by(|a, b| a.discount_factor.total_cmp(&b.discount_factor).then_with(|| b.app_id.cmp(&a.app_id)))
        .map(|e| e.app_id.clone());

    let pivot_factor = match cfg.pivot_alert_clicks {
        Some(alert) if counts[&pivot.app_id].accidental_clicks() > alert => entries
            .iter()
            .map(|e| e.discount_factor)
            .fold(None, |m: Option<f64>, f| Some(m.map_or(f, |m| m.max(f))))
            .unwrap_or(1.0),
        _ => 1.0,
    };

    let mut report = DiscountReport {
        pivot_app: pivot.app_id.clone(),
        method: cfg.method,
        z: cfg.z,
        pivot_nacr: (&pivot).into(),
        pivot_factor,
        entries,
        insufficient,
        pivot_update_recommended,
        threshold_default_seconds: thresholds.default.seconds,
        impact: None,
    };
    report.impact = Some(revenue_impact(records, &report, thresholds));
    Ok(report)
}

fn round6<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((x * 1e6).round() / 1e6)
}

fn round6_opt<S: Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => round6(v, s),
        None => s.serialize_none(),
    }
}

/// Totals billed under three policies. Monetary values serialize rounded to
/// six decimal places.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueImpact {
    #[serde(serialize_with = "round6")]
    pub chargeall: f64,
    #[serde(serialize_with = "round6")]
    pub discard: f64,
    #[serde(serialize_with = "round6")]
    pub smooth: f64,
    /// `1 - (chargeall - smooth)/(chargeall - discard)`; `None` when nothing
    /// was accidental.
    #[serde(serialize_with = "round6_opt")]
    pub mitigation_ratio: Option<f64>,
    pub billed_clicks: u64,
    pub accidental_clicks: u64,
    pub skipped_missing_cpc: u64,
}

/// Replays billing over every click that carries a cpc. Non-accidental clicks
/// are always billed in full; accidental ones are billed in full, at zero, or
/// at `cpc * factor(app)` depending on the policy.
pub fn revenue_impact(
    records: &[ClickRecord],
    report: &DiscountReport,
    thresholds: &ThresholdLookup,
) -> RevenueImpact {
    let factors: BTreeMap<&str, f64> = report
        .entries
        .iter()
        .map(|e| (e.app_id.as_str(), e.discount_factor))
        .collect();
    let mut chargeall = ExactSum::new();
    let mut discard = ExactSum::new();
    let mut smooth = ExactSum::new();
    let mut billed = 0;
    let mut accidental = 0;
    let mut skipped = 0;
    for r in records {
        let Some(cpc) = r.cpc else {
            skipped += 1;
            continue;
        };
        billed += 1;
        chargeall.add(cpc);
        if is_accidental(r.dwell_seconds, thresholds.seconds_for(&r.app_id)) {
            accidental += 1;
            let factor = if r.app_id == report.pivot_app {
                report.pivot_factor
            } else {
                factors.get(r.app_id.as_str()).copied().unwrap_or(1.0)
            };
            smooth.add(adjusted_cpc(cpc, factor));
        } else {
            discard.add(cpc);
            smooth.add(cpc);
        }
    }
    let (chargeall, discard, smooth) = (chargeall.value(), discard.value(), smooth.value());
    let loss = chargeall - discard;
    RevenueImpact {
        chargeall,
        discard,
        smooth,
        mitigation_ratio: (loss > 0.0).then(|| 1.0 - (chargeall - smooth) / loss),
        billed_clicks: billed,
        accidental_clicks: accidental,
        skipped_missing_cpc: skipped,
    }
}
