//! Accidental-click dwell thresholds.
//!
//! A per-ad threshold is the median (or mean) of the first mixture component,
//! read as a Log-Normal over raw dwell: `Median = e^mu`, `E = e^(mu + sigma2/2)`.
//! Only ads whose selected model has all three components contribute. Per-ad
//! values are then aggregated per app, or over a single pivot app.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{MixtureComponent, MixtureModel};

/// Used when no app has enough three-component ads to derive a network default.
pub const FALLBACK_DEFAULT_SECONDS: f64 = 2.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdScope {
    PerAd,
    PerApp,
    PivotGlobal,
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    #[default]
    Median,
    Mean,
}

impl FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "median" => Ok(Statistic::Median),
            "mean" => Ok(Statistic::Mean),
            _ => Err(format!("unknown statistic {s:?} (expected median or mean)")),
        }
    }
}

/// How per-ad values are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Aggregate {
    #[default]
    #[serde(rename = "median")]
    MedianOfMedians,
    #[serde(rename = "mean")]
    MeanOfMedians,
}

impl FromStr for Aggregate {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "median" => Ok(Aggregate::MedianOfMedians),
            "mean" => Ok(Aggregate::MeanOfMedians),
            _ => Err(format!("unknown aggregate {s:?} (expected median or mean)")),
        }
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::MedianOfMedians => "median",
            Aggregate::MeanOfMedians => "mean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub seconds: f64,
    pub scope: ThresholdScope,
    pub source_ads: usize,
    pub statistic: Statistic,
}

impl ThresholdEstimate {
    pub fn new(seconds: f64, scope: ThresholdScope, source_ads: usize) -> Self {
        Self { seconds, scope, source_ads, statistic: Statistic::Median }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub aggregate: Aggregate,
    pub per_ad_statistic: Statistic,
    pub min_ads: usize,
    /// `None` derives the default from the network-wide median of per-ad
    /// thresholds, falling back to [`FALLBACK_DEFAULT_SECONDS`].
    pub default_threshold_seconds: Option<f64>,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            aggregate: Aggregate::MedianOfMedians,
            per_ad_statistic: Statistic::Median,
            min_ads: 1,
            default_threshold_seconds: None,
        }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.min_ads == 0 {
            return Err(Error::Contract("min_ads must be positive".into()));
        }
        if let Some(d) = self.default_threshold_seconds {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Contract("default threshold must be positive and finite".into()));
            }
        }
        Ok(())
    }
}

pub fn component_median(c: &MixtureComponent) -> f64 {
    c.mu.exp()
}

pub fn component_mean(c: &MixtureComponent) -> f64 {
    (c.mu + c.sigma2 / 2.0).exp()
}

/// Threshold from the first component, or `None` unless the model has
/// exactly three components.
pub fn per_ad_threshold(model: &MixtureModel, policy: &ThresholdPolicy) -> Option<ThresholdEstimate> {
    if model.k != 3 {
        return None;
    }
    let first = model.first_component();
    let seconds = match policy.per_ad_statistic {
        Statistic::Median => component_median(first),
        Statistic::Mean => component_mean(first),
    };
    Some(ThresholdEstimate {
        seconds,
        scope: ThresholdScope::PerAd,
        source_ads: 1,
        statistic: policy.per_ad_statistic,
    })
}

/// Median of a non-empty list; even counts take the lower middle value.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

pub fn aggregate_threshold(
    per_ad: &[ThresholdEstimate],
    policy: &ThresholdPolicy,
    scope: ThresholdScope,
) -> Result<ThresholdEstimate> {
    if per_ad.is_empty() || per_ad.len() < policy.min_ads {
        return Err(Error::InsufficientData(format!(
            "{} per-ad thresholds, {} required",
            per_ad.len(),
            policy.min_ads.max(1)
        )));
    }
    let values: Vec<f64> = per_ad.iter().map(|t| t.seconds).collect();
    let seconds = match policy.aggregate {
        Aggregate::MedianOfMedians => lower_median(&values),
        Aggregate::MeanOfMedians => values.iter().sum::<f64>() / values.len() as f64,
    };
    Ok(ThresholdEstimate {
        seconds,
        scope,
        source_ads: per_ad.len(),
        statistic: policy.per_ad_statistic,
    })
}

fn per_ad_by_app<'a>(
    models: impl IntoIterator<Item = (&'a str, &'a MixtureModel)>,
    policy: &ThresholdPolicy,
) -> BTreeMap<String, Vec<ThresholdEstimate>> {
    let mut by_app: BTreeMap<String, Vec<ThresholdEstimate>> = BTreeMap::new();
    for (app, model) in models {
        let entry = by_app.entry(app.to_owned()).or_default();
        if let Some(t) = per_ad_threshold(model, policy) {
            entry.push(t);
        }
    }
    by_app
}

/// Default threshold: the explicit policy value, else the median of every
/// per-ad threshold from apps meeting `min_ads`, else 2.1 s.
fn default_threshold(
    by_app: &BTreeMap<String, Vec<ThresholdEstimate>>,
    policy: &ThresholdPolicy,
) -> ThresholdEstimate {
    if let Some(s) = policy.default_threshold_seconds {
        return ThresholdEstimate {
            seconds: s,
            scope: ThresholdScope::Default,
            source_ads: 0,
            statistic: policy.per_ad_statistic,
        };
    }
    let pooled: Vec<f64> = by_app
        .values()
        .filter(|v| !v.is_empty() && v.len() >= policy.min_ads)
        .flatten()
        .map(|t| t.seconds)
        .collect();
    let (seconds, source_ads) = if pooled.is_empty() {
        (FALLBACK_DEFAULT_SECONDS, 0)
    } else {
        (lower_median(&pooled), pooled.len())
    };
    ThresholdEstimate { seconds, scope: ThresholdScope::Default, source_ads, statistic: policy.per_ad_statistic }
}

/// One threshold per app seen in `models`; apps short of `min_ads`
/// three-component ads get the default.
pub fn per_app_thresholds<'a>(
    models: impl IntoIterator<Item = (&'a str, &'a MixtureModel)>,
    policy: &ThresholdPolicy,
) -> BTreeMap<String, ThresholdEstimate> {
    let by_app = per_ad_by_app(models, policy);
    let default = default_threshold(&by_app, policy);
    by_app
        .iter()
        .map(|(app, per_ad)| {
            let t = aggregate_threshold(per_ad, policy, ThresholdScope::PerApp).unwrap_or(default);
            (app.clone(), t)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ThresholdMode {
    Pivot { pivot_app: String },
    PerApp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppThreshold {
    pub app_id: String,
    pub seconds: f64,
    pub source_ads: usize,
    pub scope: ThresholdScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfPoint {
    pub seconds: f64,
    pub fraction: f64,
}

/// Sorted per-ad thresholds with cumulative fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    /// `None` for the pooled curve across all apps.
    pub app_id: Option<String>,
    pub points: Vec<EcdfPoint>,
}

pub fn ecdf(values: &[f64], app_id: Option<String>) -> Ecdf {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let points = v
        .into_iter()
        .enumerate()
        .map(|(i, seconds)| EcdfPoint { seconds, fraction: (i + 1) as f64 / n })
        .collect();
    Ecdf { app_id, points }
}

/// Thresholds report as written by `dwellcut thresholds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    /// `pivot_global` or `per_app`.
    pub scope: ThresholdScope,
    pub statistic: Statistic,
    pub aggregate: Aggregate,
    pub thresholds: Vec<AppThreshold>,
    pub default: AppThreshold,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ecdf: Vec<Ecdf>,
}

impl ThresholdReport {
    pub fn build<'a>(
        models: impl IntoIterator<Item = (&'a str, &'a MixtureModel)> + Clone,
        policy: &ThresholdPolicy,
        mode: &ThresholdMode,
    ) -> Result<Self> {
        policy.validate()?;
        let by_app = per_ad_by_app(models, policy);
        let mut ecdfs: Vec<Ecdf> = by_app
            .iter()
            .map(|(app, v)| ecdf(&v.iter().map(|t| t.seconds).collect::<Vec<_>>(), Some(app.clone())))
            .collect();
        let pooled: Vec<f64> = by_app.values().flatten().map(|t| t.seconds).collect();
        ecdfs.push(ecdf(&pooled, None));

        let (scope, thresholds, default) = match mode {
            ThresholdMode::Pivot { pivot_app } => {
                let per_ad = by_app
                    .get(pivot_app)
                    .ok_or_else(|| Error::UnknownApp(format!("pivot app {pivot_app:?} has no fitted ads")))?;
                let t = aggregate_threshold(per_ad, policy, ThresholdScope::PivotGlobal)?;
                let entry = AppThreshold {
                    app_id: pivot_app.clone(),
                    seconds: t.seconds,
                    source_ads: t.source_ads,
                    scope: ThresholdScope::PivotGlobal,
                };
                (ThresholdScope::PivotGlobal, vec![entry.clone()], entry)
            }
            ThresholdMode::PerApp => {
                let d = default_threshold(&by_app, policy);
                let thresholds = by_app
                    .iter()
                    .map(|(app, per_ad)| {
                        let t = aggregate_threshold(per_ad, policy, ThresholdScope::PerApp).unwrap_or(d);
                        AppThreshold { app_id: app.clone(), seconds: t.seconds, source_ads: t.source_ads, scope: t.scope }
                    })
                    .collect();
                let default = AppThreshold {
                    app_id: "*".into(),
                    seconds: d.seconds,
                    source_ads: d.source_ads,
                    scope: ThresholdScope::Default,
                };
                (ThresholdScope::PerApp, thresholds, default)
            }
        };
        Ok(Self {
            scope,
            statistic: policy.per_ad_statistic,
            aggregate: policy.aggregate,
            thresholds,
            default,
            ecdf: ecdfs,
        })
    }

    /// Resolves the report into an app lookup. A pivot report applies its
    /// single threshold to every app.
    pub fn lookup(&self) -> ThresholdLookup {
        let est = |t: &AppThreshold| ThresholdEstimate {
            seconds: t.seconds,
            scope: t.scope,
            source_ads: t.source_ads,
            statistic: self.statistic,
        };
        let per_app = if self.scope == ThresholdScope::PivotGlobal {
            BTreeMap::new()
        } else {
            self.thresholds.iter().map(|t| (t.app_id.clone(), est(t))).collect()
        };
        ThresholdLookup { per_app, default: est(&self.default) }
    }
}

/// App-to-threshold map with a fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdLookup {
    pub per_app: BTreeMap<String, ThresholdEstimate>,
    pub default: ThresholdEstimate,
}

impl ThresholdLookup {
    pub fn uniform(seconds: f64) -> Self {
        Self { per_app: BTreeMap::new(), default: ThresholdEstimate::new(seconds, ThresholdScope::Default, 0) }
    }

    pub fn get(&self, app_id: &str) -> &ThresholdEstimate {
        self.per_app.get(app_id).unwrap_or(&self.default)
    }

    pub fn seconds_for(&self, app_id: &str) -> f64 {
        self.get(app_id).seconds
    }
}
