//! Fitting every ad of a click log, as used by `dwellcut fit` and the
//! acceptance suite.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{preprocess, AdSample, ClickRecord, GroupKey, IngestConfig, PreprocessStats};
use crate::mixture::{select_model, FitConfig, KDiagnostic, MixtureModel};
use crate::rng::RNG_ALGORITHM;

pub const TOOL_NAME: &str = "dwellcut";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedAd {
    pub ad_id: String,
    pub app_id: String,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<MixtureModel>,
    pub selection: Vec<KDiagnostic>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Share of fitted ads by selected component count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KSummary {
    pub fitted: usize,
    pub counts: [usize; 3],
    pub percent: [f64; 3],
}

impl KSummary {
    fn from_ads(ads: &[FittedAd]) -> Self {
        let mut counts = [0; 3];
        for m in ads.iter().filter_map(|a| a.model.as_ref()) {
            counts[m.k - 1] += 1;
        }
        let fitted: usize = counts.iter().sum();
        let percent = counts.map(|c| if fitted == 0 { 0.0 } else { 100.0 * c as f64 / fitted as f64 });
        Self { fitted, counts, percent }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsFile {
    pub tool: String,
    pub version: String,
    pub rng: String,
    pub fit_config: FitConfig,
    pub ingest_config: IngestConfig,
    pub stats: PreprocessStats,
    pub summary: KSummary,
    /// Groups under the click floor, not fitted.
    pub skipped_low_sample: usize,
    pub failed: usize,
    pub ads: Vec<FittedAd>,
}

impl ModelsFile {
    /// `(app_id, model)` for every successfully fitted ad.
    pub fn models(&self) -> impl Iterator<Item = (&str, &MixtureModel)> + Clone {
        self.ads
            .iter()
            .filter_map(|a| a.model.as_ref().map(|m| (a.app_id.as_str(), m)))
    }
}

fn fit_one(sample: &AdSample, cfg: &FitConfig) -> Result<FittedAd> {
    let base = FittedAd {
        ad_id: sample.ad_id.clone(),
        app_id: sample.app_id.clone(),
        n: sample.n(),
        model: None,
        selection: Vec::new(),
        error: None,
    };
    match select_model(&sample.log_dwell, cfg) {
        Ok(sel) => Ok(FittedAd { model: Some(sel.model), selection: sel.diagnostics, ..base }),
        Err(Error::FitFailure(msg)) => Ok(FittedAd { error: Some(msg), ..base }),
        Err(e) => Err(e),
    }
}

/// Fits every group that clears the click floor. Work runs in parallel; the
/// output keeps the groups' key order.
pub fn fit_groups(
    groups: &BTreeMap<GroupKey, AdSample>,
    stats: PreprocessStats,
    ingest: &IngestConfig,
    cfg: &FitConfig,
) -> Result<ModelsFile> {
    cfg.validate()?;
    let eligible: Vec<&AdSample> = groups.values().filter(|s| !s.low_sample).collect();
    if eligible.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no (ad, app) group has at least {} clicks",
            ingest.min_clicks_threshold
        )));
    }
    let ads = eligible
        .par_iter()
        .map(|s| fit_one(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let failed = ads.iter().filter(|a| a.model.is_none()).count();
    if failed == ads.len() {
        return Err(Error::FitFailure("every eligible ad failed to fit".into()));
    }
    Ok(ModelsFile {
        tool: TOOL_NAME.to_owned(),
        version: TOOL_VERSION.to_owned(),
        rng: RNG_ALGORITHM.to_owned(),
        fit_config: cfg.clone(),
        ingest_config: ingest.clone(),
        summary: KSummary::from_ads(&ads),
        skipped_low_sample: groups.len() - eligible.len(),
        stats,
        failed,
        ads,
    })
}

pub fn fit_records(records: &[ClickRecord], ingest: &IngestConfig, cfg: &FitConfig) -> Result<ModelsFile> {
    ingest.validate()?;
    let (groups, stats) = preprocess(records, ingest);
    fit_groups(&groups, stats, ingest, cfg)
}
