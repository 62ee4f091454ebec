//! Seeded synthetic click logs with known ground truth.
//!
//! Each click picks a mixture component with probability `w_i`, then draws a
//! log-dwell from `Normal(mu_i, sigma2_i)`; dwell is its exponential. Zero
//! weights stand in for one- and two-component ads. Every ad draws from its
//! own random stream, so output does not depend on generation order.
//!
//! Scenarios are TOML:
//!
//! ```toml
//! seed = 7
//!
//! [conversion]            # optional
//! beta0 = -6.424
//! beta1 = 0.301
//!
//! [[apps]]
//! app_id = "app1"
//! platform = "android"
//! ads = 100
//! clicks_per_ad = { kind = "uniform", low = 150, high = 450 }   # or { kind = "fixed", count = 200 }
//! cpc_range = [0.10, 0.90]
//! mu1_spread = 0.05       # optional sd of per-ad jitter on the first mean
//! mixture = { weights = [0.2, 0.4, 0.4], mus = [0.74, 2.3, 4.0], sigma2s = [0.04, 0.25, 0.36] }
//! ```

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ClickRecord, Platform};
use crate::rng::{ad_stream, stream_rng, StreamRng, RNG_ALGORITHM};

/// Timestamps fall in the week starting 2024-01-01T00:00:00Z.
pub const EPOCH_START: i64 = 1_704_067_200;
const WEEK_SECONDS: i64 = 7 * 24 * 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: [f64; 3],
    pub mus: [f64; 3],
    pub sigma2s: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClicksPerAd {
    Fixed { count: u32 },
    /// Inclusive on both ends.
    Uniform { low: u32, high: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub app_id: String,
    pub platform: Platform,
    pub ads: u32,
    pub clicks_per_ad: ClicksPerAd,
    pub mixture: MixtureSpec,
    pub cpc_range: [f64; 2],
    #[serde(default)]
    pub mu1_spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversionSpec {
    pub beta0: f64,
    pub beta1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    #[serde(default)]
    pub conversion: Option<ConversionSpec>,
    pub apps: Vec<AppSpec>,
}

impl ScenarioSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Every violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.apps.is_empty() {
            v.push("scenario has no apps".to_owned());
        }
        let mut ids: Vec<&str> = self.apps.iter().map(|a| a.app_id.as_str()).collect();
        ids.sort_unstable();
        for w in ids.windows(2).filter(|w| w[0] == w[1]) {
            v.push(format!("duplicate app_id {:?}", w[0]));
        }
        if let Some(c) = &self.conversion {
            if !(c.beta0.is_finite() && c.beta1.is_finite()) {
                v.push("conversion coefficients must be finite".to_owned());
            }
        }
        for a in &self.apps {
            let p = format!("app {:?}", a.app_id);
            if a.app_id.is_empty() || a.app_id.contains(',') {
                v.push(format!("{p}: app_id must be non-empty and free of commas"));
            }
            if a.ads == 0 {
                v.push(format!("{p}: ads must be positive"));
            }
            match a.clicks_per_ad {
                ClicksPerAd::Fixed { count: 0 } => v.push(format!("{p}: clicks_per_ad count must be positive")),
                ClicksPerAd::Uniform { low, high } if low == 0 || low > high => {
                    v.push(format!("{p}: clicks_per_ad needs 0 < low <= high"))
                }
                _ => {}
            }
            let [lo, hi] = a.cpc_range;
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                v.push(format!("{p}: cpc_range needs 0 <= low <= high"));
            }
            if !(a.mu1_spread.is_finite() && a.mu1_spread >= 0.0) {
                v.push(format!("{p}: mu1_spread must be finite and non-negative"));
            }
            let m = &a.mixture;
            if m.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                v.push(format!("{p}: weights must be non-negative"));
            }
            let sum: f64 = m.weights.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                v.push(format!("{p}: weights sum to {sum}, not 1"));
            }
            let mut last_mu = f64::NEG_INFINITY;
            for i in 0..3 {
                if m.weights[i] <= 0.0 {
                    continue;
                }
                if !m.mus[i].is_finite() {
                    v.push(format!("{p}: mus[{i}] must be finite"));
                }
                if !(m.sigma2s[i].is_finite() && m.sigma2s[i] > 0.0) {
                    v.push(format!("{p}: sigma2s[{i}] must be positive"));
                }
                if m.mus[i] <= last_mu {
                    v.push(format!("{p}: mus must increase across positive-weight components"));
                }
                last_mu = m.mus[i];
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidScenario(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdTruth {
    pub ad_id: String,
    pub mixture: MixtureSpec,
    /// 1-based component of each click, in output order.
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppTruth {
    pub app_id: String,
    /// First-component weight of the scenario.
    pub accidental_weight: f64,
    pub clicks: u64,
    pub accidental_clicks: u64,
    pub ads: Vec<AdTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub rng: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conversion: Option<ConversionSpec>,
    pub apps: Vec<AppTruth>,
}

impl GroundTruth {
    pub fn app(&self, app_id: &str) -> Result<&AppTruth> {
        self.apps
            .iter()
            .find(|a| a.app_id == app_id)
            .ok_or_else(|| Error::UnknownApp(app_id.to_owned()))
    }

    /// Latent labels of every click, aligned with the generated log.
    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.apps.iter().flat_map(|a| a.ads.iter().flat_map(|d| d.labels.iter().copied()))
    }
}

/// Fraction of the app's clicks drawn from the first component.
pub fn oracle_accidental_rate(truth: &GroundTruth, app_id: &str) -> Result<f64> {
    let a = truth.app(app_id)?;
    if a.clicks == 0 {
        return Ok(0.0);
    }
    Ok(a.accidental_clicks as f64 / a.clicks as f64)
}

fn logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

fn generate_ad(
    seed: u64,
    app_idx: u32,
    ad_idx: u32,
    app: &AppSpec,
    conversion: Option<ConversionSpec>,
) -> (Vec<ClickRecord>, AdTruth) {
    let mut rng: StreamRng = stream_rng(seed, ad_stream(app_idx, ad_idx));
    let mut mixture = app.mixture.clone();
    if app.mu1_spread > 0.0 {
        let z: f64 = StandardNormal.sample(&mut rng);
        mixture.mus[0] += app.mu1_spread * z;
    }
    let n = match app.clicks_per_ad {
        ClicksPerAd::Fixed { count } => count,
        ClicksPerAd::Uniform { low, high } => rng.random_range(low..=high),
    };
    let normals: Vec<Option<Normal<f64>>> = (0..3)
        .map(|i| (mixture.weights[i] > 0.0).then(|| Normal::new(mixture.mus[i], mixture.sigma2s[i].sqrt()).expect("validated")))
        .collect();
    let ad_id = format!("{}-ad{:04}", app.app_id, ad_idx);
    let [cpc_lo, cpc_hi] = app.cpc_range;
    let mut records = Vec::with_capacity(n as usize);
    let mut labels = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut comp = 0;
        let mut acc = mixture.weights[0];
        while comp < 2 && (u >= acc || mixture.weights[comp] == 0.0) {
            comp += 1;
            acc += mixture.weights[comp];
        }
        while mixture.weights[comp] == 0.0 {
            // rounding left u past the last positive weight
            comp -= 1;
        }
        let x = normals[comp].as_ref().expect("positive weight").sample(&mut rng);
        let cpc = if cpc_lo == cpc_hi { cpc_lo } else { rng.random_range(cpc_lo..cpc_hi) };
        let timestamp = EPOCH_START + rng.random_range(0..WEEK_SECONDS);
        let converted = conversion.map(|c| rng.random::<f64>() < logistic(c.beta0 + c.beta1 * x));
        labels.push(comp as u8 + 1);
        records.push(ClickRecord {
            ad_id: ad_id.clone(),
            app_id: app.app_id.clone(),
            platform: app.platform,
            timestamp,
            dwell_seconds: x.exp(),
            cpc: Some(cpc),
            converted,
        });
    }
    (records, AdTruth { ad_id, mixture, labels })
}

/// Click log sorted by app, ad and click index, plus the latent labels.
pub fn generate(spec: &ScenarioSpec) -> Result<(Vec<ClickRecord>, GroundTruth)> {
    spec.validate()?;
    let mut apps: Vec<&AppSpec> = spec.apps.iter().collect();
    apps.sort_by(|a, b| a.app_id.cmp(&b.app_id));
    let jobs: Vec<(u32, u32)> = apps
        .iter()
        .enumerate()
        .flat_map(|(i, a)| (0..a.ads).map(move |j| (i as u32, j)))
        .collect();
    let ads: Vec<(Vec<ClickRecord>, AdTruth)> = jobs
        .par_iter()
        .map(|&(i, j)| generate_ad(spec.seed, i, j, apps[i as usize], spec.conversion))
        .collect();

    let mut records = Vec::new();
    let mut truth_apps: Vec<AppTruth> = apps
        .iter()
        .map(|a| AppTruth {
            app_id: a.app_id.clone(),
            accidental_weight: a.mixture.weights[0],
            clicks: 0,
            accidental_clicks: 0,
            ads: Vec::new(),
        })
        .collect();
    for ((i, _), (recs, ad)) in jobs.into_iter().zip(ads) {
        let t = &mut truth_apps[i as usize];
        t.clicks += ad.labels.len() as u64;
        t.accidental_clicks += ad.labels.iter().filter(|&&l| l == 1).count() as u64;
        t.ads.push(ad);
        records.extend(recs);
    }
    Ok((
        records,
        GroundTruth {
            seed: spec.seed,
            rng: RNG_ALGORITHM.to_owned(),
            conversion: spec.conversion,
            apps: truth_apps,
        },
    ))
}
