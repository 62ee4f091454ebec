//! Settings file. Any flag may be given here; command-line flags win.
//!
//! ```toml
//! seed = 7
//! threads = 2
//! format = "csv"
//!
//! [fit]
//! restarts = 10
//! max_iters = 500
//! criterion = "aic"
//! outlier_cap = 600.0
//! min_clicks = 100
//!
//! [thresholds]
//! mode = "per-app"
//! pivot_app = "app1"
//! aggregate = "median"
//! statistic = "median"
//! default_threshold = 2.1
//!
//! [discount]
//! method = "agresti-coull"
//! z = 1.959964
//! min_clicks = 40
//! pivot_alert = 1000
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub format: Option<String>,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub thresholds: ThresholdSection,
    #[serde(default)]
    pub discount: DiscountSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub restarts: Option<usize>,
    pub max_iters: Option<usize>,
    pub criterion: Option<String>,
    pub outlier_cap: Option<f64>,
    pub min_clicks: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    pub mode: Option<String>,
    pub pivot_app: Option<String>,
    pub aggregate: Option<String>,
    pub statistic: Option<String>,
    pub default_threshold: Option<f64>,
    pub ecdf: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscountSection {
    pub method: Option<String>,
    pub z: Option<f64>,
    pub min_clicks: Option<u64>,
    pub pivot_alert: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
