//! Accidental ad-click detection from dwell time.
//!
//! The pipeline fits each ad's log-dwell observations to a mixture of up to
//! three Gaussians (equivalently, a mixture of Log-Normals over raw dwell),
//! reads an accidental-click threshold off the lowest component, aggregates
//! thresholds per app, and turns per-app non-accidental click rates into
//! smooth billing discounts. Filtered click logs feed CTR-model training.
//!
//! Modules map onto the stages:
//!
//! - [`ingest`]: click-log parsing, outlier removal, grouping, filtering
//! - [`mixture`]: EM fitting and AIC/BIC model selection
//! - [`threshold`]: per-ad, per-app and pivot thresholds
//! - [`billing`]: NACR intervals, pivot selection, discount factors, revenue replay
//! - [`validation`]: dwell time as a conversion proxy (t-test, linear vs. logit)
//! - [`synth`]: seeded synthetic click logs with ground truth
//! - [`pipeline`]: glue used by the CLI and the acceptance suite

pub mod billing;
pub mod error;
pub mod ingest;
pub mod mixture;
pub mod pipeline;
pub mod rng;
pub mod sum;
pub mod synth;
pub mod threshold;
pub mod validation;

pub use billing::{
    count_clicks, discount_factor, revenue_impact, select_pivot, ClickCounts, DiscountConfig,
    DiscountReport, IntervalMethod, NacrEstimate, RevenueImpact,
};
pub use error::{Error, Result};
pub use ingest::{
    filter_accidental, parse_click_log, preprocess, AdSample, ClickRecord, Format, IngestConfig,
    Platform, PreprocessStats,
};
pub use mixture::{
    em_fit, select_model, Criterion, FitConfig, MixtureComponent, MixtureModel, Selection,
};
pub use threshold::{
    Aggregate, Statistic, ThresholdEstimate, ThresholdPolicy, ThresholdReport, ThresholdScope,
};
