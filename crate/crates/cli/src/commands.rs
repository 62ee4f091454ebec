use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use dwellcut_core::billing::{build_discount_report, DiscountConfig, IntervalMethod};
use dwellcut_core::ingest::{filter_accidental, parse_click_log, write_click_log, ClickRecord, Format, IngestConfig};
use dwellcut_core::mixture::{Criterion, FitConfig};
use dwellcut_core::pipeline::{fit_records, ModelsFile};
use dwellcut_core::synth::{generate, ScenarioSpec};
use dwellcut_core::threshold::{Aggregate, Statistic, ThresholdLookup, ThresholdMode, ThresholdPolicy, ThresholdReport};
use dwellcut_core::validation::{labeled_from_records, ValidationReport};
use dwellcut_core::Error;

use crate::config::FileConfig;
use crate::manifest::{manifest_path, sibling, Run};
use crate::{
    Cli, CliError, Command, DiscountArgs, DiscountCmd, FilterCmd, FitArgs, FitCmd, FormatArg, PipelineCmd,
    SynthArgs, ThresholdArgs, ThresholdsCmd, ValidateCmd,
};

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> CliResult<T> {
    s.parse().map_err(usage)
}

pub fn run(cli: Cli) -> CliResult {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(usage)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    let ctx = Ctx { file, summary: cli.summary };
    match cli.command {
        Command::Synth(a) => synth(&ctx, &a),
        Command::Fit(a) => fit(&ctx, &a),
        Command::Thresholds(a) => thresholds(&ctx, &a),
        Command::Discount(a) => discount(&ctx, &a),
        Command::Filter(a) => filter(&ctx, &a),
        Command::Validate(a) => validate(&ctx, &a),
        Command::Pipeline(a) => pipeline(&ctx, &a),
    }
}

struct Ctx {
    file: FileConfig,
    summary: bool,
}

impl Ctx {
    fn say(&self, line: impl AsRef<str>) {
        if self.summary {
            eprintln!("{}", line.as_ref());
        }
    }

    fn format(&self, arg: &FormatArg, path: &Path) -> CliResult<Format> {
        if let Some(f) = arg.format.as_deref().or(self.file.format.as_deref()) {
            return parse(f);
        }
        Ok(match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => Format::Jsonl,
            _ => Format::Csv,
        })
    }

    fn fit_config(&self, a: &FitArgs) -> CliResult<(FitConfig, IngestConfig)> {
        let f = &self.file.fit;
        let d = FitConfig::default();
        let cfg = FitConfig {
            restarts: a.restarts.or(f.restarts).unwrap_or(d.restarts),
            max_iters: a.max_iters.or(f.max_iters).unwrap_or(d.max_iters),
            seed: a.seed.or(self.file.seed).unwrap_or(d.seed),
            criterion: match a.criterion.as_deref().or(f.criterion.as_deref()) {
                Some(c) => parse::<Criterion>(c)?,
                None => d.criterion,
            },
            ..d
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        let di = IngestConfig::default();
        let ingest = IngestConfig {
            outlier_cap_seconds: a.outlier_cap.or(f.outlier_cap).unwrap_or(di.outlier_cap_seconds),
            min_clicks_threshold: a.min_clicks.or(f.min_clicks).unwrap_or(di.min_clicks_threshold),
            ..di
        };
        ingest.validate().map_err(|e| usage(e.to_string()))?;
        Ok((cfg, ingest))
    }

    fn threshold_config(&self, a: &ThresholdArgs) -> CliResult<(ThresholdPolicy, ThresholdMode, bool)> {
        let f = &self.file.thresholds;
        let d = ThresholdPolicy::default();
        let policy = ThresholdPolicy {
            aggregate: match a.aggregate.as_deref().or(f.aggregate.as_deref()) {
                Some(s) => parse::<Aggregate>(s)?,
                None => d.aggregate,
            },
            per_ad_statistic: match a.statistic.as_deref().or(f.statistic.as_deref()) {
                Some(s) => parse::<Statistic>(s)?,
                None => d.per_ad_statistic,
            },
            default_threshold_seconds: a.default_threshold.or(f.default_threshold),
            ..d
        };
        policy.validate().map_err(|e| usage(e.to_string()))?;
        let mode = match a.mode.as_deref().or(f.mode.as_deref()).unwrap_or("per-app") {
            "per-app" => ThresholdMode::PerApp,
            "pivot" => ThresholdMode::Pivot {
                pivot_app: a
                    .pivot_app
                    .clone()
                    .or_else(|| f.pivot_app.clone())
                    .ok_or_else(|| usage("--mode pivot requires --pivot-app"))?,
            },
            other => return Err(usage(format!("unknown mode {other:?} (expected pivot or per-app)"))),
        };
        Ok((policy, mode, a.ecdf || f.ecdf.unwrap_or(false)))
    }

    fn discount_config(&self, a: &DiscountArgs, min_clicks: Option<u64>) -> CliResult<DiscountConfig> {
        let f = &self.file.discount;
        let d = DiscountConfig::default();
        let cfg = DiscountConfig {
            method: match a.method.as_deref().or(f.method.as_deref()) {
                Some(m) => parse::<IntervalMethod>(m)?,
                None => d.method,
            },
            z: a.z.or(f.z).unwrap_or(d.z),
            min_clicks: min_clicks.or(f.min_clicks).unwrap_or(d.min_clicks),
            pivot_alert_clicks: a.pivot_alert.or(f.pivot_alert),
        };
        if !(cfg.z.is_finite() && cfg.z >= 0.0) {
            return Err(usage("--z must be finite and non-negative"));
        }
        if cfg.min_clicks == 0 {
            return Err(usage("--min-clicks must be positive"));
        }
        Ok(cfg)
    }
}

fn read_clicks(ctx: &Ctx, run: &mut Run, path: &Path, format: Format) -> CliResult<Vec<ClickRecord>> {
    let bytes = run.read(path)?;
    let parsed = parse_click_log(&bytes[..], format)?;
    if !parsed.rejected.is_empty() {
        run.notes.push(format!("{}: {} rows rejected", path.display(), parsed.rejected.len()));
        for d in parsed.rejected.iter().take(5) {
            ctx.say(format!("  line {}: {}", d.line, d.reason));
        }
    }
    Ok(parsed.records)
}

fn click_bytes(records: &[ClickRecord], format: Format) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_click_log(records, format, &mut buf)?;
    Ok(buf)
}

fn read_json<T: serde::de::DeserializeOwned>(run: &mut Run, path: &Path) -> CliResult<T> {
    let bytes = run.read(path)?;
    Ok(serde_json::from_slice(&bytes).map_err(Error::from)?)
}

fn read_scenario(run: &mut Run, path: &Path, seed: Option<u64>) -> CliResult<ScenarioSpec> {
    let bytes = run.read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))?;
    let mut spec: ScenarioSpec = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

/// `dir/name.ext` -> `dir/name.<tag>.ext`
fn tagged(path: &Path, tag: &str) -> PathBuf {
    match (path.file_stem(), path.extension()) {
        (Some(stem), Some(ext)) => {
            let mut name = stem.to_owned();
            name.push(format!(".{tag}."));
            name.push(ext);
            path.with_file_name(name)
        }
        _ => sibling(path, tag),
    }
}

fn ext(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Jsonl => "jsonl",
    }
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> CliResult {
    let mut run = Run::start("synth");
    let format = ctx.format(&a.format, &a.out)?;
    let spec = read_scenario(&mut run, &a.scenario, a.seed.or(ctx.file.seed))?;
    let (records, truth) = generate(&spec)?;
    run.write(&a.out, &click_bytes(&records, format)?)?;
    let truth_path = a.truth.clone().unwrap_or_else(|| sibling(&a.out, "truth.json"));
    run.write_json(&truth_path, &truth)?;
    ctx.say(format!("synth: {} clicks across {} apps", records.len(), truth.apps.len()));
    run.finish(&manifest_path(&a.out), Some(spec.seed), &json!({ "format": ext(format) }))?;
    Ok(())
}

fn summarize_models(ctx: &Ctx, m: &ModelsFile) {
    ctx.say(format!(
        "fit: {} ads fitted, {} skipped (low sample), {} failed",
        m.summary.fitted, m.skipped_low_sample, m.failed
    ));
    for (k, (c, p)) in m.summary.counts.iter().zip(m.summary.percent).enumerate() {
        ctx.say(format!("  K={}: {:>6} ads  {:6.2}%", k + 1, c, p));
    }
}

fn fit(ctx: &Ctx, a: &FitCmd) -> CliResult {
    let mut run = Run::start("fit");
    let format = ctx.format(&a.format, &a.input)?;
    let (cfg, ingest) = ctx.fit_config(&a.fit)?;
    let records = read_clicks(ctx, &mut run, &a.input, format)?;
    let models = fit_records(&records, &ingest, &cfg)?;
    summarize_models(ctx, &models);
    run.write_json(&a.out, &models)?;
    run.finish(&manifest_path(&a.out), Some(cfg.seed), &json!({ "fit": cfg, "ingest": ingest }))?;
    Ok(())
}

fn build_thresholds(
    models: &ModelsFile,
    policy: &ThresholdPolicy,
    mode: &ThresholdMode,
    with_ecdf: bool,
) -> CliResult<ThresholdReport> {
    let mut report = ThresholdReport::build(models.models(), policy, mode)?;
    if !with_ecdf {
        report.ecdf.clear();
    }
    Ok(report)
}

fn summarize_thresholds(ctx: &Ctx, r: &ThresholdReport) {
    ctx.say(format!("thresholds ({:?}):", r.scope));
    for t in &r.thresholds {
        ctx.say(format!("  {:<20} {:8.4} s  ({} ads)", t.app_id, t.seconds, t.source_ads));
    }
    ctx.say(format!("  {:<20} {:8.4} s", "default", r.default.seconds));
}

fn thresholds(ctx: &Ctx, a: &ThresholdsCmd) -> CliResult {
    let mut run = Run::start("thresholds");
    let (policy, mode, with_ecdf) = ctx.threshold_config(&a.thresholds)?;
    let models: ModelsFile = read_json(&mut run, &a.models)?;
    let report = build_thresholds(&models, &policy, &mode, with_ecdf)?;
    summarize_thresholds(ctx, &report);
    run.write_json(&a.out, &report)?;
    run.finish(
        &manifest_path(&a.out),
        None,
        &json!({ "policy": policy, "mode": mode, "ecdf": with_ecdf }),
    )?;
    Ok(())
}

fn summarize_discount(ctx: &Ctx, r: &dwellcut_core::DiscountReport) {
    ctx.say(format!("discount: pivot {} (nacr {:.4})", r.pivot_app, r.pivot_nacr.point));
    for e in &r.entries {
        ctx.say(format!(
            "  {:<20} nacr {:.4} [{:.4}, {:.4}]  factor {:.4}",
            e.app_id, e.nacr.point, e.nacr.lcb, e.nacr.ucb, e.discount_factor
        ));
    }
    if let Some(i) = &r.impact {
        ctx.say(format!(
            "  revenue: charge-all {:.6}  discard {:.6}  smooth {:.6}  mitigation {}",
            i.chargeall,
            i.discard,
            i.smooth,
            i.mitigation_ratio.map_or("n/a".to_owned(), |m| format!("{m:.4}"))
        ));
    }
}

fn discount(ctx: &Ctx, a: &DiscountCmd) -> CliResult {
    let mut run = Run::start("discount");
    let format = ctx.format(&a.format, &a.input)?;
    let cfg = ctx.discount_config(&a.discount, a.min_clicks)?;
    let records = read_clicks(ctx, &mut run, &a.input, format)?;
    let report: ThresholdReport = read_json(&mut run, &a.thresholds)?;
    let out = build_discount_report(&records, &report.lookup(), &cfg)?;
    summarize_discount(ctx, &out);
    run.write_json(&a.out, &out)?;
    run.finish(&manifest_path(&a.out), None, &json!({ "discount": cfg }))?;
    Ok(())
}

#[derive(Debug, Default, Serialize)]
struct AppFilterStats {
    threshold_seconds: f64,
    kept: usize,
    removed: usize,
}

#[derive(Debug, Serialize)]
struct FilterStats {
    total: usize,
    kept: usize,
    removed: usize,
    per_app: BTreeMap<String, AppFilterStats>,
}

fn filter_stats(kept: &[ClickRecord], removed: &[ClickRecord], lookup: &ThresholdLookup) -> FilterStats {
    let mut per_app: BTreeMap<String, AppFilterStats> = BTreeMap::new();
    for (records, is_kept) in [(kept, true), (removed, false)] {
        for r in records {
            let e = per_app.entry(r.app_id.clone()).or_insert_with(|| AppFilterStats {
                threshold_seconds: lookup.seconds_for(&r.app_id),
                ..Default::default()
            });
            if is_kept {
                e.kept += 1;
            } else {
                e.removed += 1;
            }
        }
    }
    FilterStats { total: kept.len() + removed.len(), kept: kept.len(), removed: removed.len(), per_app }
}

#[allow(clippy::too_many_arguments)]
fn write_filtered(
    ctx: &Ctx,
    run: &mut Run,
    records: &[ClickRecord],
    lookup: &ThresholdLookup,
    format: Format,
    kept_path: &Path,
    removed_path: &Path,
    stats_path: &Path,
) -> CliResult {
    let (kept, removed) = filter_accidental(records, lookup);
    run.write(kept_path, &click_bytes(&kept, format)?)?;
    run.write(removed_path, &click_bytes(&removed, format)?)?;
    let stats = filter_stats(&kept, &removed, lookup);
    ctx.say(format!("filter: kept {} removed {} of {}", stats.kept, stats.removed, stats.total));
    run.write_json(stats_path, &stats)?;
    Ok(())
}

fn filter(ctx: &Ctx, a: &FilterCmd) -> CliResult {
    let mut run = Run::start("filter");
    let format = ctx.format(&a.format, &a.input)?;
    let records = read_clicks(ctx, &mut run, &a.input, format)?;
    let report: ThresholdReport = read_json(&mut run, &a.thresholds)?;
    let removed = a.removed.clone().unwrap_or_else(|| tagged(&a.out, "removed"));
    write_filtered(ctx, &mut run, &records, &report.lookup(), format, &a.out, &removed, &sibling(&a.out, "stats.json"))?;
    run.finish(&manifest_path(&a.out), None, &json!({ "format": ext(format) }))?;
    Ok(())
}

fn validation_report(records: &[ClickRecord]) -> CliResult<ValidationReport> {
    let (data, skipped) = labeled_from_records(records);
    if data.is_empty() {
        return Err(Error::Contract("no click carries a conversion label".into()).into());
    }
    Ok(ValidationReport::build(&data, skipped)?)
}

fn summarize_validation(ctx: &Ctx, r: &ValidationReport) {
    ctx.say(format!(
        "validate: t = {:.3}, df = {:.1}, p = {:.3e}; winner {}",
        r.ttest.t, r.ttest.df, r.ttest.p, r.winner
    ));
    for f in &r.fits {
        ctx.say(format!("  {:<7} b0 {:+.5} b1 {:+.5} aic {:.1}", f.model.to_string(), f.beta0, f.beta1, f.aic));
    }
    ctx.say(format!("  odds ratio per unit log-dwell {:.4} ({:+.1}%)", r.odds.odds_ratio, r.odds.percent_change));
}

fn validate(ctx: &Ctx, a: &ValidateCmd) -> CliResult {
    let mut run = Run::start("validate");
    let format = ctx.format(&a.format, &a.input)?;
    let records = read_clicks(ctx, &mut run, &a.input, format)?;
    let report = validation_report(&records)?;
    summarize_validation(ctx, &report);
    run.write_json(&a.out, &report)?;
    run.finish(&manifest_path(&a.out), None, &json!({ "format": ext(format) }))?;
    Ok(())
}

fn pipeline(ctx: &Ctx, a: &PipelineCmd) -> CliResult {
    let mut run = Run::start("pipeline");
    let format = match a.format.format.as_deref().or(ctx.file.format.as_deref()) {
        Some(f) => parse(f)?,
        None => Format::Csv,
    };
    let (fit_cfg, ingest) = ctx.fit_config(&a.fit)?;
    let (policy, mode, with_ecdf) = ctx.threshold_config(&a.thresholds)?;
    let disc_cfg = ctx.discount_config(&a.discount, a.discount_min_clicks)?;
    let dir = &a.out_dir;
    let path = |name: &str| dir.join(name);

    let spec = read_scenario(&mut run, &a.scenario, a.fit.seed.or(ctx.file.seed))?;
    let (generated, truth) = generate(&spec)?;
    let clicks_path = path(&format!("clicks.{}", ext(format)));
    let bytes = click_bytes(&generated, format)?;
    run.write(&clicks_path, &bytes)?;
    run.write_json(&path("truth.json"), &truth)?;
    // read back what was written so every later stage sees the file contents
    let records = parse_click_log(&bytes[..], format)?.records;
    ctx.say(format!("synth: {} clicks", records.len()));

    let models = fit_records(&records, &ingest, &fit_cfg)?;
    summarize_models(ctx, &models);
    run.write_json(&path("models.json"), &models)?;

    let report = build_thresholds(&models, &policy, &mode, with_ecdf)?;
    summarize_thresholds(ctx, &report);
    run.write_json(&path("thresholds.json"), &report)?;
    let lookup = report.lookup();

    let disc = build_discount_report(&records, &lookup, &disc_cfg)?;
    summarize_discount(ctx, &disc);
    run.write_json(&path("discount.json"), &disc)?;

    write_filtered(
        ctx,
        &mut run,
        &records,
        &lookup,
        format,
        &path(&format!("kept.{}", ext(format))),
        &path(&format!("removed.{}", ext(format))),
        &path("filter_stats.json"),
    )?;

    if spec.conversion.is_some() {
        let v = validation_report(&records)?;
        summarize_validation(ctx, &v);
        run.write_json(&path("validation.json"), &v)?;
    }

    run.finish(
        &path("pipeline.manifest.json"),
        Some(spec.seed),
        &json!({
            "format": ext(format),
            "fit": fit_cfg,
            "ingest": ingest,
            "policy": policy,
            "mode": mode,
            "ecdf": with_ecdf,
            "discount": disc_cfg,
        }),
    )?;
    Ok(())
}
