//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_bigint::BigInt;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use dwellcut_core::billing::{
    build_discount_report, discount_factor, nacr_agresti_coull, nacr_mle, nacr_normal_interval,
    revenue_impact, ClickCounts, DiscountConfig, NacrEstimate, DEFAULT_Z,
};
use dwellcut_core::ingest::{filter_accidental, is_accidental, ClickRecord, Platform};
use dwellcut_core::mixture::{select_model, FitConfig};
use dwellcut_core::pipeline::fit_records;
use dwellcut_core::rng::stream_rng;
use dwellcut_core::synth::{generate, AppSpec, ClicksPerAd, GroundTruth, MixtureSpec, ScenarioSpec};
use dwellcut_core::threshold::{
    aggregate_threshold, per_ad_threshold, ThresholdEstimate, ThresholdLookup, ThresholdMode,
    ThresholdPolicy, ThresholdReport, ThresholdScope,
};
use dwellcut_core::validation::{
    compare_aic, fit_linear, fit_logit, two_sample_ttest, LabeledDwell, RegressionModel,
};
use dwellcut_core::IngestConfig;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

const W: [f64; 3] = [0.1, 0.4, 0.5];
const MU: [f64; 3] = [0.75, 2.3, 4.0];
const S2: [f64; 3] = [0.04, 0.25, 0.36];

fn app(app_id: &str, ads: u32, clicks: u32, weights: [f64; 3], mus: [f64; 3]) -> AppSpec {
    AppSpec {
        app_id: app_id.into(),
        platform: Platform::Android,
        ads,
        clicks_per_ad: ClicksPerAd::Fixed { count: clicks },
        mixture: MixtureSpec { weights, mus, sigma2s: S2 },
        cpc_range: [0.05, 1.5],
        mu1_spread: 0.0,
    }
}

fn three_component_sample(seed: u64, n: u32) -> Vec<f64> {
    let spec = ScenarioSpec { seed, conversion: None, apps: vec![app("x", 1, n, W, MU)] };
    let (records, _) = generate(&spec).unwrap();
    records.iter().map(|r| r.dwell_seconds.ln()).collect()
}

fn criterion_1() -> Outcome {
    let data = three_component_sample(1, 50_000);
    let start = Instant::now();
    let sel = select_model(&data, &FitConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let m = &sel.model;
    if m.k != 3 {
        return outcome(false, format!("selected K={} in {secs:.2}s", m.k));
    }
    let dmu = (0..3).map(|i| (m.components[i].mu - MU[i]).abs()).fold(0.0, f64::max);
    let dw = (0..3).map(|i| (m.components[i].weight - W[i]).abs()).fold(0.0, f64::max);
    outcome(
        dmu <= 0.05 && dw <= 0.03 && secs < 10.0,
        format!("K=3, max|dmu|={dmu:.4} (<=0.05), max|dw|={dw:.4} (<=0.03), {secs:.2}s (<10s)"),
    )
}

fn criterion_2() -> Outcome {
    let cfg = FitConfig::default();
    let norm = Normal::new(2.0, 0.8).unwrap();
    let mut k1 = 0;
    let mut k1_bic = 0;
    for rep in 0..100u64 {
        let mut rng = stream_rng(10_000 + rep, 0);
        let data: Vec<f64> = (0..10_000).map(|_| norm.sample(&mut rng)).collect();
        let sel = select_model(&data, &cfg).unwrap();
        if sel.model.k == 1 {
            k1 += 1;
        }
        // informational only: what BIC would pick from the same fits
        let best_bic = sel
            .diagnostics
            .iter()
            .filter_map(|d| d.bic.map(|b| (b, d.k)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if matches!(best_bic, Some((_, 1))) {
            k1_bic += 1;
        }
    }
    let mut k3 = 0;
    for rep in 0..100u64 {
        let data = three_component_sample(20_000 + rep, 10_000);
        if select_model(&data, &cfg).unwrap().model.k == 3 {
            k3 += 1;
        }
    }
    outcome(k1 >= 95 && k3 >= 95, format!("single Gaussian -> K=1 in {k1}/100 (BIC would give {k1_bic}/100); three components -> K=3 in {k3}/100 (need >=95 each)"))
}

fn criterion_3() -> Outcome {
    let policy = ThresholdPolicy::default();
    let mut exact = 0;
    let mut checked = 0;
    for rep in 0..20u64 {
        let data = three_component_sample(30_000 + rep, 2_000);
        let m = select_model(&data, &FitConfig::default()).unwrap().model;
        if let Some(t) = per_ad_threshold(&m, &policy) {
            checked += 1;
            if t.seconds.to_bits() == m.components[0].mu.exp().to_bits() {
                exact += 1;
            }
        }
    }

    let mut rng = stream_rng(3, 3);
    let mut agree = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=200);
        let vals: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..8.0)).collect();
        let ests: Vec<ThresholdEstimate> =
            vals.iter().map(|&s| ThresholdEstimate::new(s, ThresholdScope::PerAd, 1)).collect();
        let got = aggregate_threshold(&ests, &policy, ThresholdScope::PerApp).unwrap().seconds;
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        if got.to_bits() == sorted[(n - 1) / 2].to_bits() {
            agree += 1;
        }
    }
    outcome(
        checked > 0 && exact == checked && agree == 1000,
        format!("exp(mu1) bit-exact on {exact}/{checked} fitted K=3 ads; median-of-medians matches sorted lower median on {agree}/1000"),
    )
}

fn anchor_network() -> ScenarioSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/anchor_network.toml");
    ScenarioSpec::from_toml_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn per_app_lookup(records: &[ClickRecord]) -> (ThresholdReport, ThresholdLookup) {
    let models = fit_records(records, &IngestConfig::default(), &FitConfig::default()).unwrap();
    let report = ThresholdReport::build(models.models(), &ThresholdPolicy::default(), &ThresholdMode::PerApp).unwrap();
    let lookup = report.lookup();
    (report, lookup)
}

fn criterion_4() -> Outcome {
    let (records, _) = generate(&anchor_network()).unwrap();
    let (report, _) = per_app_lookup(&records);
    let anchors = [("app1", 2.1), ("app2", 2.44), ("app3", 1.80)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (app, anchor) in anchors {
        let t = report.thresholds.iter().find(|t| t.app_id == app).map_or(f64::NAN, |t| t.seconds);
        ok &= (t - anchor).abs() <= 0.15;
        parts.push(format!("{app} {t:.3}s vs {anchor}s"));
    }
    outcome(ok, format!("{} (tolerance 0.15s)", parts.join(", ")))
}

/// (X, n, z, normal lcb, normal ucb, AC centre, AC lcb, AC ucb), evaluated
/// once with a standalone script and frozen.
const INTERVAL_ORACLE: [(u64, u64, f64, f64, f64, f64, f64, f64); 30] = [
    (265, 859, 2.764582, 0.2649314309362354, 0.35206507663070286, 0.3101871054249062, 0.2667473966405739, 0.35362681420923847),
    (342, 756, 0.547993, 0.44246109242038884, 0.46230081234151593, 0.45239985998315035, 0.44248193356766924, 0.46231778639863147),
    (0, 10, 1.639734, 0.0, 0.0, 0.10594945677274976, 0.0, 0.24762496128433126),
    (2, 10, 0.849368, 0.09256250193352415, 0.30743749806647586, 0.22018647517959153, 0.11269839159570397, 0.32767455876347906),
    (4, 7, 1.343077, 0.3202142034018692, 0.8226429394552737, 0.5567932971384901, 0.3319320525476893, 0.7816545417292909),
    (318, 431, 2.418059, 0.6865914538255352, 0.7890465972185484, 0.734635920153825, 0.6835549240730033, 0.7857169162346466),
    (11, 12, 0.656148, 0.8643155098416578, 0.9690178234916754, 0.9022354574097801, 0.8469631475204874, 0.9575077672990727),
    (193, 285, 1.139715, 0.6456282914479567, 0.708757673464324, 0.6763890505026127, 0.6448755770381311, 0.7079025239670942),
    (56, 568, 2.79099, 0.06368034979293406, 0.13350274879861523, 0.10402204202848503, 0.06851310161622877, 0.1395309824407413),
    (272006, 345971, 1.637385, 0.7850691211648458, 0.7873516886718167, 0.786208187008067, 0.7850669033664645, 0.7873494706496696),
    (231383, 436247, 1.427242, 0.5293160346390873, 0.5314729220758012, 0.5303943364335735, 0.5293158952143828, 0.5314727776527641),
    (188434, 593036, 2.415207, 0.31628437526489456, 0.3192048699074053, 0.31774641527013536, 0.3162861729296737, 0.319206657610597),
    (304747, 693661, 2.498491, 0.4378424576675871, 0.4408201743673694, 0.4393318619877139, 0.43784301013690297, 0.44082071383852484),
    (2850, 219573, 1.436416, 0.012632772071256399, 0.013326703820588226, 0.01298431435123881, 0.012637289750198824, 0.013331338952278794),
    (7, 18, 2.846612, 0.06180068595591365, 0.7159770918218642, 0.42338104104838364, 0.14809032625633223, 0.6986717558404351),
    (446620, 553784, 2.453946, 0.8051850174962432, 0.8077904386382786, 0.8064843953538677, 0.8051816833396096, 0.8077871073681259),
    (8, 18, 2.938347, 0.10030114533619344, 0.7885877435526953, 0.46245384135199524, 0.17857833995504901, 0.7463293427489415),
    (475870, 655681, 1.242779, 0.7250797994954211, 0.7264492214766675, 0.7257639786841704, 0.7250792680869464, 0.7264486892813944),
    (10, 20, 1.474909, 0.33510016076868815, 0.6648998392313119, 0.5, 0.34339705524084896, 0.656602944759151),
    (9, 15, 1.121253, 0.458171467468129, 0.741828532531871, 0.5922667639635175, 0.455611183527612, 0.728922344399423),
    (431708, 645114, 1.019795, 0.6685990640385115, 0.6697938401613663, 0.6691961793404666, 0.668598791636022, 0.6697935670449112),
    (57888, 61597, 2.806796, 0.9370957688972532, 0.9424762881834488, 0.939729788189214, 0.9370385251107651, 0.942421051267663),
    (689, 743, 2.443487, 0.9040496906231001, 0.9505936471965499, 0.9239151547811211, 0.9002427288984894, 0.9475875806637527),
    (50, 405, 3.143266, 0.0720763548896807, 0.17483722535723287, 0.13242394073140948, 0.08011729689346506, 0.1847305845693539),
    (101279, 379576, 0.967977, 0.2661264870018602, 0.2675163144397484, 0.26682197631837007, 0.2661270629803503, 0.2675168896563898),
    (152, 172, 2.89348, 0.81299728999686, 0.9544445704682563, 0.8659099922248537, 0.7924974547896978, 0.9393225296600095),
    (282, 630, 0.722363, 0.4333084145973462, 0.4619296806407491, 0.44766239713614875, 0.4333575556360386, 0.4619672386362589),
    (276, 444, 2.287931, 0.5689620102748953, 0.6742812329683479, 0.6202044468590151, 0.5678144122151353, 0.6725944815028949),
    (6, 10, 2.471945, 0.21704792729037226, 0.9829520727096277, 0.5620712733925857, 0.2565217974679497, 0.8676207493172217),
    (2, 6, 2.933753, 0.0, 0.8979343614286239, 0.4315392353128736, 0.05134562742164256, 0.8117328432041047),
];

/// Agresti-Coull width at X=0, n=10, z=1.959964.
const AC_WIDTH_X0_N10: f64 = 0.3208873092406205;

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    for &(x, n, z, nl, nu, ap, al, au) in &INTERVAL_ORACLE {
        let c = ClickCounts::new("a", n, x);
        let norm = nacr_normal_interval(&c, z).unwrap();
        let ac = nacr_agresti_coull(&c, z).unwrap();
        for (got, want) in [(norm.lcb, nl), (norm.ucb, nu), (ac.point, ap), (ac.lcb, al), (ac.ucb, au)] {
            worst = worst.max((got - want).abs());
        }
    }
    let ac = nacr_agresti_coull(&ClickCounts::new("a", 10, 0), DEFAULT_Z).unwrap();
    let dw = (ac.ucb - ac.lcb - AC_WIDTH_X0_N10).abs();
    outcome(
        worst <= 1e-12 && dw <= 1e-12,
        format!("30 triples max abs diff {worst:.2e} (<=1e-12); AC width at X=0,n=10 = {:.10} (diff {dw:.1e})", ac.ucb - ac.lcb),
    )
}

fn random_estimate(rng: &mut impl Rng, id: &str) -> NacrEstimate {
    let n = match rng.random_range(0..3) {
        0 => rng.random_range(1..=20),
        1 => rng.random_range(21..=5_000),
        _ => rng.random_range(5_001..=2_000_000),
    };
    let x = rng.random_range(0..=n);
    let z = rng.random_range(0.5..3.3);
    let c = ClickCounts::new(id, n, x);
    if rng.random::<bool>() {
        nacr_agresti_coull(&c, z).unwrap()
    } else {
        nacr_normal_interval(&c, z).unwrap()
    }
}

fn criterion_6() -> Outcome {
    let mut rng = stream_rng(6, 6);
    let mut mismatches = 0;
    let mut above = 0;
    let mut cases = 0;
    while cases < 10_000 {
        let a = random_estimate(&mut rng, "a");
        let mut p = random_estimate(&mut rng, "p");
        if p.method != a.method {
            p = if a.method == dwellcut_core::IntervalMethod::AgrestiCoull {
                nacr_agresti_coull(&ClickCounts::new("p", p.n, (p.point * p.n as f64).round() as u64), p.z).unwrap()
            } else {
                nacr_normal_interval(&ClickCounts::new("p", p.n, (p.point * p.n as f64).round().min(p.n as f64) as u64), p.z).unwrap()
            };
        }
        if !(p.ucb > 0.0) {
            continue;
        }
        cases += 1;
        let f = discount_factor(&a, &p, true).unwrap();
        if f > 1.0 {
            above += 1;
        }
        if (f > 1.0) != (a.lcb > p.ucb) {
            mismatches += 1;
        }
    }
    let prop_ok = mismatches == 0;

    let ratio = 0.70 / 0.95;
    let mut gaps = Vec::new();
    for n in [100u64, 10_000, 1_000_000] {
        let a = nacr_agresti_coull(&ClickCounts::new("a", n, n * 70 / 100), DEFAULT_Z).unwrap();
        let p = nacr_agresti_coull(&ClickCounts::new("p", n, n * 95 / 100), DEFAULT_Z).unwrap();
        let mle = discount_factor(
            &nacr_mle(&ClickCounts::new("a", n, n * 70 / 100)).unwrap(),
            &nacr_mle(&ClickCounts::new("p", n, n * 95 / 100)).unwrap(),
            true,
        )
        .unwrap();
        debug_assert!((mle - ratio).abs() < 1e-12);
        gaps.push((discount_factor(&a, &p, true).unwrap() - mle).abs());
    }
    let conv_ok = gaps[0] > gaps[1] && gaps[1] > gaps[2] && gaps[2] < 1e-3;

    // app with n <= 10 against a well-estimated pivot
    let mut worst: f64 = 0.0;
    let mut overlapping = 0;
    for n in 1..=10u64 {
        for x in 0..=n {
            let a = nacr_agresti_coull(&ClickCounts::new("a", n, x), DEFAULT_Z).unwrap();
            for pn in [10_000u64, 100_000, 1_000_000] {
                for pp in [0.50, 0.60, 0.70, 0.80, 0.90, 0.95, 0.99] {
                    let p = nacr_agresti_coull(&ClickCounts::new("p", pn, (pp * pn as f64) as u64), DEFAULT_Z).unwrap();
                    if a.lcb <= p.ucb && p.lcb <= a.ucb {
                        overlapping += 1;
                        worst = worst.max((discount_factor(&a, &p, true).unwrap() - 1.0).abs());
                    }
                }
            }
        }
    }
    let small_ok = overlapping > 0 && worst <= 0.05;
    outcome(
        prop_ok && conv_ok && small_ok,
        format!(
            "iff holds on {}/10000 cases ({above} above 1); |AC - MLE| gaps {:.2e} > {:.2e} > {:.2e}; small-n worst |f-1| = {worst:.4} over {overlapping} overlapping pairs (<=0.05)",
            10_000 - mismatches,
            gaps[0],
            gaps[1],
            gaps[2]
        ),
    )
}

/// Exact sum of doubles, rounded once to nearest-even, via integers in units
/// of 2^-1074.
fn bigint_sum(values: &[f64]) -> f64 {
    let mut total = BigInt::from(0);
    for &v in values {
        assert!(v.is_finite());
        let bits = v.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, shift) = if exp == 0 { (frac, 0) } else { (frac | (1u64 << 52), exp - 1) };
        let mut m = BigInt::from(mant) << (shift as usize);
        if bits >> 63 == 1 {
            m = -m;
        }
        total += m;
    }
    let negative = total < BigInt::from(0);
    let mag = if negative { -total } else { total };
    let len = mag.bits() as i64;
    let (q, scale) = if len <= 53 {
        (u64::try_from(&mag).unwrap(), 0i64)
    } else {
        let shift = len - 53;
        let q = &mag >> (shift as usize);
        let rem = &mag - (&q << (shift as usize));
        let half = BigInt::from(1) << ((shift - 1) as usize);
        let mut q = u64::try_from(&q).unwrap();
        if rem > half || (rem == half && q & 1 == 1) {
            q += 1;
        }
        if q == 1u64 << 53 {
            (q >> 1, shift + 1)
        } else {
            (q, shift)
        }
    };
    // q * 2^(scale - 1074), with both factors exact
    let e = scale - 1074;
    let value = if e >= -1022 {
        q as f64 * f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        assert_eq!(scale, 0);
        q as f64 * f64::from_bits(1) // q < 2^53 units of the smallest subnormal
    };
    if negative {
        -value
    } else {
        value
    }
}

fn criterion_7() -> Outcome {
    let apps = vec![
        app("a1", 50, 500, [0.10, 0.40, 0.50], MU),
        app("a2", 50, 500, [0.25, 0.35, 0.40], MU),
        app("a3", 50, 500, [0.35, 0.30, 0.35], MU),
        app("a4", 50, 500, [0.15, 0.45, 0.40], MU),
    ];
    let (records, _) = generate(&ScenarioSpec { seed: 77, conversion: None, apps }).unwrap();
    let mut lookup = ThresholdLookup::uniform(2.1);
    for (id, t) in [("a2", 2.3), ("a3", 1.9)] {
        lookup.per_app.insert(id.into(), ThresholdEstimate::new(t, ThresholdScope::PerApp, 1));
    }
    let report = build_discount_report(&records, &lookup, &DiscountConfig::default()).unwrap();
    let imp = report.impact.clone().unwrap();

    let mut all = Vec::new();
    let mut kept = Vec::new();
    let mut smooth = Vec::new();
    for r in &records {
        let cpc = r.cpc.unwrap();
        all.push(cpc);
        if r.dwell_seconds > lookup.seconds_for(&r.app_id) {
            kept.push(cpc);
            smooth.push(cpc);
        } else {
            smooth.push(cpc * report.factor_for(&r.app_id));
        }
    }
    let oracle = (bigint_sum(&all), bigint_sum(&kept), bigint_sum(&smooth));
    let exact = imp.chargeall.to_bits() == oracle.0.to_bits()
        && imp.discard.to_bits() == oracle.1.to_bits()
        && imp.smooth.to_bits() == oracle.2.to_bits();

    let all_le_one = report.pivot_factor <= 1.0 && report.entries.iter().all(|e| e.discount_factor <= 1.0);
    let ordered = !all_le_one || (imp.discard <= imp.smooth && imp.smooth <= imp.chargeall);

    let mut shuffled = records.clone();
    shuffled.shuffle(&mut stream_rng(7, 7));
    let again = revenue_impact(&shuffled, &report, &lookup);
    let stable = again.chargeall.to_bits() == imp.chargeall.to_bits()
        && again.discard.to_bits() == imp.discard.to_bits()
        && again.smooth.to_bits() == imp.smooth.to_bits();

    outcome(
        records.len() == 100_000 && exact && ordered && stable,
        format!(
            "{} clicks; exact match {exact}; discard {:.6} <= smooth {:.6} <= charge-all {:.6} ({}); shuffled bit-identical {stable}",
            records.len(),
            imp.discard,
            imp.smooth,
            imp.chargeall,
            if all_le_one { if ordered { "holds" } else { "violated" } } else { "n/a: a factor exceeds 1" }
        ),
    )
}

fn labels_in_order(truth: &GroundTruth) -> Vec<u8> {
    truth.labels().collect()
}

fn criterion_8() -> Outcome {
    let apps = vec![
        app("f1", 40, 400, [0.20, 0.40, 0.40], MU),
        app("f2", 40, 400, [0.30, 0.35, 0.35], [0.90, 2.45, 4.0]),
        app("f3", 40, 400, [0.15, 0.45, 0.40], [0.60, 2.15, 4.0]),
    ];
    let (records, truth) = generate(&ScenarioSpec { seed: 88, conversion: None, apps }).unwrap();
    let labels = labels_in_order(&truth);
    let (_, lookup) = per_app_lookup(&records);
    let (_, removed) = filter_accidental(&records, &lookup);

    // filter_accidental keeps relative order, so a merge walk recovers labels
    let mut j = 0;
    let (mut c1, mut c1_removed, mut rest, mut rest_removed) = (0usize, 0usize, 0usize, 0usize);
    for (r, &label) in records.iter().zip(&labels) {
        let was_removed = j < removed.len() && removed[j] == *r;
        if was_removed {
            j += 1;
            debug_assert!(is_accidental(r.dwell_seconds, lookup.seconds_for(&r.app_id)));
        }
        if label == 1 {
            c1 += 1;
            c1_removed += was_removed as usize;
        } else {
            rest += 1;
            rest_removed += was_removed as usize;
        }
    }
    let recall = c1_removed as f64 / c1 as f64;
    let collateral = rest_removed as f64 / rest as f64;
    outcome(
        j == removed.len() && recall >= 0.90 && collateral <= 0.10,
        format!(
            "removed {:.1}% of component-1 clicks (need >=90%), {:.2}% of component-2/3 clicks (need <=10%); threshold is the first component's median",
            100.0 * recall,
            100.0 * collateral
        ),
    )
}

fn logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

fn criterion_9() -> Outcome {
    // covariate drawn with the unconverted group's log-dwell mean and sd
    let mut rng = stream_rng(9, 0);
    let xdist = Normal::new(3.264, 2.569).unwrap();
    let data: Vec<LabeledDwell> = (0..200_000)
        .map(|_| {
            let x = xdist.sample(&mut rng);
            LabeledDwell { log_dwell: x, converted: rng.random::<f64>() < logistic(-6.424 + 0.301 * x) }
        })
        .collect();
    let logit = fit_logit(&data).unwrap();
    let linear = fit_linear(&data).unwrap();
    let ranked = compare_aic(&[linear.clone(), logit.clone()]).unwrap();
    let beta_ok = logit.converged && (logit.beta1 - 0.301).abs() <= 0.03;
    let aic_ok = ranked[0].model == RegressionModel::Logit;

    let mut rng = stream_rng(9, 1);
    let yes = Normal::new(5.729, 2.582).unwrap();
    let no = Normal::new(3.264, 2.569).unwrap();
    let a: Vec<f64> = (0..1_600).map(|_| yes.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..180_000).map(|_| no.sample(&mut rng)).collect();
    let t = two_sample_ttest(&a, &b).unwrap();
    let t_ok = t.p < 0.01;

    outcome(
        beta_ok && aic_ok && t_ok,
        format!(
            "logit b1 = {:.4} +/- {:.4} (need |b1-0.301|<=0.03: {beta_ok}); AIC logit {:.1} vs linear {:.1} -> winner {} (need logit); t-test t = {:.2}, p = {:.1e} (need <0.01: {t_ok})",
            logit.beta1, logit.se1, logit.aic, linear.aic, ranked[0].model, t.t, t.p
        ),
    )
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dwellcut")).args(args).output().unwrap()
}

fn digests(manifest: &Path) -> (serde_json::Value, serde_json::Value) {
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(manifest).unwrap()).unwrap();
    (v["inputs"].clone(), v["outputs"].clone())
}

fn snapshot(files: &[PathBuf]) -> BTreeMap<PathBuf, Vec<u8>> {
    files.iter().map(|f| (f.clone(), std::fs::read(f).unwrap())).collect()
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |name: &str| d.join(name);
    let s = |pb: &PathBuf| pb.display().to_string();
    let scenario = r#"
        seed = 5
        [conversion]
        beta0 = -2.0
        beta1 = 0.5
        [[apps]]
        app_id = "p"
        platform = "ios"
        ads = 4
        clicks_per_ad = { kind = "uniform", low = 150, high = 250 }
        cpc_range = [0.1, 0.5]
        mixture = { weights = [0.1, 0.4, 0.5], mus = [0.75, 2.3, 4.0], sigma2s = [0.04, 0.25, 0.36] }
        [[apps]]
        app_id = "q"
        platform = "android"
        ads = 4
        clicks_per_ad = { kind = "uniform", low = 150, high = 250 }
        cpc_range = [0.1, 0.5]
        mixture = { weights = [0.3, 0.3, 0.4], mus = [0.80, 2.3, 4.0], sigma2s = [0.04, 0.25, 0.36] }
    "#;
    std::fs::write(p("scenario.toml"), scenario).unwrap();

    let steps: Vec<(&str, Vec<String>, Vec<PathBuf>, PathBuf)> = vec![
        (
            "synth",
            vec!["synth".into(), "--scenario".into(), s(&p("scenario.toml")), "--out".into(), s(&p("clicks.csv"))],
            vec![p("clicks.csv"), p("clicks.csv.truth.json")],
            p("clicks.csv.manifest.json"),
        ),
        (
            "fit",
            vec!["fit".into(), "--input".into(), s(&p("clicks.csv")), "--out".into(), s(&p("models.json")), "--seed".into(), "3".into(), "--restarts".into(), "4".into()],
            vec![p("models.json")],
            p("models.json.manifest.json"),
        ),
        (
            "thresholds",
            vec!["thresholds".into(), "--models".into(), s(&p("models.json")), "--out".into(), s(&p("thr.json")), "--mode".into(), "per-app".into(), "--ecdf".into()],
            vec![p("thr.json")],
            p("thr.json.manifest.json"),
        ),
        (
            "thresholds (pivot)",
            vec!["thresholds".into(), "--models".into(), s(&p("models.json")), "--out".into(), s(&p("thr_pivot.json")), "--mode".into(), "pivot".into(), "--pivot-app".into(), "p".into()],
            vec![p("thr_pivot.json")],
            p("thr_pivot.json.manifest.json"),
        ),
        (
            "discount",
            vec!["discount".into(), "--input".into(), s(&p("clicks.csv")), "--thresholds".into(), s(&p("thr.json")), "--out".into(), s(&p("discount.json"))],
            vec![p("discount.json")],
            p("discount.json.manifest.json"),
        ),
        (
            "filter",
            vec!["filter".into(), "--input".into(), s(&p("clicks.csv")), "--thresholds".into(), s(&p("thr.json")), "--out".into(), s(&p("kept.csv"))],
            vec![p("kept.csv"), p("kept.removed.csv"), p("kept.csv.stats.json")],
            p("kept.csv.manifest.json"),
        ),
        (
            "validate",
            vec!["validate".into(), "--input".into(), s(&p("clicks.csv")), "--out".into(), s(&p("validation.json"))],
            vec![p("validation.json")],
            p("validation.json.manifest.json"),
        ),
        (
            "pipeline",
            vec!["pipeline".into(), "--scenario".into(), s(&p("scenario.toml")), "--out-dir".into(), s(&p("pipe")), "--restarts".into(), "4".into()],
            ["clicks.csv", "truth.json", "models.json", "thresholds.json", "discount.json", "kept.csv", "removed.csv", "filter_stats.json", "validation.json"]
                .iter()
                .map(|f| p("pipe").join(f))
                .collect(),
            p("pipe").join("pipeline.manifest.json"),
        ),
    ];

    let mut failures = Vec::new();
    for (name, args, outputs, manifest) in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let first = cli(&args);
        if !first.status.success() {
            failures.push(format!("{name}: exit {:?}", first.status.code()));
            continue;
        }
        let snap = snapshot(outputs);
        let dig = digests(manifest);
        let second = cli(&args);
        if !second.status.success() || snap != snapshot(outputs) || dig != digests(manifest) {
            failures.push(format!("{name}: rerun differs"));
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} command runs repeated with byte-identical outputs and equal manifest digests", steps.len())
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("EM recovery", criterion_1),
        ("model-selection sanity", criterion_2),
        ("threshold formula exactness", criterion_3),
        ("anchor thresholds", criterion_4),
        ("interval oracles", criterion_5),
        ("guarded-ratio properties", criterion_6),
        ("billing replay", criterion_7),
        ("filtering soundness", criterion_8),
        ("conversion validation", criterion_9),
        ("determinism", criterion_10),
    ];
    let only: Option<usize> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
