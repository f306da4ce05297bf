//! Acceptance gate: one PASS/FAIL line per criterion, each with its own
//! runtime bound. Lines go straight to stdout so they survive libtest's
//! output capture.

use std::collections::HashMap;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use pathloss::empirical::{
    cost_hata, deygout_loss, itu452, itu_interpolation, knife_edge_loss, points_from_keys, score_baselines, spm,
    standard_baselines, CostHataParams, Itu452Inputs, SpmParams, SuiParams,
};
use pathloss::eval::{
    metrics, repeated_kfold_cv, sparsity_eval, subsample_indices, tune, CvConfig, Learner, Strategy, TuneConfig,
};
use pathloss::explain::{base_value, lighter_model_report, shap_row, tree_shap};
use pathloss::features::{build_feature_matrix, FeatureMatrix};
use pathloss::gbdt::{fit, load_model, save_model, GbdtConfig, Tree, TreeEnsemble};
use pathloss::geodata::GeoStack;
use pathloss::profile::{extract_profile, summarize_profile, PathProfile, ProfileSample};
use pathloss::scenario::{
    clean_traces, generate_scenario, grid_traces, write_sites, write_traces, Averaging, Scenario, ScenarioConfig,
    SiteTopology, DEFAULT_BIN_WIDTH, DEFAULT_UE_HEIGHT,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, title: &str, checks: &[(&str, bool)], elapsed: Duration, limit: Duration) {
    let in_time = elapsed < limit;
    let pass = in_time && checks.iter().all(|(_, ok)| *ok);
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    say!(
        "\nACCEPTANCE {id} {}: {title} [{:.1}s / limit {:.0}s]{}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!(" failed: {}", failed.join("; ")) }
    );
    for (name, ok) in checks {
        say!("    {} {name}", if *ok { "ok  " } else { "FAIL" });
    }
    assert!(in_time, "criterion {id} exceeded its runtime limit");
    assert!(pass, "criterion {id} failed: {failed:?}");
}

/// Seeded synthetic task: default city and traces, 10 m dB-averaged bins.
struct Task {
    scenario: Scenario,
    matrix: FeatureMatrix,
}

fn task(seed: u64) -> Task {
    let scenario = generate_scenario(&ScenarioConfig::default(), seed).unwrap();
    let clean = clean_traces(&scenario.traces, &scenario.sites);
    let binned = grid_traces(&clean, DEFAULT_BIN_WIDTH, Averaging::Decibel);
    let matrix = build_feature_matrix(&scenario.geo, &scenario.sites, &binned, DEFAULT_UE_HEIGHT).unwrap();
    Task { scenario, matrix }
}

/// Lowest offset-calibrated RMSE among the standard empirical baselines.
fn best_empirical(t: &Task) -> (&'static str, f64) {
    let points = points_from_keys(&t.matrix.keys, DEFAULT_BIN_WIDTH, DEFAULT_UE_HEIGHT);
    let scores = score_baselines(
        &standard_baselines(t.scenario.geo.clutter_count),
        &t.scenario.geo,
        &t.scenario.sites,
        &points,
        &t.matrix.targets,
    )
    .unwrap();
    for s in &scores {
        say!(
            "    empirical {:<9} raw rmse {:>9.3}  offset {:>9.3}  calibrated rmse {:.3}",
            s.name, s.raw.rmse, s.offset_db, s.calibrated.rmse
        );
    }
    scores
        .iter()
        .map(|s| (s.name, s.calibrated.rmse))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn flat_profile(d: f64, z_bs: f64, step: f64, clutter_count: usize) -> PathProfile {
    let n = ((d / step).floor() as usize).max(1);
    let mut ts: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
    ts.push(d);
    PathProfile {
        samples: ts
            .iter()
            .map(|&t| ProfileSample {
                t,
                z_ground: 0.0,
                h_building: 0.0,
                clutter: 0,
                z_ray: z_bs * (1.0 - t / d),
            })
            .collect(),
        z_bs,
        z_ue: 0.0,
        h_ue: 1.5,
        d,
        step,
        clutter_count,
    }
}

#[test]
fn criterion_1_empirical_formula_oracles() {
    let _g = serial();
    let t0 = Instant::now();
    let hata = CostHataParams::default();
    let sui_p = SuiParams::default();
    let spm_p = SpmParams::with_clutter_losses(vec![0.0, 0.0]);
    let spm_1m = spm(&spm_p, &flat_profile(1.0, 30.0, 0.5, 2), 2110.0).unwrap();
    let itu = Itu452Inputs {
        l_a: 150.0,
        l_b: 130.0,
        l_c: 90.0,
        l_d: 50.0,
        a_bs: 0.0,
        a_ue: 0.0,
        theta_mrad: 0.3,
    };
    // With F_j = 0.5 the second branch is 130 + 40 * 0.5 = 150 = L_a.
    let urban = cost_hata(&hata, 2110.0, 30.0, 1.5, 1.0).unwrap();
    let checks = [
        ("COST-Hata base term 138.579 +- 1e-3", close(hata.base(2110.0, 30.0, 1.0), 138.579, 1e-3)),
        (
            "COST-Hata urban = base - a(h_UE)",
            close(urban, hata.base(2110.0, 30.0, 1.0) - hata.ue_correction(2110.0, 1.5), 1e-12),
        ),
        ("SUI a(h_BS=30) = 4.795 +- 1e-6", close(sui_p.bs_correction(30.0), 4.795, 1e-6)),
        ("SUI a(h_UE=2) = 0", sui_p.ue_correction(2.0) == 0.0),
        ("SPM at d = 1 m = 39.886 +- 1e-3", close(spm_1m, 39.886, 1e-3)),
        ("ITU F_j(0.3) = 0.5 exactly", itu_interpolation(0.3) == 0.5),
        ("ITU equal branches = L0 - 1.5051 +- 1e-4", close(itu452(&itu), 150.0 - 1.5051, 1e-4)),
        ("Deygout J(0) = 6.03 +- 0.01", close(knife_edge_loss(0.0), 6.03, 0.01)),
        ("Deygout on a clear path = 0", deygout_loss(&flat_profile(200.0, 30.0, 2.5, 2), 2110.0) == 0.0),
    ];
    verdict(1, "empirical-formula oracles", &checks, t0.elapsed(), Duration::from_secs(1));
}

/// Path-dependent value of a feature subset: known features follow the
/// row, unknown ones average both branches weighted by cover.
fn subset_value(e: &TreeEnsemble, row: &[f64], known: u32) -> f64 {
    fn go(t: &Tree, row: &[f64], known: u32, n: usize) -> f64 {
        if t.feature[n] < 0 {
            return t.value[n];
        }
        let f = t.feature[n] as usize;
        let (l, r) = (t.left[n] as usize, t.right[n] as usize);
        if known >> f & 1 == 1 {
            go(t, row, known, if row[f] < t.threshold[n] { l } else { r })
        } else {
            (t.cover[l] * go(t, row, known, l) + t.cover[r] * go(t, row, known, r)) / t.cover[n]
        }
    }
    e.base_score + e.trees.iter().map(|t| e.learning_rate * go(t, row, known, 0)).sum::<f64>()
}

fn exhaustive_shapley(e: &TreeEnsemble, row: &[f64]) -> Vec<f64> {
    let m = e.n_features();
    let values: Vec<f64> = (0u32..1 << m).map(|s| subset_value(e, row, s)).collect();
    let fact: Vec<f64> = (0..=m).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    }).collect();
    (0..m)
        .map(|i| {
            (0u32..1 << m)
                .filter(|s| s >> i & 1 == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    fact[k] * fact[m - k - 1] / fact[m] * (values[(s | 1 << i) as usize] - values[s as usize])
                })
                .sum()
        })
        .collect()
}

#[test]
fn criterion_2_treeshap_exactness() {
    let _g = serial();
    let t0 = Instant::now();
    let t = task(2);
    let rows = subsample_indices(t.matrix.n_rows(), 1000.0 / t.matrix.n_rows() as f64, 2);
    let sample = t.matrix.select_rows(&rows);
    let cfg = GbdtConfig {
        n_estimators: 100,
        max_depth: 6,
        seed: 2,
        ..GbdtConfig::default()
    };
    let model = fit(&sample, &cfg).unwrap();
    let shap = tree_shap(&model, &sample).unwrap();
    let mut worst_local = 0.0f64;
    for i in 0..sample.n_rows() {
        let total = shap.base + shap.row(i).iter().sum::<f64>();
        worst_local = worst_local.max((total - model.predict_row(sample.row(i))).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst_oracle = 0.0f64;
    let mut worst_small_local = 0.0f64;
    for _ in 0..50 {
        let m = rng.random_range(2..=8);
        let n = rng.random_range(60..200);
        let names: Vec<String> = (0..m).map(|j| format!("x{j}")).collect();
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let w: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = data
            .iter()
            .map(|r| r.iter().zip(&w).map(|(a, b)| (a * b).sin() + a * b).sum::<f64>() + rng.random_range(-0.2..0.2))
            .collect();
        let fm = FeatureMatrix::from_rows(names, &data, y);
        let small = fit(
            &fm,
            &GbdtConfig {
                n_estimators: rng.random_range(1..=10),
                max_depth: rng.random_range(1..=3),
                learning_rate: rng.random_range(0.05..1.0),
                min_samples_leaf: rng.random_range(1..10),
                seed: 0,
                ..GbdtConfig::default()
            },
        )
        .unwrap();
        for r in data.iter().take(20) {
            let fast = shap_row(&small, r).unwrap();
            let slow = exhaustive_shapley(&small, r);
            for (a, b) in fast.iter().zip(&slow) {
                worst_oracle = worst_oracle.max((a - b).abs());
            }
            let total = base_value(&small).unwrap() + fast.iter().sum::<f64>();
            worst_small_local = worst_small_local.max((total - small.predict_row(r)).abs());
        }
    }
    say!("    worst local-accuracy gap {worst_local:.3e}, worst oracle gap {worst_oracle:.3e}");
    let checks = [
        ("local accuracy <= 1e-9 on 1000 rows of a 100-tree model", worst_local <= 1e-9),
        ("equal to the 2^M-subset oracle on 50 small ensembles (<= 1e-9)", worst_oracle <= 1e-9),
        ("local accuracy on the small ensembles", worst_small_local <= 1e-9),
    ];
    verdict(2, "TreeSHAP exactness", &checks, t0.elapsed(), Duration::from_secs(30));
}

/// Independent ray oracle: ten times finer sampling than the profile. The
/// BS sample is skipped and the UE sample counts.
struct RayOracle {
    los: bool,
    d_indoor: f64,
    n_pen: usize,
}

fn lookup(geo: &GeoStack, x: f64, y: f64) -> (f64, f64) {
    let g = &geo.dtm;
    let col = (((x - g.xll) / g.cellsize).floor() as i64).clamp(0, g.ncols as i64 - 1) as usize;
    let row_from_bottom = (((y - g.yll) / g.cellsize).floor() as i64).clamp(0, g.nrows as i64 - 1) as usize;
    let idx = (g.nrows - 1 - row_from_bottom) * g.ncols + col;
    (geo.dtm.values[idx], geo.dhm.values[idx])
}

fn ray_oracle(geo: &GeoStack, bs: (f64, f64, f64), ue: (f64, f64)) -> RayOracle {
    let (g0, b0) = lookup(geo, bs.0, bs.1);
    let (g1, b1) = lookup(geo, ue.0, ue.1);
    let z_bs = g0 + b0 + bs.2;
    let z_ue = g1 + b1;
    let d = ((ue.0 - bs.0).powi(2) + (ue.1 - bs.1).powi(2)).sqrt();
    let n = (d / (geo.dtm.cellsize / 20.0)).ceil().max(1.0) as usize;
    let seg = d / n as f64;
    let mut los = true;
    let mut d_indoor = 0.0;
    let mut n_pen = 0;
    let mut in_run = false;
    for k in 1..=n {
        let f = k as f64 / n as f64;
        let (g, b) = lookup(geo, bs.0 + f * (ue.0 - bs.0), bs.1 + f * (ue.1 - bs.1));
        let obstructed = g + b > z_bs + f * (z_ue - z_bs) + 1e-6;
        los &= !obstructed;
        if obstructed && b > 0.0 {
            d_indoor += seg;
            n_pen += usize::from(!in_run);
            in_run = true;
        } else {
            in_run = false;
        }
    }
    RayOracle { los, d_indoor, n_pen }
}

#[test]
fn criterion_3_geometry_oracle() {
    let _g = serial();
    let t0 = Instant::now();
    let (mut agree, mut total, mut indoor_ok, mut pen_ok, mut violations) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let mut worst_indoor = 0.0f64;
    for city in 0..5u64 {
        let cfg = ScenarioConfig {
            ue_density_per_km2: 0.0,
            ..ScenarioConfig::default()
        };
        let geo = generate_scenario(&cfg, 100 + city).unwrap().geo;
        let (w, h) = (geo.dtm.width(), geo.dtm.height());
        let cs = geo.cellsize();
        let mut rng = ChaCha8Rng::seed_from_u64(city);
        for _ in 0..2000 {
            let bs = (rng.random_range(0.0..w), rng.random_range(0.0..h), rng.random_range(3.0..30.0));
            let ue = loop {
                let p = (rng.random_range(0.0..w), rng.random_range(0.0..h));
                if (p.0 - bs.0).hypot(p.1 - bs.1) > 1.0 {
                    break p;
                }
            };
            let site = SiteTopology {
                cell_id: "probe".into(),
                x: bs.0,
                y: bs.1,
                h_bs: bs.2,
                azimuth_deg: 0.0,
                tilt_deg: 0.0,
                tx_power_dbm: 43.0,
                freq_mhz: 2110.0,
                antenna: "iso".into(),
            };
            let p = extract_profile(&geo, &site, ue.0, ue.1, DEFAULT_UE_HEIGHT).unwrap();
            let s = summarize_profile(&p);
            let o = ray_oracle(&geo, bs, ue);
            total += 1;
            agree += usize::from(s.los == o.los);
            let gap = (s.d_indoor - o.d_indoor).abs();
            worst_indoor = worst_indoor.max(gap / cs);
            indoor_ok += usize::from(gap <= 2.0 * cs);
            pen_ok += usize::from(s.n_pen.abs_diff(o.n_pen) <= 1);
            let n_sum: usize = s.n_pen_c.iter().sum();
            let in_sum: f64 = s.d_indoor_c.iter().sum();
            let out_sum: f64 = s.d_outdoor_c.iter().sum();
            let consistent = n_sum == s.n_pen
                && (in_sum - s.d_indoor).abs() <= 1e-9
                && (out_sum - s.d_outdoor).abs() <= 1e-9
                && (s.d_indoor + s.d_outdoor - p.d).abs() <= p.step;
            violations += usize::from(!consistent);
        }
    }
    let rate = agree as f64 / total as f64;
    say!(
        "    LoS agreement {agree}/{total} ({:.2}%); d_indoor within 2 cells {indoor_ok}/{total}, \
         worst gap {worst_indoor:.2} cells; penetration count within 1 on {pen_ok}/{total}",
        100.0 * rate
    );
    say!(
        "    every-pair d_indoor bound: {}",
        if indoor_ok == total { "holds".to_string() } else { format!("NOT MET on {} pairs", total - indoor_ok) }
    );
    let checks = [
        ("LoS agrees with the 10x ray oracle on >= 99% of 10 000 pairs", total == 10_000 && rate >= 0.99),
        ("|d_indoor - oracle| <= 2 cellsize on >= 99% of pairs", indoor_ok as f64 >= 0.99 * total as f64),
        ("zero summary sum-consistency violations", violations == 0),
    ];
    verdict(3, "geometry oracle", &checks, t0.elapsed(), Duration::from_secs(60));
}

/// Small subset of the synthetic task used for the search experiments.
fn tuning_setup(t: &Task) -> (FeatureMatrix, TuneConfig) {
    let rows = subsample_indices(t.matrix.n_rows(), 0.2, 5);
    let m = t.matrix.select_rows(&rows);
    let cfg = TuneConfig {
        seed: 1,
        cv: CvConfig { k: 3, repeats: 1, seed: 1 },
        ..TuneConfig::default()
    };
    (m, cfg)
}

#[test]
fn criterion_4_ml_beats_empirical() {
    let _g = serial();
    let t0 = Instant::now();
    let t = task(1);
    let (small, mut tcfg) = tuning_setup(&t);
    tcfg.budget = 6;
    let tuned = tune(&small, Strategy::Tpe, &tcfg).unwrap();
    let cv = CvConfig { k: 5, repeats: 1, seed: 1 };
    let report = repeated_kfold_cv(&t.matrix, &Learner::Gbdt(tuned.best_config.clone()), &cv).unwrap();
    let (name, emp) = best_empirical(&t);
    say!(
        "    {} bins; tuned GBDT ({} trees, depth {}, lr {:.4}) CV rmse {:.3} dB vs best empirical {name} {:.3} dB (ratio {:.3})",
        t.matrix.n_rows(),
        tuned.best_config.n_estimators,
        tuned.best_config.max_depth,
        tuned.best_config.learning_rate,
        report.mean_rmse,
        emp,
        report.mean_rmse / emp
    );
    let checks = [
        (">= 5000 binned measurements", t.matrix.n_rows() >= 5000),
        ("shadowing sigma 4 dB", t.scenario.oracle.shadow_sigma_db == 4.0),
        ("tuned GBDT 5-fold RMSE <= 0.5 x best empirical RMSE", report.mean_rmse <= 0.5 * emp),
    ];
    verdict(4, "ML versus empirical direction", &checks, t0.elapsed(), Duration::from_secs(120));
}

#[test]
fn criterion_5_tuning_gain() {
    let _g = serial();
    let t0 = Instant::now();
    let t = task(1);
    let (m, base) = tuning_setup(&t);
    let default = repeated_kfold_cv(&m, &Learner::Gbdt(GbdtConfig::default()), &base.cv).unwrap().mean_rmse;
    let mut checks: Vec<(String, bool)> = Vec::new();
    let mut results = HashMap::new();
    for s in Strategy::ALL {
        let budget = if s == Strategy::Tpe { 6 } else { 10 };
        let r = tune(&m, s, &TuneConfig { budget, ..base.clone() }).unwrap();
        say!(
            "    {:<6} best {:.4} after {} evaluations (default {:.4})",
            s.name(),
            r.best_rmse,
            r.evaluations,
            default
        );
        checks.push((format!("{} best <= default-config RMSE", s.name()), r.best_rmse <= default));
        results.insert(s.name(), r);
    }
    let grid = tune(&m, Strategy::Grid, &TuneConfig { budget: 27, ..base.clone() }).unwrap();
    let tpe = &results["tpe"];
    say!(
        "    full 3x3x3 grid best {:.4} ({} trials); tpe best {:.4} with {} evaluations",
        grid.best_rmse, grid.evaluations, tpe.best_rmse, tpe.evaluations
    );
    checks.push(("grid ran all 27 lattice points".into(), grid.evaluations == 27));
    checks.push((
        "tpe within 2% of the 27-point grid best using <= 6 evaluations".into(),
        tpe.evaluations <= 6 && tpe.best_rmse <= 1.02 * grid.best_rmse,
    ));
    let tpe_curve = tpe.best_so_far();
    checks.push(("tpe best-so-far curve non-increasing".into(), tpe_curve.windows(2).all(|w| w[1] <= w[0])));
    let view: Vec<(&str, bool)> = checks.iter().map(|(n, ok)| (n.as_str(), *ok)).collect();
    verdict(5, "tuning gain", &view, t0.elapsed(), Duration::from_secs(300));
}

#[test]
fn criterion_6_lighter_model() {
    let _g = serial();
    let t0 = Instant::now();
    let t = task(1);
    let cv = CvConfig { k: 5, repeats: 1, seed: 1 };
    let r = lighter_model_report(&t.matrix, &GbdtConfig::default(), 5, &cv, 1).unwrap();
    let time_ratio = r.reduced.mean_train_s / r.full.mean_train_s;
    say!(
        "    top-5 {:?}: rmse {:.3} -> {:.3} ({:+.2}%), train {:.3}s -> {:.3}s (x{:.2}), predict {:+.1}%",
        r.selected,
        r.full.mean_rmse,
        r.reduced.mean_rmse,
        100.0 * r.delta_rmse,
        r.full.mean_train_s,
        r.reduced.mean_train_s,
        time_ratio,
        100.0 * r.delta_predict_s
    );
    let checks = [
        ("exactly 5 selected features", r.selected.len() == 5),
        ("training time <= 0.7 x full model", time_ratio <= 0.7),
        ("CV RMSE degradation <= 10%", r.delta_rmse <= 0.10),
    ];
    verdict(6, "lighter top-5 model", &checks, t0.elapsed(), Duration::from_secs(120));
}

#[test]
fn criterion_7_sparsity_robustness() {
    let _g = serial();
    let t0 = Instant::now();
    let t = task(1);
    let cv = CvConfig { k: 5, repeats: 1, seed: 1 };
    let learner = Learner::Gbdt(GbdtConfig::default());
    let sparse = sparsity_eval(&t.matrix, 0.02, &learner, &cv).unwrap();
    let full = repeated_kfold_cv(&t.matrix, &learner, &cv).unwrap();
    let (name, emp) = best_empirical(&t);
    say!(
        "    2% ({} training rows per fold) rmse {:.3}, 100% rmse {:.3}, best empirical {name} {:.3}",
        sparse.folds[0].n_train, sparse.mean_rmse, full.mean_rmse, emp
    );
    let checks = [
        ("GBDT on a 2% subsample beats the best empirical baseline", sparse.mean_rmse < emp),
        ("rmse(2%) >= rmse(100%)", sparse.mean_rmse >= full.mean_rmse),
    ];
    verdict(7, "sparsity robustness", &checks, t0.elapsed(), Duration::from_secs(60));
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

/// Tuning report with the wall-clock columns dropped.
fn report_without_timings(path: &std::path::Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplitn(3, ',').nth(2).unwrap().to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_8_determinism_and_persistence() {
    let _g = serial();
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut scenario_dirs = Vec::new();
    for run in 0..2 {
        let dir = tmp.path().join(format!("gen{run}"));
        std::fs::create_dir_all(&dir).unwrap();
        let sc = generate_scenario(&ScenarioConfig::default(), 7).unwrap();
        sc.geo.write_dir(&dir).unwrap();
        write_sites(&sc.sites, dir.join("sites.csv")).unwrap();
        write_traces(&sc.traces, dir.join("traces.csv")).unwrap();
        let clean = clean_traces(&sc.traces, &sc.sites);
        let m = build_feature_matrix(&sc.geo, &sc.sites, &grid_traces(&clean, 10.0, Averaging::Decibel), 1.5).unwrap();
        m.write_csv(dir.join("features.csv")).unwrap();
        scenario_dirs.push((dir, m));
    }
    let same_scenario = dir_bytes(&scenario_dirs[0].0) == dir_bytes(&scenario_dirs[1].0);

    let m = &scenario_dirs[0].1;
    let cfg = GbdtConfig {
        n_estimators: 100,
        goss: Some(Default::default()),
        seed: 7,
        ..GbdtConfig::default()
    };
    let a = fit(m, &cfg).unwrap();
    let b = fit(m, &cfg).unwrap();
    let same_model = a.to_json() == b.to_json();

    let small = m.select_rows(&subsample_indices(m.n_rows(), 0.1, 7));
    let tcfg = TuneConfig {
        budget: 3,
        seed: 7,
        base: GbdtConfig {
            min_samples_leaf: 10,
            ..GbdtConfig::default()
        },
        space: pathloss::eval::SearchSpace {
            n_estimators: (20, 80),
            ..Default::default()
        },
        cv: CvConfig { k: 3, repeats: 1, seed: 7 },
        ..TuneConfig::default()
    };
    let (r1, r2) = (tmp.path().join("t1.csv"), tmp.path().join("t2.csv"));
    tune(&small, Strategy::Anneal, &tcfg).unwrap().write_csv(&r1).unwrap();
    tune(&small, Strategy::Anneal, &tcfg).unwrap().write_csv(&r2).unwrap();
    let same_report = report_without_timings(&r1) == report_without_timings(&r2);

    let path = tmp.path().join("model.json");
    save_model(&a, &path).unwrap();
    let back = load_model(&path).unwrap();
    let probe = &scenario_dirs[1].1;
    let before = a.predict(probe).unwrap();
    let after = back.predict(probe).unwrap();
    let zero_ulp = before.iter().zip(&after).all(|(x, y)| x.to_bits() == y.to_bits());
    let checks = [
        ("same seed -> byte-identical rasters, sites, traces and features", same_scenario),
        ("same seed -> byte-identical model JSON", same_model),
        ("same seed -> identical tuning report (timing columns excluded)", same_report),
        ("save/load round trip changes no prediction by 1 ulp", zero_ulp && back == a),
    ];
    verdict(8, "determinism and persistence", &checks, t0.elapsed(), Duration::from_secs(60));
}

#[test]
fn criterion_9_metric_sanity() {
    let _g = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let y: Vec<f64> = (0..500).map(|_| rng.random_range(-120.0..-40.0)).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let perfect = metrics(&y, &y).unwrap();
    let at_mean = metrics(&y, &vec![mean; y.len()]).unwrap();
    let plus_two: Vec<f64> = y.iter().map(|v| v + 2.0).collect();
    let shifted = metrics(&y, &plus_two).unwrap();
    let noisy: Vec<f64> = y.iter().map(|v| v + rng.random_range(-6.0..6.0)).collect();
    let nm = metrics(&y, &noisy).unwrap();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let identity = 1.0 - nm.rmse * nm.rmse * y.len() as f64 / ss_tot;
    let checks = [
        ("R2 = 1 on perfect predictions", perfect.r2 == 1.0 && perfect.rmse == 0.0),
        ("R2 = 0 on mean predictions", at_mean.r2.abs() <= 1e-12),
        ("RMSE = 2 on constant +2 dB residuals", close(shifted.rmse, 2.0, 1e-12)),
        ("R2 = 1 - rmse^2 N / SS_tot to 1e-9", close(nm.r2, identity, 1e-9)),
    ];
    verdict(9, "metric sanity", &checks, t0.elapsed(), Duration::from_secs(1));
}
