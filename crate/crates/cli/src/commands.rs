use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use pathloss::empirical::{
    empirical_predict, points_from_keys, score_baselines, standard_baselines, EmpiricalModel, PredictionPoint,
};
use pathloss::eval::{
    fold_indices, metrics, repeated_kfold_cv, subsample_indices, tune as run_tune, CvConfig, Learner, Strategy,
    TuneConfig,
};
use pathloss::explain::{
    dependence_export, lighter_model_report, shap_summary, tree_shap, write_dependence_csv, write_shap_csv,
    write_summary_csv,
};
use pathloss::features::{assemble_features, build_feature_matrix, FeatureMatrix, FeatureVector};
use pathloss::gbdt::{fit, load_model, save_model, GbdtConfig, GossConfig, TreeEnsemble};
use pathloss::geodata::GeoStack;
use pathloss::scenario::{
    clean_traces, generate_scenario, grid_traces, oracle_rss, parse_sites, parse_traces, write_sites, write_traces,
    Averaging, ScenarioConfig, SiteTopology, DEFAULT_UE_HEIGHT,
};

use crate::manifest::{default_path, RunManifest};
use crate::pgm::render_p2;
use crate::{
    BenchArgs, CompareArgs, EmpiricalArgs, ExplainArgs, FeaturesArgs, GbdtArgs, GenArgs, GeoArgs, PredictArgs,
    TrainArgs, TuneArgs, UsageError,
};

const SCENARIO_FILE: &str = "scenario.json";
const DEFAULT_CLUTTERS: usize = 15;

fn finish(man: &RunManifest, explicit: Option<PathBuf>, primary: &Path) -> Result<()> {
    man.write(&explicit.unwrap_or_else(|| default_path(primary)))
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn scenario_json(geo_dir: &Path) -> Result<Option<serde_json::Value>> {
    let path = geo_dir.join(SCENARIO_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

fn load_geo(args: &GeoArgs, man: &mut RunManifest) -> Result<GeoStack> {
    let clutters = match args.clutters {
        Some(c) => c,
        None => scenario_json(&args.geo)?
            .and_then(|v| v["config"]["clutter_count"].as_u64())
            .map_or(DEFAULT_CLUTTERS, |c| c as usize),
    };
    man.set("clutter_count", clutters);
    man.input(&args.geo);
    GeoStack::load_dir(&args.geo, clutters).with_context(|| format!("loading rasters from {}", args.geo.display()))
}

fn load_sites(path: &Path, man: &mut RunManifest) -> Result<Vec<SiteTopology>> {
    man.input(path);
    Ok(parse_sites(path)?)
}

fn load_features(path: &Path, man: &mut RunManifest) -> Result<FeatureMatrix> {
    man.input(path);
    let m = FeatureMatrix::read_csv(path)?;
    man.set("rows", m.n_rows());
    man.set("columns", m.n_cols());
    Ok(m)
}

fn parse_goss(spec: &str) -> Result<GossConfig> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let [a, b] = parts[..] else {
        return Err(usage(format!("--goss expects `a,b`, got `{spec}`")));
    };
    let num = |s: &str| s.parse::<f64>().map_err(|_| usage(format!("--goss: `{s}` is not a number")));
    Ok(GossConfig { a: num(a)?, b: num(b)? })
}

fn gbdt_from_args(a: &GbdtArgs, seed: u64) -> Result<GbdtConfig> {
    Ok(GbdtConfig {
        n_estimators: a.n_estimators,
        max_depth: a.max_depth,
        learning_rate: a.learning_rate,
        min_samples_leaf: a.min_samples_leaf,
        n_bins: a.n_bins,
        goss: a.goss.as_deref().map(parse_goss).transpose()?,
        seed,
    })
}

/// GBDT configuration from `key = value` lines (`#` starts a comment).
pub fn parse_gbdt_config(text: &str) -> Result<GbdtConfig> {
    let mut cfg = GbdtConfig::default();
    let mut goss = GossConfig::default();
    let mut use_goss = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("config line {}: expected `key = value`", i + 1);
        };
        let (k, v) = (k.trim(), v.trim());
        let bad = || anyhow::anyhow!("config line {}: invalid value `{v}` for `{k}`", i + 1);
        match k {
            "n_estimators" => cfg.n_estimators = v.parse().map_err(|_| bad())?,
            "max_depth" => cfg.max_depth = v.parse().map_err(|_| bad())?,
            "learning_rate" => cfg.learning_rate = v.parse().map_err(|_| bad())?,
            "min_samples_leaf" => cfg.min_samples_leaf = v.parse().map_err(|_| bad())?,
            "n_bins" => cfg.n_bins = v.parse().map_err(|_| bad())?,
            "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
            "goss_a" => {
                goss.a = v.parse().map_err(|_| bad())?;
                use_goss = true;
            }
            "goss_b" => {
                goss.b = v.parse().map_err(|_| bad())?;
                use_goss = true;
            }
            _ => bail!("config line {}: unknown key `{k}`", i + 1),
        }
    }
    if use_goss {
        cfg.goss = Some(goss);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_gbdt_config(path: Option<&Path>, man: &mut RunManifest) -> Result<GbdtConfig> {
    match path {
        Some(p) => {
            man.input(p);
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_gbdt_config(&text).with_context(|| format!("in {}", p.display()))
        }
        None => Ok(GbdtConfig::default()),
    }
}

fn record_gbdt(man: &mut RunManifest, cfg: &GbdtConfig) {
    man.set("n_estimators", cfg.n_estimators);
    man.set("max_depth", cfg.max_depth);
    man.set("learning_rate", cfg.learning_rate);
    man.set("min_samples_leaf", cfg.min_samples_leaf);
    man.set("n_bins", cfg.n_bins);
    match &cfg.goss {
        Some(g) => man.set("goss", format!("a={} b={}", g.a, g.b)),
        None => man.set("goss", "off"),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn gen(a: GenArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut man = RunManifest::new("gen");
    man.seed = Some(a.seed);
    let cfg = ScenarioConfig {
        area_m: a.area,
        cellsize_m: a.cellsize,
        sites: a.sites,
        ue_density_per_km2: a.ue_density,
        ..ScenarioConfig::with_clutter_count(a.clutters)
    };
    for (k, v) in [
        ("area_m", a.area.to_string()),
        ("cellsize_m", a.cellsize.to_string()),
        ("sites", a.sites.to_string()),
        ("ue_density_per_km2", a.ue_density.to_string()),
        ("clutter_count", a.clutters.to_string()),
    ] {
        man.set(k, v);
    }
    let sc = man.time("generate", || generate_scenario(&cfg, a.seed))?;
    create_dir(&a.out)?;
    man.time("write", || -> Result<()> {
        sc.geo.write_dir(&a.out)?;
        write_sites(&sc.sites, a.out.join("sites.csv"))?;
        write_traces(&sc.traces, a.out.join("traces.csv"))?;
        let resolved = ScenarioConfig {
            oracle: sc.oracle.clone(),
            ..cfg.clone()
        };
        let doc = serde_json::json!({ "seed": a.seed, "config": resolved });
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        std::fs::write(a.out.join(SCENARIO_FILE), text).context("writing scenario.json")?;
        Ok(())
    })?;
    for f in ["dtm.asc", "dhm.asc", "dlu.asc", "sites.csv", "traces.csv", SCENARIO_FILE] {
        man.output(a.out.join(f));
    }
    println!(
        "generated {} sites, {} traces into {}",
        sc.sites.len(),
        sc.traces.len(),
        a.out.display()
    );
    finish(&man, manifest, &a.out)
}

fn binned_matrix(
    geo: &GeoStack,
    sites: &[SiteTopology],
    traces_path: &Path,
    bin_width: f64,
    averaging: Averaging,
    h_ue: f64,
    man: &mut RunManifest,
) -> Result<FeatureMatrix> {
    man.input(traces_path);
    let traces = parse_traces(traces_path)?;
    let clean = clean_traces(&traces, sites);
    man.set("traces", traces.len());
    man.set("traces_clean", clean.len());
    let binned = grid_traces(&clean, bin_width, averaging);
    Ok(man.time("features", || build_feature_matrix(geo, sites, &binned, h_ue))?)
}

pub fn features(a: FeaturesArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut man = RunManifest::new("features");
    let geo = load_geo(&a.geo, &mut man)?;
    let sites = load_sites(&a.sites, &mut man)?;
    let averaging = if a.linear_average {
        Averaging::Milliwatt
    } else {
        Averaging::Decibel
    };
    man.set("bin_width", a.bin_width);
    man.set("averaging", format!("{averaging:?}"));
    man.set("h_ue", a.h_ue);
    let m = binned_matrix(&geo, &sites, &a.traces, a.bin_width, averaging, a.h_ue, &mut man)?;
    m.write_csv(&a.out)?;
    man.output(&a.out);
    println!("{} rows x {} features -> {}", m.n_rows(), m.n_cols(), a.out.display());
    finish(&man, manifest, &a.out)
}

pub fn train(a: TrainArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut man = RunManifest::new("train");
    man.seed = Some(a.seed);
    let m = load_features(&a.features, &mut man)?;
    let cfg = gbdt_from_args(&a.gbdt, a.seed)?;
    record_gbdt(&mut man, &cfg);
    let model = man.time("fit", || fit(&m, &cfg))?;
    save_model(&model, &a.out_model)?;
    man.output(&a.out_model);
    if let Some(report) = &a.report {
        let cv = CvConfig {
            k: a.folds,
            repeats: a.repeats,
            seed: a.seed,
        };
        man.set("folds", a.folds);
        man.set("repeats", a.repeats);
        let r = man.time("cross_validation", || repeated_kfold_cv(&m, &Learner::Gbdt(cfg.clone()), &cv))?;
        r.write_csv(report)?;
        man.output(report);
        println!(
            "cv rmse {:.3} +- {:.3} dB, r2 {:.4}, mean fit {:.3} s",
            r.mean_rmse, r.std_rmse, r.mean_r2, r.mean_train_s
        );
    }
    println!("{} trees -> {}", model.trees.len(), a.out_model.display());
    finish(&man, manifest, &a.out_model)
}

pub fn tune(a: TuneArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut man = RunManifest::new("tune");
    man.seed = Some(a.seed);
    let full = load_features(&a.features, &mut man)?;
    let strategy: Strategy = a.strategy.parse()?;
    let m = if a.subsample < 1.0 {
        full.select_rows(&subsample_indices(full.n_rows(), a.subsample, a.seed))
    } else {
        full.clone()
    };
    let cfg = TuneConfig {
        budget: a.budget,
        seed: a.seed,
        cv: CvConfig {
            k: a.folds,
            repeats: 1,
            seed: a.seed,
        },
        ..TuneConfig::default()
    };
    man.set("strategy", strategy.name());
    man.set("budget", a.budget);
    man.set("folds", a.folds);
    man.set("subsample", a.subsample);
    man.set("search_space", format!("{:?}", cfg.space));
    let result = man.time("search", || run_tune(&m, strategy, &cfg))?;
    result.write_csv(&a.report)?;
    man.output(&a.report);
    let best = &result.best_config;
    println!(
        "{}: best rmse {:.3} dB after {} evaluations (n_estimators {}, max_depth {}, learning_rate {})",
        strategy.name(),
        result.best_rmse,
        result.evaluations,
        best.n_estimators,
        best.max_depth,
        best.learning_rate
    );
    if let Some(path) = &a.out_model {
        let model = man.time("refit", || fit(&full, best))?;
        save_model(&model, path)?;
        man.output(path);
    }
    finish(&man, manifest, &a.report)
}

fn read_points(path: &Path, default_h_ue: f64) -> Result<Vec<PredictionPoint>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(ix), Some(iy), Some(ic)) = (col("x"), col("y"), col("cell_id")) else {
        bail!("{}: expected columns x, y, cell_id", path.display());
    };
    let ih = col("h_ue");
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("").trim();
            s.parse()
                .with_context(|| format!("{} row {}: `{s}` is not a number", path.display(), line + 1))
        };
        out.push(PredictionPoint {
            x: num(ix)?,
            y: num(iy)?,
            cell_id: rec.get(ic).unwrap_or("").trim().to_string(),
            h_ue: match ih {
                Some(i) => num(i)?,
                None => default_h_ue,
            },
        });
    }
    Ok(out)
}

fn check_schema(model: &TreeEnsemble, clutters: usize) -> Result<()> {
    let expected = FeatureVector::names(clutters);
    if model.feature_names != expected {
        bail!(
            "model has {} features but the rasters imply {} ({} clutter classes)",
            model.feature_names.len(),
            expected.len(),
            clutters
        );
    }
    Ok(())
}

pub fn predict(a: PredictArgs, manifest: Option<PathBuf>) -> Result<()> {
    if a.points.is_none() && !a.grid {
        return Err(usage("predict needs --points <csv> or --grid"));
    }
    if a.out_pgm.is_some() && !a.grid {
        return Err(usage("--out-pgm requires --grid"));
    }
    if !(a.pgm_min < a.pgm_max) {
        return Err(usage("--pgm-min must be below --pgm-max"));
    }
    let mut man = RunManifest::new("predict");
    man.input(&a.model);
    let model = load_model(&a.model)?;
    let geo = load_geo(&a.geo, &mut man)?;
    check_schema(&model, geo.clutter_count)?;
    let sites = load_sites(&a.sites, &mut man)?;
    let by_id: std::collections::HashMap<&str, &SiteTopology> =
        sites.iter().map(|s| (s.cell_id.as_str(), s)).collect();

    let mut out = String::new();
    if let Some(points_path) = &a.points {
        man.input(points_path);
        man.set("mode", "points");
        let points = read_points(points_path, a.h_ue)?;
        let rows = man.time("features", || -> Result<Vec<Vec<f64>>> {
            points
                .iter()
                .map(|p| {
                    let site = by_id
                        .get(p.cell_id.as_str())
                        .with_context(|| format!("unknown cell `{}`", p.cell_id))?;
                    Ok(assemble_features(&geo, site, p.x, p.y, p.h_ue)?.to_row())
                })
                .collect()
        })?;
        let pred = man.time("predict", || model.predict_rows(&rows))?;
        out.push_str("x,y,cell_id,rss_dbm\n");
        for (p, v) in points.iter().zip(&pred) {
            out.push_str(&format!("{},{},{},{v}\n", p.x, p.y, p.cell_id));
        }
        println!("{} point predictions -> {}", points.len(), a.out_csv.display());
    } else {
        let frame = geo.frame();
        let bw = a.bin_width;
        if !(bw > 0.0) {
            return Err(usage("--bin-width must be positive"));
        }
        let nx = (frame.width() / bw).ceil() as usize;
        let ny = (frame.height() / bw).ceil() as usize;
        man.set("mode", "grid");
        man.set("bin_width", bw);
        man.set("lattice", format!("{nx}x{ny}"));
        man.set("h_ue", a.h_ue);
        man.set("pgm_window_dbm", format!("[{}, {}]", a.pgm_min, a.pgm_max));
        // Best server per lattice bin.
        let (best, elapsed) = {
            let t0 = Instant::now();
            let mut best: Vec<(f64, &str)> = vec![(f64::NAN, ""); nx * ny];
            for iy in 0..ny {
                let y = frame.yll + (iy as f64 + 0.5) * bw;
                let mut rows = Vec::new();
                let mut owner = Vec::new();
                for ix in 0..nx {
                    let x = frame.xll + (ix as f64 + 0.5) * bw;
                    if !geo.contains(x, y) {
                        continue;
                    }
                    for s in &sites {
                        // A bin centre on the mast itself has no defined path.
                        if let Ok(f) = assemble_features(&geo, s, x, y, a.h_ue) {
                            rows.push(f.to_row());
                            owner.push((ix, s.cell_id.as_str()));
                        }
                    }
                }
                let pred = model.predict_rows(&rows)?;
                for ((ix, id), v) in owner.into_iter().zip(pred) {
                    let slot = &mut best[iy * nx + ix];
                    if slot.0.is_nan() || v > slot.0 {
                        *slot = (v, id);
                    }
                }
            }
            (best, t0.elapsed().as_secs_f64())
        };
        man.timings.push(("coverage".into(), elapsed));
        out.push_str("ix,iy,x,y,cell_id,rss_dbm\n");
        for iy in 0..ny {
            for ix in 0..nx {
                let (v, id) = best[iy * nx + ix];
                let x = frame.xll + (ix as f64 + 0.5) * bw;
                let y = frame.yll + (iy as f64 + 0.5) * bw;
                let v = if v.is_nan() { String::new() } else { v.to_string() };
                out.push_str(&format!("{ix},{iy},{x},{y},{id},{v}\n"));
            }
        }
        if let Some(pgm_path) = &a.out_pgm {
            // Image rows run north to south.
            let pixels: Vec<f64> = (0..ny).rev().flat_map(|iy| (0..nx).map(move |ix| (iy, ix))).map(|(iy, ix)| best[iy * nx + ix].0).collect();
            std::fs::write(pgm_path, render_p2(nx, ny, &pixels, a.pgm_min, a.pgm_max))
                .with_context(|| format!("writing {}", pgm_path.display()))?;
            man.output(pgm_path);
        }
        println!("{nx}x{ny} coverage lattice -> {}", a.out_csv.display());
    }
    std::fs::write(&a.out_csv, out).with_context(|| format!("writing {}", a.out_csv.display()))?;
    man.output(&a.out_csv);
    finish(&man, manifest, &a.out_csv)
}

pub fn empirical(a: EmpiricalArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut man = RunManifest::new("empirical");
    let text = match &a.params {
        Some(p) => {
            man.input(p);
            Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
        }
        None => None,
    };
    let geo = load_geo(&a.geo, &mut man)?;
    // Without a parameter file, use the same configuration `compare` scores.
    let model = match text {
        Some(t) => EmpiricalModel::from_params(&a.model_name, Some(&t))?,
        None => match standard_baselines(geo.clutter_count)
            .into_iter()
            .find(|m| m.name() == a.model_name)
        {
            Some(m) => m,
            None => EmpiricalModel::from_params(&a.model_name, None)?,
        },
    };
    man.set("model", model.name());
    let sites = load_sites(&a.sites, &mut man)?;
    man.input(&a.points);
    let points = read_points(&a.points, a.h_ue)?;
    let pred = man.time("predict", || empirical_predict(&model, &geo, &sites, &points))?;
    let mut out = String::from("x,y,cell_id,rss_dbm\n");
    for (p, v) in points.iter().zip(&pred) {
        out.push_str(&format!("{},{},{},{v}\n", p.x, p.y, p.cell_id));
    }
    std::fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    man.output(&a.out);
    println!("{} {} predictions -> {}", pred.len(), model.name(), a.out.display());
    finish(&man, manifest, &a.out)
}

/// One line of the comparison table.
struct Row {
    model: String,
    evaluation: &'static str,
    rmse: f64,
    r2: f64,
    offset_db: Option<f64>,
}

pub fn compare(a: CompareArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut man = RunManifest::new("compare");
    man.seed = Some(a.seed);
    let geo = load_geo(&a.geo, &mut man)?;
    let sites = load_sites(&a.sites, &mut man)?;
    man.set("bin_width", a.bin_width);
    let m = binned_matrix(&geo, &sites, &a.traces, a.bin_width, Averaging::Decibel, DEFAULT_UE_HEIGHT, &mut man)?;
    if m.n_rows() < a.folds {
        bail!("only {} binned measurements for {} folds", m.n_rows(), a.folds);
    }
    let mut gbdt = load_gbdt_config(a.config.as_deref(), &mut man)?;
    gbdt.seed = a.seed;
    record_gbdt(&mut man, &gbdt);
    man.set("folds", a.folds);
    let cv = CvConfig {
        k: a.folds,
        repeats: 1,
        seed: a.seed,
    };
    let mut rows = Vec::new();
    for (name, learner) in [
        ("gbdt", Learner::Gbdt(gbdt.clone())),
        ("linear", Learner::Linear),
        ("knn10", Learner::Knn { k: 10 }),
    ] {
        let r = man.time(&format!("cv_{name}"), || repeated_kfold_cv(&m, &learner, &cv))?;
        rows.push(Row {
            model: name.into(),
            evaluation: "cv",
            rmse: r.mean_rmse,
            r2: r.mean_r2,
            offset_db: None,
        });
    }
    let points = points_from_keys(&m.keys, a.bin_width, DEFAULT_UE_HEIGHT);
    let scores = man.time("empirical", || {
        score_baselines(&standard_baselines(geo.clutter_count), &geo, &sites, &points, &m.targets)
    })?;
    for s in scores {
        rows.push(Row {
            model: s.name.into(),
            evaluation: "raw",
            rmse: s.raw.rmse,
            r2: s.raw.r2,
            offset_db: None,
        });
        rows.push(Row {
            model: s.name.into(),
            evaluation: "offset_calibrated",
            rmse: s.calibrated.rmse,
            r2: s.calibrated.r2,
            offset_db: Some(s.offset_db),
        });
    }
    let scenario_path = a.scenario.clone().unwrap_or_else(|| a.geo.geo.join(SCENARIO_FILE));
    if scenario_path.exists() {
        man.input(&scenario_path);
        let text = std::fs::read_to_string(&scenario_path)?;
        let doc: serde_json::Value = serde_json::from_str(&text)?;
        let cfg: ScenarioConfig = serde_json::from_value(doc["config"].clone())
            .with_context(|| format!("parsing {}", scenario_path.display()))?;
        let by_id: std::collections::HashMap<&str, &SiteTopology> =
            sites.iter().map(|s| (s.cell_id.as_str(), s)).collect();
        let mut y = Vec::new();
        let mut yhat = Vec::new();
        for (p, &t) in points.iter().zip(&m.targets) {
            if let Some(site) = by_id.get(p.cell_id.as_str()) {
                if let Ok(v) = oracle_rss(&geo, site, p.x, p.y, p.h_ue, &cfg.oracle) {
                    y.push(t);
                    yhat.push(v);
                }
            }
        }
        let mt = metrics(&y, &yhat)?;
        rows.push(Row {
            model: "oracle".into(),
            evaluation: "ground_truth",
            rmse: mt.rmse,
            r2: mt.r2,
            offset_db: None,
        });
    }

    let mut f = std::io::BufWriter::new(
        std::fs::File::create(&a.report).with_context(|| format!("creating {}", a.report.display()))?,
    );
    writeln!(f, "model,evaluation,rmse_db,r2,offset_db,n")?;
    println!("{:<10} {:<18} {:>10} {:>8}", "model", "evaluation", "rmse_db", "r2");
    for r in &rows {
        let off = r.offset_db.map(|o| o.to_string()).unwrap_or_default();
        writeln!(f, "{},{},{},{},{off},{}", r.model, r.evaluation, r.rmse, r.r2, m.n_rows())?;
        println!("{:<10} {:<18} {:>10.3} {:>8.4}", r.model, r.evaluation, r.rmse, r.r2);
    }
    f.flush()?;
    man.output(&a.report);
    finish(&man, manifest, &a.report)
}

pub fn explain(a: ExplainArgs, manifest: Option<PathBuf>) -> Result<()> {
    if a.top_k == 0 {
        return Err(usage("--top-k must be at least 1"));
    }
    let mut man = RunManifest::new("explain");
    man.seed = Some(a.seed);
    man.input(&a.model);
    let model = load_model(&a.model)?;
    let m = load_features(&a.features, &mut man)?;
    if m.names != model.feature_names {
        bail!("feature columns do not match the model's feature names");
    }
    man.set("top_k", a.top_k);
    man.set("max_rows", a.max_rows);
    let sample = if m.n_rows() > a.max_rows {
        m.select_rows(&subsample_indices(m.n_rows(), a.max_rows as f64 / m.n_rows() as f64, a.seed))
    } else {
        m.clone()
    };
    man.set("explained_rows", sample.n_rows());
    create_dir(&a.out_dir)?;
    let shap = man.time("tree_shap", || tree_shap(&model, &sample))?;
    let summary = shap_summary(&shap);
    let shap_path = a.out_dir.join("shap.csv");
    write_shap_csv(&shap, &sample, &shap_path)?;
    man.output(&shap_path);
    let summary_path = a.out_dir.join("shap_summary.csv");
    write_summary_csv(&summary, &summary_path)?;
    man.output(&summary_path);
    let top = summary.top(a.top_k.min(summary.names.len()));
    if let (Some(feature), Some(partner)) = (&a.dependence, &a.interaction) {
        man.set("dependence", format!("{feature} by {partner}"));
        let dep = dependence_export(&shap, &sample, feature, partner)?;
        let dep_path = a.out_dir.join(format!("dependence_{feature}.csv"));
        write_dependence_csv(&dep, &dep_path)?;
        man.output(&dep_path);
    }
    println!("top {} features by mean |SHAP|:", top.len());
    for name in &top {
        let j = summary.names.iter().position(|n| n == name).unwrap_or(0);
        println!("  {name:<16} {:.4}", summary.mean_abs[j]);
    }
    if !a.no_lighter {
        let cv = CvConfig {
            k: a.folds,
            repeats: 1,
            seed: a.seed,
        };
        man.set("folds", a.folds);
        let r = man.time("lighter_model", || lighter_model_report(&m, &model.config, a.top_k, &cv, a.seed))?;
        let path = a.out_dir.join("lighter_model.csv");
        r.write_csv(&path)?;
        man.output(&path);
        println!(
            "top-{} model: rmse {:+.2}%, training time {:+.1}%, prediction time {:+.1}%",
            a.top_k,
            100.0 * r.delta_rmse,
            100.0 * r.delta_train_s,
            100.0 * r.delta_predict_s
        );
    }
    finish(&man, manifest, &a.out_dir)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn bench(a: BenchArgs, manifest: Option<PathBuf>) -> Result<()> {
    if a.repeats == 0 {
        return Err(usage("--repeats must be at least 1"));
    }
    let mut man = RunManifest::new("bench");
    man.seed = Some(a.seed);
    let m = load_features(&a.features, &mut man)?;
    let mut cfg = load_gbdt_config(a.config.as_deref(), &mut man)?;
    cfg.seed = a.seed;
    record_gbdt(&mut man, &cfg);
    man.set("repeats", a.repeats);
    if m.n_rows() < 5 {
        bail!("bench needs at least 5 rows, got {}", m.n_rows());
    }
    // Hold out one fifth of the rows.
    let folds = fold_indices(m.n_rows(), 5, a.seed, 0);
    let test_idx = folds[0].clone();
    let train_idx: Vec<usize> = folds[1..].concat();
    let train = m.select_rows(&train_idx);
    let test = m.select_rows(&test_idx);
    let goss_cfg = GbdtConfig {
        goss: Some(cfg.goss.unwrap_or_default()),
        ..cfg.clone()
    };
    let learners = [
        ("gbdt", Learner::Gbdt(cfg.clone())),
        ("gbdt_goss", Learner::Gbdt(goss_cfg)),
        ("linear", Learner::Linear),
        ("knn10", Learner::Knn { k: 10 }),
    ];
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(&a.report).with_context(|| format!("creating {}", a.report.display()))?,
    );
    writeln!(f, "learner,n_features,n_train,n_test,fit_s,predict_s,predict_us_per_row,holdout_rmse,holdout_r2")?;
    println!(
        "{:<10} {:>9} {:>10} {:>12} {:>12}",
        "learner", "fit_s", "predict_s", "us_per_row", "rmse_db"
    );
    for (name, learner) in learners {
        let mut fit_s = Vec::new();
        let mut pred_s = Vec::new();
        let mut last = None;
        for _ in 0..a.repeats {
            let t0 = Instant::now();
            let fitted = learner.fit(&train)?;
            fit_s.push(t0.elapsed().as_secs_f64());
            let t1 = Instant::now();
            let yhat = fitted.predict(&test)?;
            pred_s.push(t1.elapsed().as_secs_f64());
            last = Some(yhat);
        }
        let yhat = last.expect("at least one repetition");
        let mt = metrics(&test.targets, &yhat)?;
        let (fs, ps) = (median(fit_s), median(pred_s));
        let per_row = 1e6 * ps / test.n_rows() as f64;
        man.timings.push((format!("{name}_fit"), fs));
        man.timings.push((format!("{name}_predict"), ps));
        writeln!(
            f,
            "{name},{},{},{},{fs},{ps},{per_row},{},{}",
            m.n_cols(),
            train.n_rows(),
            test.n_rows(),
            mt.rmse,
            mt.r2
        )?;
        println!("{name:<10} {fs:>9.4} {ps:>10.5} {per_row:>12.3} {:>12.3}", mt.rmse);
    }
    f.flush()?;
    man.output(&a.report);
    finish(&man, manifest, &a.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parses_and_rejects_unknown_keys() {
        let cfg = parse_gbdt_config("# tuned\nn_estimators = 50\nmax_depth=4\nlearning_rate = 0.05 # lr\ngoss_a = 0.3\n")
            .unwrap();
        assert_eq!(cfg.n_estimators, 50);
        assert_eq!(cfg.max_depth, 4);
        assert_eq!(cfg.learning_rate, 0.05);
        assert_eq!(cfg.goss, Some(GossConfig { a: 0.3, b: 0.1 }));
        assert!(parse_gbdt_config("depth = 3").is_err());
        assert!(parse_gbdt_config("max_depth = three").is_err());
        assert!(parse_gbdt_config("learning_rate = 0").is_err());
    }

    #[test]
    fn goss_spec() {
        assert_eq!(parse_goss("0.2,0.1").unwrap(), GossConfig { a: 0.2, b: 0.1 });
        assert!(parse_goss("0.2").is_err());
        assert!(parse_goss("x,0.1").is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
