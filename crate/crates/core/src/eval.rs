//! Metrics, repeated k-fold cross-validation, hyperparameter search and the
//! sparse-training study.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::gbdt::{fit, fit_baseline, BaselineKind, BaselineModel, GbdtConfig, GbdtError, TreeEnsemble};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] GbdtError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    /// NaN when the targets have zero variance.
    pub r2: f64,
}

impl Metrics {
    pub fn r2_defined(&self) -> bool {
        !self.r2.is_nan()
    }
}

pub fn metrics(y: &[f64], yhat: &[f64]) -> Result<Metrics, EvalError> {
    if y.len() != yhat.len() {
        return Err(EvalError::Schema(format!(
            "{} targets but {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(EvalError::Schema("no targets".into()));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
    Ok(Metrics {
        rmse: (ss_res / n).sqrt(),
        r2: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { f64::NAN },
    })
}

/// Model family scored by cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    Gbdt(GbdtConfig),
    Linear,
    Knn { k: usize },
}

pub enum Fitted {
    Gbdt(TreeEnsemble),
    Baseline(BaselineModel),
}

impl Learner {
    pub fn fit(&self, m: &FeatureMatrix) -> Result<Fitted, EvalError> {
        Ok(match self {
            Self::Gbdt(cfg) => Fitted::Gbdt(fit(m, cfg)?),
            Self::Linear => Fitted::Baseline(fit_baseline(m, BaselineKind::Linear)?),
            Self::Knn { k } => Fitted::Baseline(fit_baseline(m, BaselineKind::Knn { k: *k })?),
        })
    }
}

impl Fitted {
    pub fn predict(&self, m: &FeatureMatrix) -> Result<Vec<f64>, EvalError> {
        Ok(match self {
            Self::Gbdt(e) => e.predict(m)?,
            Self::Baseline(b) => b.predict(m)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CvConfig {
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 5,
            repeats: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub repeat: usize,
    pub fold: usize,
    pub metrics: Metrics,
    pub n_train: usize,
    pub n_test: usize,
    pub train_s: f64,
    pub predict_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub mean_r2: f64,
    pub std_r2: f64,
    pub mean_train_s: f64,
    pub mean_predict_s: f64,
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl CvReport {
    fn from_folds(folds: Vec<FoldReport>, cv: &CvConfig) -> Self {
        let rmse: Vec<f64> = folds.iter().map(|f| f.metrics.rmse).collect();
        let r2: Vec<f64> = folds.iter().map(|f| f.metrics.r2).collect();
        let (mean_rmse, std_rmse) = mean_std(&rmse);
        let (mean_r2, std_r2) = mean_std(&r2);
        let n = folds.len() as f64;
        Self {
            mean_train_s: folds.iter().map(|f| f.train_s).sum::<f64>() / n,
            mean_predict_s: folds.iter().map(|f| f.predict_s).sum::<f64>() / n,
            folds,
            mean_rmse,
            std_rmse,
            mean_r2,
            std_r2,
            k: cv.k,
            repeats: cv.repeats,
            seed: cv.seed,
        }
    }

    /// Equality of everything except wall-clock timings.
    pub fn same_scores(&self, other: &CvReport) -> bool {
        let strip = |r: &CvReport| {
            let mut r = r.clone();
            r.mean_train_s = 0.0;
            r.mean_predict_s = 0.0;
            for f in &mut r.folds {
                f.train_s = 0.0;
                f.predict_s = 0.0;
            }
            r
        };
        let (a, b) = (strip(self), strip(other));
        // NaN-aware comparison through the bit patterns.
        format!("{a:?}") == format!("{b:?}")
    }

    /// One line per fold followed by `mean` and `std` summary lines.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let io = |source| EvalError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "row,repeat,fold,n_train,n_test,rmse,r2,train_s,predict_s").map_err(io)?;
        for r in &self.folds {
            writeln!(
                f,
                "fold,{},{},{},{},{},{},{},{}",
                r.repeat, r.fold, r.n_train, r.n_test, r.metrics.rmse, r.metrics.r2, r.train_s, r.predict_s
            )
            .map_err(io)?;
        }
        writeln!(
            f,
            "mean,,,,,{},{},{},{}",
            self.mean_rmse, self.mean_r2, self.mean_train_s, self.mean_predict_s
        )
        .map_err(io)?;
        writeln!(f, "std,,,,,{},{},,", self.std_rmse, self.std_r2).map_err(io)?;
        f.flush().map_err(io)
    }
}

/// Fold membership for one repeat: a seeded shuffle cut into `k`
/// contiguous chunks whose sizes differ by at most one.
pub fn fold_indices(n: usize, k: usize, seed: u64, repeat: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    (0..k).map(|f| perm[f * n / k..(f + 1) * n / k].to_vec()).collect()
}

fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in held_out {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

fn check_cv(m: &FeatureMatrix, cv: &CvConfig) -> Result<(), EvalError> {
    if cv.k < 2 {
        return Err(EvalError::Config("k must be at least 2".into()));
    }
    if cv.repeats < 1 {
        return Err(EvalError::Config("repeats must be at least 1".into()));
    }
    if m.n_rows() < cv.k {
        return Err(EvalError::Data(format!(
            "{} rows cannot fill {} folds",
            m.n_rows(),
            cv.k
        )));
    }
    Ok(())
}

fn run_cv(
    m: &FeatureMatrix,
    learner: &Learner,
    cv: &CvConfig,
    mut train_subset: impl FnMut(usize, usize, Vec<usize>) -> Vec<usize>,
) -> Result<CvReport, EvalError> {
    check_cv(m, cv)?;
    let mut folds = Vec::with_capacity(cv.k * cv.repeats);
    for repeat in 0..cv.repeats {
        for (fold, test_idx) in fold_indices(m.n_rows(), cv.k, cv.seed, repeat).into_iter().enumerate() {
            let train_idx = train_subset(repeat, fold, complement(m.n_rows(), &test_idx));
            let train = m.select_rows(&train_idx);
            let test = m.select_rows(&test_idx);
            let t0 = Instant::now();
            let model = learner.fit(&train)?;
            let train_s = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let pred = model.predict(&test)?;
            let predict_s = t1.elapsed().as_secs_f64();
            folds.push(FoldReport {
                repeat,
                fold,
                metrics: metrics(&test.targets, &pred)?,
                n_train: train.n_rows(),
                n_test: test.n_rows(),
                train_s,
                predict_s,
            });
        }
    }
    Ok(CvReport::from_folds(folds, cv))
}

pub fn repeated_kfold_cv(m: &FeatureMatrix, learner: &Learner, cv: &CvConfig) -> Result<CvReport, EvalError> {
    run_cv(m, learner, cv, |_, _, idx| idx)
}

/// Seeded uniform subsample (ascending) of `floor(fraction * n)` of `n`
/// positions; the whole range when `fraction == 1`.
pub fn subsample_indices(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let take = (fraction * n as f64).floor() as usize;
    if take >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, take).into_vec();
    idx.sort_unstable();
    idx
}

/// Cross-validation where each fold trains on a seeded `fraction` of its
/// training pool and is scored on the complete held-out fold.
pub fn sparsity_eval(
    m: &FeatureMatrix,
    fraction: f64,
    learner: &Learner,
    cv: &CvConfig,
) -> Result<CvReport, EvalError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvalError::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    check_cv(m, cv)?;
    let smallest_pool = m.n_rows() - m.n_rows().div_ceil(cv.k);
    if ((fraction * smallest_pool as f64).floor() as usize) < 10 {
        return Err(EvalError::Data(format!(
            "a {fraction} subsample of {smallest_pool} training rows keeps fewer than 10"
        )));
    }
    run_cv(m, learner, cv, |repeat, fold, pool| {
        let seed = cv.seed ^ ((repeat as u64) << 32 | fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        subsample_indices(pool.len(), fraction, seed)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub n_estimators: (usize, usize),
    pub max_depth: (usize, usize),
    pub learning_rate: (f64, f64),
    /// Lattice points per dimension for grid search.
    pub grid_points: usize,
    /// Lattice points per dimension for annealing moves.
    pub anneal_points: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_estimators: (500, 2500),
            max_depth: (5, 20),
            learning_rate: (0.001, 0.1),
            grid_points: 3,
            anneal_points: 5,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = self.n_estimators.0 >= 1
            && self.n_estimators.0 <= self.n_estimators.1
            && self.max_depth.0 >= 1
            && self.max_depth.0 <= self.max_depth.1
            && self.learning_rate.0 > 0.0
            && self.learning_rate.0 <= self.learning_rate.1
            && self.learning_rate.1 <= 1.0
            && self.grid_points >= 1
            && self.anneal_points >= 2;
        if ok {
            Ok(())
        } else {
            Err(EvalError::Config(format!("invalid search space {self:?}")))
        }
    }

    fn int_lattice(lo: usize, hi: usize, points: usize) -> Vec<usize> {
        if points == 1 {
            return vec![(lo + hi) / 2];
        }
        let mut v: Vec<usize> = (0..points)
            .map(|k| (lo as f64 + (hi - lo) as f64 * k as f64 / (points - 1) as f64).round() as usize)
            .collect();
        v.dedup();
        v
    }

    fn lr_lattice(&self, points: usize) -> Vec<f64> {
        let (lo, hi) = (self.learning_rate.0.ln(), self.learning_rate.1.ln());
        if points == 1 {
            return vec![((lo + hi) / 2.0).exp()];
        }
        (0..points)
            .map(|k| match k {
                0 => self.learning_rate.0,
                k if k == points - 1 => self.learning_rate.1,
                k => (lo + (hi - lo) * k as f64 / (points - 1) as f64).exp(),
            })
            .collect()
    }

    /// Per-dimension lattices `(n_estimators, max_depth, learning_rate)`.
    pub fn lattice(&self, points: usize) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        (
            Self::int_lattice(self.n_estimators.0, self.n_estimators.1, points),
            Self::int_lattice(self.max_depth.0, self.max_depth.1, points),
            self.lr_lattice(points),
        )
    }

    pub fn contains(&self, c: &GbdtConfig) -> bool {
        (self.n_estimators.0..=self.n_estimators.1).contains(&c.n_estimators)
            && (self.max_depth.0..=self.max_depth.1).contains(&c.max_depth)
            && c.learning_rate >= self.learning_rate.0
            && c.learning_rate <= self.learning_rate.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Grid,
    Random,
    Tpe,
    Anneal,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Self::Grid, Self::Random, Self::Tpe, Self::Anneal];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Grid => "grid",
            Self::Random => "random",
            Self::Tpe => "tpe",
            Self::Anneal => "anneal",
        }
    }
}

impl FromStr for Strategy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| EvalError::Config(format!("unknown strategy `{s}` (grid, random, tpe, anneal)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpeSettings {
    pub startup: usize,
    pub gamma: f64,
    pub candidates: usize,
}

impl Default for TpeSettings {
    fn default() -> Self {
        Self {
            startup: 5,
            gamma: 0.25,
            candidates: 24,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSettings {
    pub t0: f64,
    pub cooling: f64,
}

impl Default for AnnealSettings {
    fn default() -> Self {
        Self { t0: 1.0, cooling: 0.85 }
    }
}

/// Everything `tune` needs besides the data and the strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub space: SearchSpace,
    pub budget: usize,
    pub seed: u64,
    /// Settings not searched over (leaf size, bins, GOSS) are taken from here.
    pub base: GbdtConfig,
    pub cv: CvConfig,
    pub tpe: TpeSettings,
    pub anneal: AnnealSettings,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            space: SearchSpace::default(),
            budget: 10,
            seed: 0,
            base: GbdtConfig::default(),
            cv: CvConfig::default(),
            tpe: TpeSettings::default(),
            anneal: AnnealSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub config: GbdtConfig,
    pub report: CvReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunerResult {
    pub strategy: Strategy,
    pub trials: Vec<Trial>,
    pub best_index: usize,
    pub best_config: GbdtConfig,
    pub best_rmse: f64,
    pub evaluations: usize,
}

impl TunerResult {
    /// Best mean RMSE after each trial.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trials
            .iter()
            .map(|t| {
                best = best.min(t.report.mean_rmse);
                best
            })
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let io = |source| EvalError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(
            f,
            "trial,strategy,n_estimators,max_depth,learning_rate,mean_rmse,std_rmse,mean_r2,train_s,predict_s"
        )
        .map_err(io)?;
        for (i, t) in self.trials.iter().enumerate() {
            writeln!(
                f,
                "{i},{},{},{},{},{},{},{},{},{}",
                self.strategy.name(),
                t.config.n_estimators,
                t.config.max_depth,
                t.config.learning_rate,
                t.report.mean_rmse,
                t.report.std_rmse,
                t.report.mean_r2,
                t.report.mean_train_s,
                t.report.mean_predict_s
            )
            .map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

type Point = (usize, usize, f64);

struct Evaluator<'a> {
    m: &'a FeatureMatrix,
    cfg: &'a TuneConfig,
    trials: Vec<Trial>,
    seen: HashMap<(usize, usize, u64), f64>,
}

impl Evaluator<'_> {
    fn config(&self, p: Point) -> GbdtConfig {
        GbdtConfig {
            n_estimators: p.0,
            max_depth: p.1,
            learning_rate: p.2,
            ..self.cfg.base.clone()
        }
    }

    fn done(&self) -> bool {
        self.trials.len() >= self.cfg.budget
    }

    fn seen(&self, p: Point) -> Option<f64> {
        self.seen.get(&(p.0, p.1, p.2.to_bits())).copied()
    }

    fn eval(&mut self, p: Point) -> Result<f64, EvalError> {
        if let Some(r) = self.seen(p) {
            return Ok(r);
        }
        let config = self.config(p);
        let report = repeated_kfold_cv(self.m, &Learner::Gbdt(config.clone()), &self.cfg.cv)?;
        let r = report.mean_rmse;
        self.seen.insert((p.0, p.1, p.2.to_bits()), r);
        self.trials.push(Trial { config, report });
        Ok(r)
    }
}

fn clip_int(x: f64, lo: usize, hi: usize) -> usize {
    (x.round().max(lo as f64).min(hi as f64)) as usize
}

fn random_point(space: &SearchSpace, rng: &mut ChaCha8Rng) -> Point {
    let (llo, lhi) = (space.learning_rate.0.ln(), space.learning_rate.1.ln());
    (
        rng.random_range(space.n_estimators.0..=space.n_estimators.1),
        rng.random_range(space.max_depth.0..=space.max_depth.1),
        rng.random_range(llo..=lhi).exp().clamp(space.learning_rate.0, space.learning_rate.1),
    )
}

/// One-dimensional Gaussian Parzen estimator with a Silverman bandwidth
/// and a broad prior component centred on the range.
struct Parzen {
    centres: Vec<f64>,
    bandwidth: f64,
    lo: f64,
    hi: f64,
}

impl Parzen {
    fn new(obs: &[f64], lo: f64, hi: f64) -> Self {
        let width = (hi - lo).max(1e-12);
        let (_, sd) = mean_std(obs);
        let silverman = 1.06 * sd * (obs.len() as f64).powf(-0.2);
        let bandwidth = if silverman > 0.0 { silverman } else { width / 10.0 }.clamp(width / 100.0, width);
        Self {
            centres: obs.to_vec(),
            bandwidth,
            lo,
            hi,
        }
    }

    fn log_density(&self, x: f64) -> f64 {
        let gauss = |c: f64, s: f64| (-0.5 * ((x - c) / s).powi(2)).exp() / s;
        let prior = gauss((self.lo + self.hi) / 2.0, self.hi - self.lo);
        let sum: f64 = self.centres.iter().map(|&c| gauss(c, self.bandwidth)).sum::<f64>() + prior;
        (sum / (self.centres.len() + 1) as f64).max(1e-300).ln()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let c = self.centres[rng.random_range(0..self.centres.len())];
        let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
        (c + self.bandwidth * z).clamp(self.lo, self.hi)
    }
}

fn tpe_propose(space: &SearchSpace, trials: &[(Point, f64)], s: &TpeSettings, rng: &mut ChaCha8Rng, seen: &dyn Fn(Point) -> bool) -> Point {
    let mut order: Vec<usize> = (0..trials.len()).collect();
    order.sort_by(|&a, &b| trials[a].1.total_cmp(&trials[b].1).then(a.cmp(&b)));
    let n_good = ((s.gamma * trials.len() as f64).ceil() as usize).clamp(1, trials.len() - 1);
    let coords = |idx: &[usize], d: usize| -> Vec<f64> {
        idx.iter()
            .map(|&i| {
                let p = trials[i].0;
                [p.0 as f64, p.1 as f64, p.2.ln()][d]
            })
            .collect()
    };
    let bounds = [
        (space.n_estimators.0 as f64, space.n_estimators.1 as f64),
        (space.max_depth.0 as f64, space.max_depth.1 as f64),
        (space.learning_rate.0.ln(), space.learning_rate.1.ln()),
    ];
    let (good_idx, bad_idx) = order.split_at(n_good);
    let good: Vec<Parzen> = (0..3).map(|d| Parzen::new(&coords(good_idx, d), bounds[d].0, bounds[d].1)).collect();
    let bad: Vec<Parzen> = (0..3).map(|d| Parzen::new(&coords(bad_idx, d), bounds[d].0, bounds[d].1)).collect();
    let mut best: Option<(bool, f64, Point)> = None;
    for _ in 0..s.candidates {
        let x: Vec<f64> = good.iter().map(|g| g.sample(rng)).collect();
        let p = (
            clip_int(x[0], space.n_estimators.0, space.n_estimators.1),
            clip_int(x[1], space.max_depth.0, space.max_depth.1),
            x[2].exp().clamp(space.learning_rate.0, space.learning_rate.1),
        );
        let xs = [p.0 as f64, p.1 as f64, p.2.ln()];
        let score: f64 = (0..3).map(|d| good[d].log_density(xs[d]) - bad[d].log_density(xs[d])).sum();
        let fresh = !seen(p);
        if best.is_none_or(|(bf, bs, _)| (fresh, score) > (bf, bs)) {
            best = Some((fresh, score, p));
        }
    }
    best.expect("at least one candidate").2
}

/// Searches the space with `strategy`, scoring each configuration by
/// repeated k-fold CV. Configurations are never scored twice.
pub fn tune(m: &FeatureMatrix, strategy: Strategy, cfg: &TuneConfig) -> Result<TunerResult, EvalError> {
    if cfg.budget < 1 {
        return Err(EvalError::Config("budget must be at least 1".into()));
    }
    cfg.space.validate()?;
    cfg.base.validate()?;
    let space = &cfg.space;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ev = Evaluator {
        m,
        cfg,
        trials: Vec::new(),
        seen: HashMap::new(),
    };
    // Bounded so a tiny space cannot loop forever once every point is seen.
    let max_steps = 50 * cfg.budget;
    match strategy {
        Strategy::Grid => {
            let (ns, ds, lrs) = space.lattice(space.grid_points);
            'outer: for &n in &ns {
                for &d in &ds {
                    for &lr in &lrs {
                        if ev.done() {
                            break 'outer;
                        }
                        ev.eval((n, d, lr))?;
                    }
                }
            }
        }
        Strategy::Random => {
            for _ in 0..max_steps {
                if ev.done() {
                    break;
                }
                ev.eval(random_point(space, &mut rng))?;
            }
        }
        Strategy::Tpe => {
            for _ in 0..max_steps {
                if ev.done() {
                    break;
                }
                let p = if ev.trials.len() < cfg.tpe.startup.max(2) {
                    random_point(space, &mut rng)
                } else {
                    let hist: Vec<(Point, f64)> = ev
                        .trials
                        .iter()
                        .map(|t| {
                            ((t.config.n_estimators, t.config.max_depth, t.config.learning_rate), t.report.mean_rmse)
                        })
                        .collect();
                    let seen = |p: Point| ev.seen(p).is_some();
                    tpe_propose(space, &hist, &cfg.tpe, &mut rng, &seen)
                };
                ev.eval(p)?;
            }
        }
        Strategy::Anneal => {
            let (ns, ds, lrs) = space.lattice(space.anneal_points);
            let dims = [ns.len(), ds.len(), lrs.len()];
            let at = |ix: [usize; 3]| (ns[ix[0]], ds[ix[1]], lrs[ix[2]]);
            let mut cur = dims.map(|l| (l - 1) / 2);
            let mut cur_rmse = ev.eval(at(cur))?;
            let mut temp = cfg.anneal.t0;
            for _ in 0..max_steps {
                if ev.done() {
                    break;
                }
                let movable: Vec<usize> = (0..3).filter(|&d| dims[d] > 1).collect();
                if movable.is_empty() {
                    break;
                }
                let d = movable[rng.random_range(0..movable.len())];
                let up = rng.random_bool(0.5);
                let mut next = cur;
                next[d] = match (up, cur[d]) {
                    (true, i) if i + 1 < dims[d] => i + 1,
                    (false, 0) => 1,
                    (false, i) => i - 1,
                    (true, i) => i - 1,
                };
                let r = ev.eval(at(next))?;
                let delta = r - cur_rmse;
                let u: f64 = rng.random();
                if delta <= 0.0 || u < (-delta / temp).exp() {
                    cur = next;
                    cur_rmse = r;
                }
                temp *= cfg.anneal.cooling;
            }
        }
    }
    let best_index = (0..ev.trials.len())
        .min_by(|&a, &b| {
            ev.trials[a]
                .report
                .mean_rmse
                .total_cmp(&ev.trials[b].report.mean_rmse)
                .then(a.cmp(&b))
        })
        .expect("budget >= 1 yields a trial");
    let trials = ev.trials;
    let best_rmse = trials[best_index].report.mean_rmse;
    debug_assert!(trials.iter().all(|t| t.report.mean_rmse >= best_rmse));
    Ok(TunerResult {
        strategy,
        best_config: trials[best_index].config.clone(),
        best_rmse,
        evaluations: trials.len(),
        best_index,
        trials,
    })
}
