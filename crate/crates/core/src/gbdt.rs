//! Histogram gradient-boosted regression trees with squared loss, plus
//! linear and k-nearest-neighbour baselines.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;

pub const MODEL_FORMAT: &str = "pathloss-gbdt";
pub const MODEL_VERSION: u32 = 1;
pub const MIN_SPLIT_GAIN: f64 = 1e-12;
pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("data error: {0}")]
    Data(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model format error: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GossConfig {
    /// Fraction of rows kept by largest absolute residual.
    pub a: f64,
    /// Fraction of the remaining rows drawn at random.
    pub b: f64,
}

impl Default for GossConfig {
    fn default() -> Self {
        Self { a: 0.2, b: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub n_bins: usize,
    pub goss: Option<GossConfig>,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_estimators: 500,
            max_depth: 8,
            learning_rate: 0.1,
            min_samples_leaf: 20,
            n_bins: 255,
            goss: None,
            seed: 0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: &str| Err(GbdtError::Config(m.to_string()));
        if self.n_estimators < 1 {
            return bad("n_estimators must be at least 1");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be at least 1");
        }
        if !(2..=256).contains(&self.n_bins) {
            return bad("n_bins must lie in [2, 256]");
        }
        if let Some(g) = self.goss {
            if !(g.a >= 0.0 && g.b >= 0.0 && g.a + g.b <= 1.0 && g.a + g.b > 0.0) {
                return bad("GOSS fractions need a, b >= 0 and 0 < a + b <= 1");
            }
        }
        Ok(())
    }
}

/// One regression tree as flat node arrays. Leaves have `feature == -1`
/// and children `-1`. A row goes left when `x[feature] < threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<i32>,
    pub right: Vec<i32>,
    /// Training rows reaching each node. Empty when a model was stored
    /// without covers.
    #[serde(default)]
    pub cover: Vec<f64>,
    pub value: Vec<f64>,
}

impl Tree {
    pub fn leaf(value: f64, cover: f64) -> Self {
        Self {
            feature: vec![-1],
            threshold: vec![0.0],
            left: vec![-1],
            right: vec![-1],
            cover: vec![cover],
            value: vec![value],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] < 0
    }

    pub fn has_covers(&self) -> bool {
        self.cover.len() == self.n_nodes()
    }

    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut n = 0;
        while self.feature[n] >= 0 {
            n = if row[self.feature[n] as usize] < self.threshold[n] {
                self.left[n] as usize
            } else {
                self.right[n] as usize
            };
        }
        n
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.value[self.leaf_index(row)]
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, n: usize) -> usize {
            if t.is_leaf(n) {
                0
            } else {
                1 + go(t, t.left[n] as usize).max(go(t, t.right[n] as usize))
            }
        }
        go(self, 0)
    }

    fn check(&self, n_features: usize) -> Result<(), String> {
        let n = self.n_nodes();
        if n == 0 {
            return Err("tree without nodes".into());
        }
        if [self.threshold.len(), self.left.len(), self.right.len(), self.value.len()]
            .iter()
            .any(|&l| l != n)
            || !(self.cover.is_empty() || self.cover.len() == n)
        {
            return Err("node arrays differ in length".into());
        }
        for i in 0..n {
            if self.feature[i] < 0 {
                if !self.value[i].is_finite() {
                    return Err(format!("leaf {i} has a non-finite value"));
                }
                continue;
            }
            if self.feature[i] as usize >= n_features {
                return Err(format!("node {i} splits on unknown feature {}", self.feature[i]));
            }
            for c in [self.left[i], self.right[i]] {
                if c <= i as i32 || c as usize >= n {
                    return Err(format!("node {i} has invalid child {c}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub format: String,
    pub version: u32,
    pub base_score: f64,
    pub learning_rate: f64,
    pub feature_names: Vec<String>,
    pub config: GbdtConfig,
    pub trees: Vec<Tree>,
}

impl TreeEnsemble {
    /// An ensemble without trees that always predicts `base_score`.
    pub fn constant(base_score: f64, feature_names: Vec<String>, config: GbdtConfig) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            base_score,
            learning_rate: config.learning_rate,
            feature_names,
            config,
            trees: Vec::new(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut p = self.base_score;
        for t in &self.trees {
            p += self.learning_rate * t.predict_row(row);
        }
        p
    }

    /// Predicts every row of `m`; column names must match the model.
    pub fn predict(&self, m: &FeatureMatrix) -> Result<Vec<f64>, GbdtError> {
        if m.names != self.feature_names {
            return Err(GbdtError::Schema(format!(
                "model expects {} columns {:?}, matrix has {} columns",
                self.n_features(),
                self.feature_names,
                m.n_cols()
            )));
        }
        Ok(m.rows().map(|r| self.predict_row(r)).collect())
    }

    /// Predicts raw rows of the model's width.
    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, GbdtError> {
        rows.iter()
            .map(|r| {
                if r.len() != self.n_features() {
                    Err(GbdtError::Schema(format!(
                        "row has {} values, model expects {}",
                        r.len(),
                        self.n_features()
                    )))
                } else {
                    Ok(self.predict_row(r))
                }
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ensemble serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GbdtError> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| GbdtError::Format(e.to_string()))?;
        match raw.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => {
                return Err(GbdtError::Format(format!(
                    "model version {v} is not supported (expected {MODEL_VERSION})"
                )))
            }
            None => return Err(GbdtError::Format("missing model version".into())),
        }
        let e: TreeEnsemble =
            serde_json::from_value(raw).map_err(|e| GbdtError::Format(e.to_string()))?;
        if e.format != MODEL_FORMAT {
            return Err(GbdtError::Format(format!("unexpected format tag `{}`", e.format)));
        }
        if !e.base_score.is_finite() {
            return Err(GbdtError::Format("non-finite base score".into()));
        }
        for (i, t) in e.trees.iter().enumerate() {
            t.check(e.n_features())
                .map_err(|m| GbdtError::Format(format!("tree {i}: {m}")))?;
        }
        Ok(e)
    }
}

pub fn save_model(e: &TreeEnsemble, path: impl AsRef<Path>) -> Result<(), GbdtError> {
    let path = path.as_ref();
    std::fs::write(path, e.to_json()).map_err(|source| GbdtError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TreeEnsemble, GbdtError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GbdtError::Io {
        path: path.display().to_string(),
        source,
    })?;
    TreeEnsemble::from_json(&text)
}

fn check_finite(m: &FeatureMatrix) -> Result<(), GbdtError> {
    if m.is_empty() {
        return Err(GbdtError::Data("empty feature matrix".into()));
    }
    for (i, r) in m.rows().enumerate() {
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(GbdtError::Data(format!(
                "row {i}: non-finite value in column `{}`",
                m.names[j]
            )));
        }
        if !m.targets[i].is_finite() {
            return Err(GbdtError::Data(format!("row {i}: non-finite target")));
        }
    }
    Ok(())
}

/// Per-feature quantile thresholds and the training matrix mapped to bins,
/// stored column-major. A value's bin is the number of thresholds `<=` it.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    pub thresholds: Vec<Vec<f64>>,
    pub bins: Vec<u8>,
    pub n_rows: usize,
}

impl BinnedMatrix {
    pub fn build(m: &FeatureMatrix, n_bins: usize) -> Self {
        let n = m.n_rows();
        let mut thresholds = Vec::with_capacity(m.n_cols());
        let mut bins = vec![0u8; n * m.n_cols()];
        for j in 0..m.n_cols() {
            let col = m.column(j);
            let cuts = quantile_cuts(&col, n_bins);
            for (i, &x) in col.iter().enumerate() {
                bins[j * n + i] = cuts.partition_point(|&t| t <= x) as u8;
            }
            thresholds.push(cuts);
        }
        Self { thresholds, bins, n_rows: n }
    }

    pub fn n_features(&self) -> usize {
        self.thresholds.len()
    }

    pub fn column(&self, j: usize) -> &[u8] {
        &self.bins[j * self.n_rows..(j + 1) * self.n_rows]
    }

    pub fn n_bins(&self, j: usize) -> usize {
        self.thresholds[j].len() + 1
    }
}

/// At most `n_bins - 1` cut points: midpoints between consecutive distinct
/// values, or between order statistics at equally spaced ranks when there
/// are more distinct values than bins.
pub fn quantile_cuts(values: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let mid = |a: f64, b: f64| a + (b - a) / 2.0;
    if distinct.len() <= n_bins {
        return distinct.windows(2).map(|w| mid(w[0], w[1])).collect();
    }
    let n = sorted.len();
    let mut cuts: Vec<f64> = Vec::with_capacity(n_bins - 1);
    for k in 1..n_bins {
        let pos = k * n / n_bins;
        let (a, b) = (sorted[pos - 1], sorted[pos]);
        if a < b {
            let c = mid(a, b);
            if cuts.last().is_none_or(|&l| c > l) {
                cuts.push(c);
            }
        }
    }
    cuts
}

#[derive(Debug, Clone, Copy, Default)]
struct HistBin {
    g: f64,
    w: f64,
    n: u32,
}

struct Split {
    feature: usize,
    bin: usize,
    n_left: usize,
}

struct NodeDraft {
    feature: i32,
    bin: usize,
    left: i32,
    right: i32,
}

struct TreeBuilder<'a> {
    binned: &'a BinnedMatrix,
    offsets: Vec<usize>,
    n_hist: usize,
    grad: &'a [f64],
    weight: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<NodeDraft>,
    scratch: Vec<u32>,
}

impl<'a> TreeBuilder<'a> {
    fn new(binned: &'a BinnedMatrix, grad: &'a [f64], weight: &'a [f64], cfg: &GbdtConfig) -> Self {
        let mut offsets = Vec::with_capacity(binned.n_features() + 1);
        let mut acc = 0;
        for j in 0..binned.n_features() {
            offsets.push(acc);
            acc += binned.n_bins(j);
        }
        offsets.push(acc);
        Self {
            binned,
            offsets,
            n_hist: acc,
            grad,
            weight,
            max_depth: cfg.max_depth,
            min_leaf: cfg.min_samples_leaf,
            nodes: Vec::new(),
            scratch: Vec::new(),
        }
    }

    fn histogram(&self, rows: &[u32]) -> Vec<HistBin> {
        let mut h = vec![HistBin::default(); self.n_hist];
        for j in 0..self.binned.n_features() {
            let col = self.binned.column(j);
            let hj = &mut h[self.offsets[j]..self.offsets[j + 1]];
            for &i in rows {
                let i = i as usize;
                let b = &mut hj[col[i] as usize];
                b.g += self.grad[i];
                b.w += self.weight[i];
                b.n += 1;
            }
        }
        h
    }

    fn best_split(&self, h: &[HistBin], rows: &[u32]) -> Option<Split> {
        let (mut s, mut w) = (0.0, 0.0);
        for &i in rows {
            s += self.grad[i as usize];
            w += self.weight[i as usize];
        }
        let n = rows.len();
        let parent = s * s / w;
        let mut best: Option<(f64, Split)> = None;
        for j in 0..self.binned.n_features() {
            let hj = &h[self.offsets[j]..self.offsets[j + 1]];
            let (mut sl, mut wl, mut nl) = (0.0, 0.0, 0usize);
            for (b, bin) in hj.iter().enumerate().take(hj.len() - 1) {
                sl += bin.g;
                wl += bin.w;
                nl += bin.n as usize;
                if nl < self.min_leaf {
                    continue;
                }
                if n - nl < self.min_leaf {
                    break;
                }
                let (sr, wr) = (s - sl, w - wl);
                if wl <= 0.0 || wr <= 0.0 {
                    continue;
                }
                let gain = sl * sl / wl + sr * sr / wr - parent;
                if gain > MIN_SPLIT_GAIN && best.as_ref().is_none_or(|(g, _)| gain > *g) {
                    best = Some((
                        gain,
                        Split {
                            feature: j,
                            bin: b,
                            n_left: nl,
                        },
                    ));
                }
            }
        }
        best.map(|(_, s)| s)
    }

    fn grow(&mut self, rows: &mut [u32], hist: Vec<HistBin>, depth: usize) -> i32 {
        let id = self.nodes.len();
        self.nodes.push(NodeDraft {
            feature: -1,
            bin: 0,
            left: -1,
            right: -1,
        });
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
            return id as i32;
        }
        let Some(split) = self.best_split(&hist, rows) else {
            return id as i32;
        };
        let col = self.binned.column(split.feature);
        self.scratch.clear();
        self.scratch.extend(rows.iter().filter(|&&i| col[i as usize] as usize <= split.bin));
        self.scratch.extend(rows.iter().filter(|&&i| col[i as usize] as usize > split.bin));
        rows.copy_from_slice(&self.scratch);
        debug_assert_eq!(rows.iter().filter(|&&i| col[i as usize] as usize <= split.bin).count(), split.n_left);
        let (lrows, rrows) = rows.split_at_mut(split.n_left);
        let left_small = lrows.len() <= rrows.len();
        let small = self.histogram(if left_small { lrows } else { rrows });
        let mut large = hist;
        for (l, s) in large.iter_mut().zip(&small) {
            l.g -= s.g;
            l.w -= s.w;
            l.n -= s.n;
        }
        let (lh, rh) = if left_small { (small, large) } else { (large, small) };
        let left = self.grow(lrows, lh, depth + 1);
        let right = self.grow(rrows, rh, depth + 1);
        self.nodes[id] = NodeDraft {
            feature: split.feature as i32,
            bin: split.bin,
            left,
            right,
        };
        id as i32
    }
}

/// Training outcome with the per-iteration training RMSE (entry 0 is the
/// base score alone).
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: TreeEnsemble,
    pub train_rmse: Vec<f64>,
}

fn rmse_of(residuals: &[f64]) -> f64 {
    (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
}

/// Row indices for one GOSS round, ascending, with their weights set.
fn goss_sample(grad: &[f64], g: GossConfig, rng: &mut ChaCha8Rng, weight: &mut [f64]) -> Vec<u32> {
    let n = grad.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&i, &j| {
        grad[j as usize]
            .abs()
            .total_cmp(&grad[i as usize].abs())
            .then(i.cmp(&j))
    });
    let n_top = ((g.a * n as f64).floor() as usize).min(n);
    let rest = n - n_top;
    let n_rand = ((g.b * n as f64).floor() as usize).min(rest);
    let amp = if g.b > 0.0 { (1.0 - g.a) / g.b } else { 1.0 };
    let mut picked: Vec<u32> = order[..n_top].to_vec();
    for &i in &picked {
        weight[i as usize] = 1.0;
    }
    if n_rand > 0 {
        for k in rand::seq::index::sample(rng, rest, n_rand).into_iter() {
            let i = order[n_top + k];
            weight[i as usize] = amp;
            picked.push(i);
        }
    }
    picked.sort_unstable();
    picked
}

pub fn fit(m: &FeatureMatrix, cfg: &GbdtConfig) -> Result<TreeEnsemble, GbdtError> {
    fit_with_history(m, cfg).map(|o| o.model)
}

pub fn fit_with_history(m: &FeatureMatrix, cfg: &GbdtConfig) -> Result<FitOutcome, GbdtError> {
    cfg.validate()?;
    check_finite(m)?;
    let n = m.n_rows();
    let binned = BinnedMatrix::build(m, cfg.n_bins);
    let base = m.targets.iter().sum::<f64>() / n as f64;
    let mut model = TreeEnsemble::constant(base, m.names.clone(), cfg.clone());
    let mut pred = vec![base; n];
    let mut resid: Vec<f64> = m.targets.iter().map(|y| y - base).collect();
    let mut history = vec![rmse_of(&resid)];
    let mut weight = vec![1.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all_rows: Vec<u32> = (0..n as u32).collect();
    let mut leaf_of = vec![0usize; n];

    for _ in 0..cfg.n_estimators {
        let mut rows = match cfg.goss {
            Some(g) => goss_sample(&resid, g, &mut rng, &mut weight),
            None => all_rows.clone(),
        };
        let mut builder = TreeBuilder::new(&binned, &resid, &weight, cfg);
        let hist = builder.histogram(&rows);
        builder.grow(&mut rows, hist, 0);
        let drafts = builder.nodes;

        // Leaf values and covers come from every training row.
        let k = drafts.len();
        let mut sum = vec![0.0; k];
        let mut cover = vec![0.0; k];
        for i in 0..n {
            let mut node = 0;
            while drafts[node].feature >= 0 {
                let d = &drafts[node];
                node = if binned.column(d.feature as usize)[i] as usize <= d.bin {
                    d.left as usize
                } else {
                    d.right as usize
                };
            }
            leaf_of[i] = node;
            sum[node] += resid[i];
            cover[node] += 1.0;
        }
        let mut value = vec![0.0; k];
        for node in (0..k).rev() {
            let d = &drafts[node];
            if d.feature < 0 {
                value[node] = if cover[node] > 0.0 { sum[node] / cover[node] } else { 0.0 };
            } else {
                let (l, r) = (d.left as usize, d.right as usize);
                cover[node] = cover[l] + cover[r];
                value[node] = (cover[l] * value[l] + cover[r] * value[r]) / cover[node];
            }
        }
        let tree = Tree {
            feature: drafts.iter().map(|d| d.feature).collect(),
            threshold: drafts
                .iter()
                .map(|d| {
                    if d.feature < 0 {
                        0.0
                    } else {
                        binned.thresholds[d.feature as usize][d.bin]
                    }
                })
                .collect(),
            left: drafts.iter().map(|d| d.left).collect(),
            right: drafts.iter().map(|d| d.right).collect(),
            cover,
            value,
        };
        for i in 0..n {
            pred[i] += cfg.learning_rate * tree.value[leaf_of[i]];
            resid[i] = m.targets[i] - pred[i];
        }
        let r = rmse_of(&resid);
        debug_assert!(
            r <= history.last().unwrap() * (1.0 + 1e-9) + 1e-12,
            "training RMSE increased: {} -> {r}",
            history.last().unwrap()
        );
        history.push(r);
        model.trees.push(tree);
        if cfg.goss.is_some() {
            weight.iter_mut().for_each(|w| *w = 1.0);
        }
    }
    Ok(FitOutcome {
        model,
        train_rmse: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Linear,
    Knn { k: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    fn fit(m: &FeatureMatrix) -> Self {
        let n = m.n_rows() as f64;
        let (mut mean, mut scale) = (Vec::new(), Vec::new());
        for j in 0..m.n_cols() {
            let col = m.column(j);
            let mu = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            mean.push(mu);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, scale }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    Linear {
        standardizer: Standardizer,
        weights: Vec<f64>,
        intercept: f64,
    },
    Knn {
        standardizer: Standardizer,
        /// Standardized training rows, row-major.
        data: Vec<f64>,
        targets: Vec<f64>,
        k: usize,
    },
}

pub fn fit_baseline(m: &FeatureMatrix, kind: BaselineKind) -> Result<BaselineModel, GbdtError> {
    check_finite(m)?;
    let st = Standardizer::fit(m);
    let n = m.n_rows();
    let p = m.n_cols();
    match kind {
        BaselineKind::Linear => {
            let x = DMatrix::from_fn(n, p, |i, j| (m.row(i)[j] - st.mean[j]) / st.scale[j]);
            let intercept = m.targets.iter().sum::<f64>() / n as f64;
            let y = DVector::from_iterator(n, m.targets.iter().map(|t| t - intercept));
            let mut gram = x.transpose() * &x;
            for j in 0..p {
                gram[(j, j)] += RIDGE;
            }
            let rhs = x.transpose() * y;
            let w = gram
                .cholesky()
                .ok_or_else(|| GbdtError::Data("normal equations are not positive definite".into()))?
                .solve(&rhs);
            if w.iter().any(|v| !v.is_finite()) {
                return Err(GbdtError::Data("linear fit produced non-finite weights".into()));
            }
            Ok(BaselineModel::Linear {
                standardizer: st,
                weights: w.iter().copied().collect(),
                intercept,
            })
        }
        BaselineKind::Knn { k } => {
            if k < 1 {
                return Err(GbdtError::Config("k must be at least 1".into()));
            }
            let data = m.rows().flat_map(|r| st.apply(r)).collect();
            Ok(BaselineModel::Knn {
                standardizer: st,
                data,
                targets: m.targets.clone(),
                k,
            })
        }
    }
}

impl BaselineModel {
    fn width(&self) -> usize {
        match self {
            Self::Linear { weights, .. } => weights.len(),
            Self::Knn { standardizer, .. } => standardizer.mean.len(),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            Self::Linear {
                standardizer,
                weights,
                intercept,
            } => {
                intercept
                    + standardizer
                        .apply(row)
                        .iter()
                        .zip(weights)
                        .map(|(x, w)| x * w)
                        .sum::<f64>()
            }
            Self::Knn {
                standardizer,
                data,
                targets,
                k,
            } => {
                let q = standardizer.apply(row);
                let p = q.len();
                let mut dist: Vec<(f64, usize)> = targets
                    .iter()
                    .enumerate()
                    .map(|(i, _)| {
                        let r = &data[i * p..(i + 1) * p];
                        (r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i)
                    })
                    .collect();
                let k = (*k).min(dist.len());
                let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < dist.len() {
                    dist.select_nth_unstable_by(k - 1, cmp);
                }
                let mut near: Vec<(f64, usize)> = dist[..k].to_vec();
                near.sort_by(cmp);
                near.iter().map(|&(_, i)| targets[i]).sum::<f64>() / k as f64
            }
        }
    }

    pub fn predict(&self, m: &FeatureMatrix) -> Result<Vec<f64>, GbdtError> {
        if m.n_cols() != self.width() {
            return Err(GbdtError::Schema(format!(
                "baseline expects {} columns, matrix has {}",
                self.width(),
                m.n_cols()
            )));
        }
        Ok(m.rows().map(|r| self.predict_row(r)).collect())
    }
}
