//! Exact path-dependent TreeSHAP for [`TreeEnsemble`]s, attribution
//! summaries, dependence tables and the reduced-feature model study.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::eval::{repeated_kfold_cv, subsample_indices, CvConfig, CvReport, EvalError, Learner};
use crate::features::FeatureMatrix;
use crate::gbdt::{fit, GbdtConfig, GbdtError, Tree, TreeEnsemble};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("tree {0} has no node covers; retrain the model or re-save it with covers")]
    MissingCovers(usize),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] GbdtError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: i32,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: i32) {
    let depth = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let d = depth as f64;
    for i in (0..depth).rev() {
        let w = path[i].weight;
        path[i + 1].weight += one * w * (i as f64 + 1.0) / (d + 1.0);
        path[i].weight = zero * w * (d - i as f64) / (d + 1.0);
    }
}

fn unwind(path: &mut Vec<PathElem>, index: usize) {
    let depth = path.len() - 1;
    let d = depth as f64;
    let PathElem { zero, one, .. } = path[index];
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (d + 1.0) / ((i as f64 + 1.0) * one);
            next = tmp - path[i].weight * zero * (d - i as f64) / (d + 1.0);
        } else {
            path[i].weight = path[i].weight * (d + 1.0) / (zero * (d - i as f64));
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], index: usize) -> f64 {
    let depth = path.len() - 1;
    let d = depth as f64;
    let PathElem { zero, one, .. } = path[index];
    let mut total = 0.0;
    if one != 0.0 {
        let mut next = path[depth].weight;
        for i in (0..depth).rev() {
            let tmp = next / ((i as f64 + 1.0) * one);
            total += tmp;
            next = path[i].weight - tmp * zero * (d - i as f64);
        }
    } else if zero != 0.0 {
        for i in (0..depth).rev() {
            total += path[i].weight / (zero * (d - i as f64));
        }
    }
    total * (d + 1.0)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    row: &[f64],
    phi: &mut [f64],
    scale: f64,
    node: usize,
    mut path: Vec<PathElem>,
    zero: f64,
    one: f64,
    feature: i32,
) {
    extend(&mut path, zero, one, feature);
    if tree.is_leaf(node) {
        let v = tree.value[node] * scale;
        for i in 1..path.len() {
            let e = path[i];
            phi[e.feature as usize] += unwound_sum(&path, i) * (e.one - e.zero) * v;
        }
        return;
    }
    let f = tree.feature[node];
    let (l, r) = (tree.left[node] as usize, tree.right[node] as usize);
    let (hot, cold) = if row[f as usize] < tree.threshold[node] { (l, r) } else { (r, l) };
    let (mut in_zero, mut in_one) = (1.0, 1.0);
    if let Some(k) = path.iter().skip(1).position(|e| e.feature == f).map(|k| k + 1) {
        in_zero = path[k].zero;
        in_one = path[k].one;
        unwind(&mut path, k);
    }
    let cover = tree.cover[node];
    recurse(tree, row, phi, scale, hot, path.clone(), in_zero * tree.cover[hot] / cover, in_one, f);
    recurse(tree, row, phi, scale, cold, path, in_zero * tree.cover[cold] / cover, 0.0, f);
}

/// Cover-weighted mean output of one tree.
pub fn expected_value(tree: &Tree) -> f64 {
    let root = tree.cover[0];
    (0..tree.n_nodes())
        .filter(|&n| tree.is_leaf(n))
        .map(|n| tree.cover[n] / root * tree.value[n])
        .sum()
}

fn check_covers(e: &TreeEnsemble) -> Result<(), ExplainError> {
    for (i, t) in e.trees.iter().enumerate() {
        if !t.has_covers() || t.cover.iter().any(|c| !(*c > 0.0)) {
            return Err(ExplainError::MissingCovers(i));
        }
    }
    Ok(())
}

/// Expected ensemble output under the training distribution.
pub fn base_value(e: &TreeEnsemble) -> Result<f64, ExplainError> {
    check_covers(e)?;
    Ok(e.base_score + e.trees.iter().map(|t| e.learning_rate * expected_value(t)).sum::<f64>())
}

/// Attributions of one row, one entry per model feature.
pub fn shap_row(e: &TreeEnsemble, row: &[f64]) -> Result<Vec<f64>, ExplainError> {
    check_covers(e)?;
    if row.len() != e.n_features() {
        return Err(ExplainError::Schema(format!(
            "row has {} values, model expects {}",
            row.len(),
            e.n_features()
        )));
    }
    let mut phi = vec![0.0; e.n_features()];
    for t in &e.trees {
        recurse(t, row, &mut phi, e.learning_rate, 0, Vec::with_capacity(32), 1.0, 1.0, -1);
    }
    Ok(phi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapMatrix {
    pub base: f64,
    pub names: Vec<String>,
    /// Row-major, `n_rows x names.len()`.
    pub values: Vec<f64>,
    pub n_rows: usize,
}

impl ShapMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.names.len();
        &self.values[i * w..(i + 1) * w]
    }
}

pub fn tree_shap(e: &TreeEnsemble, m: &FeatureMatrix) -> Result<ShapMatrix, ExplainError> {
    if m.names != e.feature_names {
        return Err(ExplainError::Schema("matrix columns differ from the model features".into()));
    }
    let base = base_value(e)?;
    let mut values = Vec::with_capacity(m.n_rows() * m.n_cols());
    for r in m.rows() {
        values.extend(shap_row(e, r)?);
    }
    Ok(ShapMatrix {
        base,
        names: e.feature_names.clone(),
        values,
        n_rows: m.n_rows(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapSummary {
    pub names: Vec<String>,
    pub mean_abs: Vec<f64>,
    /// Feature indices by descending mean |SHAP|, ties by index.
    pub ranking: Vec<usize>,
}

impl ShapSummary {
    pub fn top(&self, k: usize) -> Vec<&str> {
        self.ranking.iter().take(k).map(|&j| self.names[j].as_str()).collect()
    }
}

pub fn shap_summary(s: &ShapMatrix) -> ShapSummary {
    let w = s.names.len();
    let mut mean_abs = vec![0.0; w];
    for i in 0..s.n_rows {
        for (acc, v) in mean_abs.iter_mut().zip(s.row(i)) {
            *acc += v.abs();
        }
    }
    if s.n_rows > 0 {
        mean_abs.iter_mut().for_each(|v| *v /= s.n_rows as f64);
    }
    let mut ranking: Vec<usize> = (0..w).collect();
    ranking.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    ShapSummary {
        names: s.names.clone(),
        mean_abs,
        ranking,
    }
}

/// `(feature value, SHAP value, interaction feature value)` per row.
pub fn dependence_export(
    s: &ShapMatrix,
    m: &FeatureMatrix,
    feature: &str,
    interaction: &str,
) -> Result<Vec<(f64, f64, f64)>, ExplainError> {
    let col = |name: &str| m.column_index(name).ok_or_else(|| ExplainError::UnknownFeature(name.into()));
    let (j, k) = (col(feature)?, col(interaction)?);
    let sj = s
        .names
        .iter()
        .position(|n| n == feature)
        .ok_or_else(|| ExplainError::UnknownFeature(feature.into()))?;
    if s.n_rows != m.n_rows() {
        return Err(ExplainError::Schema(format!(
            "{} attribution rows for {} feature rows",
            s.n_rows,
            m.n_rows()
        )));
    }
    Ok((0..m.n_rows())
        .map(|i| (m.row(i)[j], s.row(i)[sj], m.row(i)[k]))
        .collect())
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, ExplainError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| io_err(path, source))
}

fn io_err(path: &Path, source: std::io::Error) -> ExplainError {
    ExplainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `bin_ix,bin_iy,cell_id,base,phi_<feature>...`
pub fn write_shap_csv(s: &ShapMatrix, m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), ExplainError> {
    let path = path.as_ref();
    let mut f = create(path)?;
    let header: Vec<String> = ["bin_ix", "bin_iy", "cell_id", "base"]
        .iter()
        .map(|s| s.to_string())
        .chain(s.names.iter().map(|n| format!("phi_{n}")))
        .collect();
    let mut out = header.join(",") + "\n";
    for i in 0..s.n_rows {
        let k = &m.keys[i];
        out.push_str(&format!("{},{},{},{}", k.bin_ix, k.bin_iy, k.cell_id, s.base));
        for v in s.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    f.write_all(out.as_bytes()).and_then(|_| f.flush()).map_err(|e| io_err(path, e))
}

/// `feature,mean_abs_shap,rank` in ranking order, rank starting at 1.
pub fn write_summary_csv(s: &ShapSummary, path: impl AsRef<Path>) -> Result<(), ExplainError> {
    let path = path.as_ref();
    let mut f = create(path)?;
    let mut out = String::from("feature,mean_abs_shap,rank\n");
    for (rank, &j) in s.ranking.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", s.names[j], s.mean_abs[j], rank + 1));
    }
    f.write_all(out.as_bytes()).and_then(|_| f.flush()).map_err(|e| io_err(path, e))
}

pub fn write_dependence_csv(rows: &[(f64, f64, f64)], path: impl AsRef<Path>) -> Result<(), ExplainError> {
    let path = path.as_ref();
    let mut f = create(path)?;
    let mut out = String::from("feature_value,shap_value,interaction_value\n");
    for (a, b, c) in rows {
        out.push_str(&format!("{a},{b},{c}\n"));
    }
    f.write_all(out.as_bytes()).and_then(|_| f.flush()).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LighterModelReport {
    pub full: CvReport,
    pub reduced: CvReport,
    pub selected: Vec<String>,
    pub summary: ShapSummary,
    /// Relative changes `(reduced - full) / full`.
    pub delta_rmse: f64,
    pub delta_r2: f64,
    pub delta_train_s: f64,
    pub delta_predict_s: f64,
}

impl LighterModelReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), ExplainError> {
        let path = path.as_ref();
        let mut f = create(path)?;
        let mut out = String::from("model,n_features,mean_rmse,std_rmse,mean_r2,train_s,predict_s\n");
        for (name, n, r) in [
            ("full", self.summary.names.len(), &self.full),
            ("top_k", self.selected.len(), &self.reduced),
        ] {
            out.push_str(&format!(
                "{name},{n},{},{},{},{},{}\n",
                r.mean_rmse, r.std_rmse, r.mean_r2, r.mean_train_s, r.mean_predict_s
            ));
        }
        out.push_str(&format!(
            "delta,{},{},,{},{},{}\n",
            self.selected.len() as i64 - self.summary.names.len() as i64,
            self.delta_rmse,
            self.delta_r2,
            self.delta_train_s,
            self.delta_predict_s
        ));
        out.push_str(&format!("# selected: {}\n", self.selected.join(" ")));
        f.write_all(out.as_bytes()).and_then(|_| f.flush()).map_err(|e| io_err(path, e))
    }
}

/// Attributions are computed on at most this many training rows.
pub const SHAP_SAMPLE_ROWS: usize = 1000;

/// Fits the full model, ranks features by mean |SHAP| on (a seeded sample
/// of) its training rows, keeps the top `k` and cross-validates both.
pub fn lighter_model_report(
    m: &FeatureMatrix,
    cfg: &GbdtConfig,
    k: usize,
    cv: &CvConfig,
    seed: u64,
) -> Result<LighterModelReport, ExplainError> {
    if k == 0 || k > m.n_cols() {
        return Err(ExplainError::Config(format!(
            "k = {k} must lie in [1, {}]",
            m.n_cols()
        )));
    }
    let model = fit(m, cfg)?;
    let fraction = (SHAP_SAMPLE_ROWS as f64 / m.n_rows() as f64).min(1.0);
    let sample = m.select_rows(&subsample_indices(m.n_rows(), fraction, seed));
    let summary = shap_summary(&tree_shap(&model, &sample)?);
    let mut cols: Vec<usize> = summary.ranking[..k].to_vec();
    cols.sort_unstable();
    let reduced_m = m.select_columns(&cols);
    let learner = Learner::Gbdt(cfg.clone());
    let full = repeated_kfold_cv(m, &learner, cv)?;
    let reduced = repeated_kfold_cv(&reduced_m, &learner, cv)?;
    let rel = |a: f64, b: f64| (b - a) / a;
    Ok(LighterModelReport {
        delta_rmse: rel(full.mean_rmse, reduced.mean_rmse),
        delta_r2: rel(full.mean_r2, reduced.mean_r2),
        delta_train_s: rel(full.mean_train_s, reduced.mean_train_s),
        delta_predict_s: rel(full.mean_predict_s, reduced.mean_predict_s),
        selected: reduced_m.names.clone(),
        summary,
        full,
        reduced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Path-dependent conditional expectation: features in `known` follow
    /// the row, the rest average both children by cover.
    fn cond_exp(t: &Tree, row: &[f64], known: u32, node: usize) -> f64 {
        if t.is_leaf(node) {
            return t.value[node];
        }
        let f = t.feature[node] as usize;
        let (l, r) = (t.left[node] as usize, t.right[node] as usize);
        if known & (1 << f) != 0 {
            cond_exp(t, row, known, if row[f] < t.threshold[node] { l } else { r })
        } else {
            (t.cover[l] * cond_exp(t, row, known, l) + t.cover[r] * cond_exp(t, row, known, r)) / t.cover[node]
        }
    }

    fn brute_force(e: &TreeEnsemble, row: &[f64]) -> Vec<f64> {
        let m = e.n_features();
        let value = |s: u32| {
            e.base_score + e.trees.iter().map(|t| e.learning_rate * cond_exp(t, row, s, 0)).sum::<f64>()
        };
        let fact = |n: usize| (1..=n).map(|x| x as f64).product::<f64>();
        (0..m)
            .map(|i| {
                (0u32..1 << m)
                    .filter(|s| s & (1 << i) == 0)
                    .map(|s| {
                        let size = s.count_ones() as usize;
                        fact(size) * fact(m - size - 1) / fact(m) * (value(s | 1 << i) - value(s))
                    })
                    .sum()
            })
            .collect()
    }

    fn random_tree(rng: &mut ChaCha8Rng, m: usize, depth: usize) -> Tree {
        let mut t = Tree {
            feature: vec![],
            threshold: vec![],
            left: vec![],
            right: vec![],
            cover: vec![],
            value: vec![],
        };
        fn grow(t: &mut Tree, rng: &mut ChaCha8Rng, m: usize, depth: usize, cover: f64) -> i32 {
            let id = t.feature.len();
            t.feature.push(-1);
            t.threshold.push(0.0);
            t.left.push(-1);
            t.right.push(-1);
            t.cover.push(cover);
            t.value.push(rng.random_range(-10.0..10.0));
            if depth > 0 && cover >= 2.0 && rng.random_bool(0.8) {
                let lc = rng.random_range(1..cover as usize) as f64;
                t.feature[id] = rng.random_range(0..m) as i32;
                t.threshold[id] = rng.random_range(-1.0..1.0);
                let l = grow(t, rng, m, depth - 1, lc);
                let r = grow(t, rng, m, depth - 1, cover - lc);
                t.left[id] = l;
                t.right[id] = r;
            }
            id as i32
        }
        let root = rng.random_range(20..200) as f64;
        grow(&mut t, rng, m, depth, root);
        t
    }

    fn random_ensemble(seed: u64) -> TreeEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..=8);
        let names = (0..m).map(|j| format!("f{j}")).collect();
        let mut e = TreeEnsemble::constant(rng.random_range(-90.0..-60.0), names, GbdtConfig::default());
        e.learning_rate = rng.random_range(0.05..1.0);
        for _ in 0..rng.random_range(1..=10) {
            let depth = rng.random_range(1..=3);
            e.trees.push(random_tree(&mut rng, m, depth));
        }
        e
    }

    #[test]
    fn matches_exhaustive_oracle() {
        for seed in 0..30 {
            let e = random_ensemble(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            for _ in 0..5 {
                let row: Vec<f64> = (0..e.n_features()).map(|_| rng.random_range(-1.2..1.2)).collect();
                let fast = shap_row(&e, &row).unwrap();
                let slow = brute_force(&e, &row);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() <= 1e-9, "seed {seed}: {fast:?} vs {slow:?}");
                }
                let total = base_value(&e).unwrap() + fast.iter().sum::<f64>();
                assert!((total - e.predict_row(&row)).abs() <= 1e-9);
            }
        }
    }

    fn stump(feature: i32, m: usize) -> TreeEnsemble {
        let names = (0..m).map(|j| format!("f{j}")).collect();
        let mut e = TreeEnsemble::constant(0.0, names, GbdtConfig::default());
        e.learning_rate = 1.0;
        e.trees.push(Tree {
            feature: vec![feature, -1, -1],
            threshold: vec![0.5, 0.0, 0.0],
            left: vec![1, -1, -1],
            right: vec![2, -1, -1],
            cover: vec![10.0, 4.0, 6.0],
            value: vec![0.0, -5.0, 5.0],
        });
        e
    }

    #[test]
    fn dummy_features_get_nothing() {
        let e = stump(1, 3);
        for x in [[0.0, 0.0, 0.0], [9.0, 1.0, -3.0]] {
            let phi = shap_row(&e, &x).unwrap();
            assert_eq!(phi[0], 0.0);
            assert_eq!(phi[2], 0.0);
        }
        // E = 0.4 * -5 + 0.6 * 5 = 1; the row at x1 = 1 earns 5 - 1.
        assert_eq!(base_value(&e).unwrap(), 1.0);
        assert!((shap_row(&e, &[0.0, 1.0, 0.0]).unwrap()[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_tree_splits_credit_evenly() {
        let names = vec!["a".to_string(), "b".to_string()];
        let mut e = TreeEnsemble::constant(0.0, names, GbdtConfig::default());
        e.learning_rate = 1.0;
        // Output 1 only when both a and b exceed 0.5, balanced covers.
        e.trees.push(Tree {
            feature: vec![0, 1, -1, -1, 1, -1, -1],
            threshold: vec![0.5, 0.5, 0.0, 0.0, 0.5, 0.0, 0.0],
            left: vec![1, 2, -1, -1, 5, -1, -1],
            right: vec![4, 3, -1, -1, 6, -1, -1],
            cover: vec![4.0, 2.0, 1.0, 1.0, 2.0, 1.0, 1.0],
            value: vec![0.25, 0.0, 0.0, 0.0, 0.5, 0.0, 1.0],
        });
        let phi = shap_row(&e, &[1.0, 1.0]).unwrap();
        assert!((phi[0] - phi[1]).abs() < 1e-15);
        assert!((phi[0] - 0.375).abs() < 1e-12);
    }

    #[test]
    fn additivity_over_trees() {
        let e = random_ensemble(77);
        let row = vec![0.1; e.n_features()];
        let total = shap_row(&e, &row).unwrap();
        let mut sum = vec![0.0; e.n_features()];
        for t in &e.trees {
            let mut single = e.clone();
            single.trees = vec![t.clone()];
            for (s, v) in sum.iter_mut().zip(shap_row(&single, &row).unwrap()) {
                *s += v;
            }
        }
        assert!(total.iter().zip(&sum).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn empty_ensemble_and_missing_covers() {
        let e = TreeEnsemble::constant(-70.0, vec!["a".into()], GbdtConfig::default());
        assert_eq!(shap_row(&e, &[3.0]).unwrap(), vec![0.0]);
        assert_eq!(base_value(&e).unwrap(), -70.0);
        let mut bare = stump(0, 1);
        bare.trees[0].cover.clear();
        let err = shap_row(&bare, &[0.0]).unwrap_err();
        assert!(matches!(err, ExplainError::MissingCovers(0)));
        assert!(err.to_string().contains("retrain"));
    }

    #[test]
    fn summary_arithmetic() {
        let s = ShapMatrix {
            base: 0.0,
            names: vec!["f1".into(), "f2".into()],
            values: vec![1.0, -3.0, 1.0, 3.0],
            n_rows: 2,
        };
        let sum = shap_summary(&s);
        assert_eq!(sum.mean_abs, vec![1.0, 3.0]);
        assert_eq!(sum.ranking, vec![1, 0]);
        assert_eq!(sum.top(1), vec!["f2"]);
        let zero = ShapMatrix { values: vec![0.0; 4], ..s };
        assert_eq!(shap_summary(&zero).mean_abs, vec![0.0, 0.0]);
        assert_eq!(shap_summary(&zero).ranking, vec![0, 1]);
    }

    #[test]
    fn dependence_columns() {
        let rows = vec![vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 30.0]];
        let m = FeatureMatrix::from_rows(vec!["a".into(), "b".into()], &rows, vec![0.0; 3]);
        let s = ShapMatrix {
            base: 0.0,
            names: m.names.clone(),
            values: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            n_rows: 3,
        };
        let d = dependence_export(&s, &m, "a", "b").unwrap();
        assert_eq!(d, vec![(1.0, 0.1, 10.0), (2.0, 0.3, 20.0), (3.0, 0.5, 30.0)]);
        let same = dependence_export(&s, &m, "b", "b").unwrap();
        assert!(same.iter().all(|(x, _, z)| x == z));
        assert!(matches!(dependence_export(&s, &m, "c", "a"), Err(ExplainError::UnknownFeature(_))));
    }
}
