//! Full-ranking evaluation and the comparison baselines.

use std::cmp::Ordering;
use std::fmt;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::error::{HdrmError, Result};
use crate::objective::Geometry;
use crate::train::Adam;

/// Which held-out split to score against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Val,
    Test,
}

impl Split {
    pub fn items<'a>(&self, ds: &'a InteractionDataset, user: usize) -> &'a [usize] {
        match self {
            Split::Val => ds.user_val(user),
            Split::Test => ds.user_test(user),
        }
    }
}

fn by_score(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b))
}

/// Items in descending score order with `masked` (sorted) removed. Ties go
/// to the smaller item id.
pub fn rank_items(scores: &[f64], masked: &[usize]) -> Vec<usize> {
    let mut items: Vec<usize> = (0..scores.len()).filter(|i| masked.binary_search(i).is_err()).collect();
    items.sort_by(by_score(scores));
    items
}

/// The first `k` entries of [`rank_items`] without sorting the whole list.
pub fn top_k(scores: &[f64], masked: &[usize], k: usize) -> Vec<usize> {
    let mut items: Vec<usize> = (0..scores.len()).filter(|i| masked.binary_search(i).is_err()).collect();
    let cmp = by_score(scores);
    if k < items.len() {
        items.select_nth_unstable_by(k, &cmp);
        items.truncate(k);
    }
    items.sort_by(cmp);
    items
}

/// `|top-K ∩ positives| / |positives|`, `None` for an empty positive set.
pub fn recall_at_k(ranked: &[usize], positives: &[usize], k: usize) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|i| positives.contains(i)).count();
    Some(hits as f64 / positives.len() as f64)
}

/// Binary-gain NDCG with `1/log2(rank + 1)` discounts.
pub fn ndcg_at_k(ranked: &[usize], positives: &[usize], k: usize) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| positives.contains(i))
        .map(|(r, _)| discount(r + 1))
        .sum();
    let ideal: f64 = (1..=k.min(positives.len())).map(discount).sum();
    Some(dcg / ideal)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "recall@10")]
    pub recall10: f64,
    #[serde(rename = "ndcg@10")]
    pub ndcg10: f64,
    #[serde(rename = "recall@20")]
    pub recall20: f64,
    #[serde(rename = "ndcg@20")]
    pub ndcg20: f64,
    pub users_evaluated: usize,
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8}", "metric", "value")?;
        writeln!(f, "{:<10} {:>8.4}", "recall@10", self.recall10)?;
        writeln!(f, "{:<10} {:>8.4}", "ndcg@10", self.ndcg10)?;
        writeln!(f, "{:<10} {:>8.4}", "recall@20", self.recall20)?;
        writeln!(f, "{:<10} {:>8.4}", "ndcg@20", self.ndcg20)?;
        write!(f, "{:<10} {:>8}", "users", self.users_evaluated)
    }
}

/// Aligned table with one row per labelled result.
pub fn metrics_table(rows: &[(String, Metrics)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>6}\n",
        "model", "recall@10", "ndcg@10", "recall@20", "ndcg@20", "users"
    );
    for (label, m) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>6}\n",
            label, m.recall10, m.ndcg10, m.recall20, m.ndcg20, m.users_evaluated
        ));
    }
    out
}

/// Scores every user against the full catalogue with `score(user)` and
/// averages Recall/NDCG at 10 and 20 over users with held-out items.
/// Train positives are masked.
pub fn evaluate<F>(ds: &InteractionDataset, split: Split, score: F) -> Metrics
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    let per_user: Vec<Option<[f64; 4]>> = (0..ds.num_users())
        .into_par_iter()
        .map(|u| {
            let positives = split.items(ds, u);
            if positives.is_empty() {
                return None;
            }
            let scores = score(u);
            let ranked = top_k(&scores, ds.user_items(u), 20);
            Some([
                recall_at_k(&ranked, positives, 10).unwrap(),
                ndcg_at_k(&ranked, positives, 10).unwrap(),
                recall_at_k(&ranked, positives, 20).unwrap(),
                ndcg_at_k(&ranked, positives, 20).unwrap(),
            ])
        })
        .collect();
    let mut sums = [0.0; 4];
    let mut n = 0;
    for row in per_user.into_iter().flatten() {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
        n += 1;
    }
    let avg = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
    Metrics {
        recall10: avg(sums[0]),
        ndcg10: avg(sums[1]),
        recall20: avg(sums[2]),
        ndcg20: avg(sums[3]),
        users_evaluated: n,
    }
}

/// Scores from tangent states: users and items are embedded once, and an
/// item's score is `−d²` to the user. This orders items exactly like the
/// Fermi-Dirac score but does not saturate at large distances.
pub struct EmbeddingScorer {
    geometry: Geometry,
    users: Vec<Vec<f64>>,
    items: Vec<Vec<f64>>,
}

impl EmbeddingScorer {
    pub fn new(geometry: Geometry, users: ArrayView2<'_, f64>, items: ArrayView2<'_, f64>) -> Self {
        let embed = |a: ArrayView2<'_, f64>| -> Vec<Vec<f64>> {
            a.outer_iter().map(|r| geometry.embed(&r.to_vec())).collect()
        };
        EmbeddingScorer {
            users: embed(users),
            items: embed(items),
            geometry,
        }
    }

    pub fn scores(&self, user: usize) -> Vec<f64> {
        let e_u = &self.users[user];
        self.items.iter().map(|e_i| -self.geometry.sq_dist_embedded(e_u, e_i)).collect()
    }

    pub fn evaluate(&self, ds: &InteractionDataset, split: Split) -> Metrics {
        evaluate(ds, split, |u| self.scores(u))
    }
}

/// Every user receives the train-popularity ranking.
pub fn popularity_baseline(ds: &InteractionDataset, split: Split) -> Metrics {
    let pop: Vec<f64> = ds.popularity().into_iter().map(|c| c as f64).collect();
    evaluate(ds, split, |_| pop.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfConfig {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            dim: 50,
            epochs: 100,
            batch_size: 256,
            lr: 5e-3,
            weight_decay: 0.001,
            patience: 10,
            init_std: 0.1,
            seed: 0,
        }
    }
}

/// Inner-product matrix factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfModel {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

impl MfModel {
    pub fn scores(&self, user: usize) -> Vec<f64> {
        self.items.dot(&self.users.row(user)).to_vec()
    }

    pub fn evaluate(&self, ds: &InteractionDataset, split: Split) -> Metrics {
        evaluate(ds, split, |u| self.scores(u))
    }
}

fn log_sigmoid_neg(x: f64) -> f64 {
    // ln(1 + e^{-x})
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// MF trained with the BPR loss `−ln σ(x_ui − x_uj)` and one uniform
/// negative per train positive, early-stopped on validation Recall@20.
/// Returns the best model and its validation metrics.
pub fn train_mf_bpr(ds: &InteractionDataset, cfg: &MfConfig) -> Result<(MfModel, Metrics)> {
    if cfg.dim == 0 || cfg.batch_size == 0 || cfg.patience == 0 || !(cfg.lr > 0.0) {
        return Err(HdrmError::Config("MF-BPR needs dim, batch_size, patience >= 1 and lr > 0".into()));
    }
    let (nu, ni, d) = (ds.num_users(), ds.num_items(), cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_std)
        .map_err(|e| HdrmError::Config(format!("bad init_std {}: {e}", cfg.init_std)))?;
    let mut params: Vec<f64> = (0..(nu + ni) * d).map(|_| normal.sample(&mut rng)).collect();
    let mut opt = Adam::new(params.len(), cfg.lr, cfg.weight_decay);
    let model_of = |p: &[f64]| MfModel {
        users: Array2::from_shape_vec((nu, d), p[..nu * d].to_vec()).unwrap(),
        items: Array2::from_shape_vec((ni, d), p[nu * d..].to_vec()).unwrap(),
    };
    let mut best: Option<(MfModel, Metrics)> = None;
    let mut since = 0;
    for epoch in 1..=cfg.epochs {
        let mut pairs = ds.train().to_vec();
        pairs.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let mut grads = vec![0.0; params.len()];
            let scale = 1.0 / batch.len() as f64;
            for &(u, i) in batch {
                let j = ds.sample_negative(u, &mut rng)?;
                let (pu, pi, pj) = (u * d, (nu + i) * d, (nu + j) * d);
                let x: f64 = (0..d).map(|k| params[pu + k] * (params[pi + k] - params[pj + k])).sum();
                total += log_sigmoid_neg(x);
                // dL/dx = −σ(−x)
                let g = -scale / (1.0 + x.exp());
                for k in 0..d {
                    grads[pu + k] += g * (params[pi + k] - params[pj + k]);
                    grads[pi + k] += g * params[pu + k];
                    grads[pj + k] -= g * params[pu + k];
                }
            }
            opt.step(&mut params, &grads)?;
        }
        if !total.is_finite() {
            return Err(HdrmError::Numeric(format!("MF-BPR diverged at epoch {epoch}")));
        }
        let model = model_of(&params);
        let val = model.evaluate(ds, Split::Val);
        log::debug!("mf-bpr epoch {epoch}: loss {:.5} val recall@20 {:.4}", total / pairs.len() as f64, val.recall20);
        if best.as_ref().is_none_or(|(_, m)| val.recall20 > m.recall20) {
            best = Some((model, val));
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    Ok(best.unwrap_or_else(|| {
        let model = model_of(&params);
        let val = model.evaluate(ds, Split::Val);
        (model, val)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_items(&[0.1, 0.9], &[]), vec![1, 0]);
        assert_eq!(rank_items(&[0.5, 0.5, 0.5], &[]), vec![0, 1, 2]);
        assert_eq!(rank_items(&[0.5, 0.9, 0.5], &[1]), vec![0, 2]);
        assert_eq!(top_k(&[0.3, 0.9, 0.3, 0.1], &[], 2), vec![1, 0]);
    }

    #[test]
    fn recall_examples() {
        let ranked: Vec<usize> = (0..20).collect();
        assert_eq!(recall_at_k(&ranked, &[3, 7], 10), Some(1.0));
        assert_eq!(recall_at_k(&ranked, &[30, 40], 10), Some(0.0));
        assert!((recall_at_k(&ranked, &[3, 50, 60], 10).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall_at_k(&ranked, &[], 10), None);
    }

    #[test]
    fn ndcg_examples() {
        let ranked: Vec<usize> = (0..20).collect();
        assert_eq!(ndcg_at_k(&ranked, &[0], 10), Some(1.0));
        assert!((ndcg_at_k(&ranked, &[1], 10).unwrap() - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((ndcg_at_k(&ranked, &[0, 1, 2], 10).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn table_is_aligned() {
        let t = metrics_table(&[("hdrm".into(), Metrics::default()), ("popularity".into(), Metrics::default())]);
        let widths: Vec<usize> = t.lines().map(str::len).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]));
    }
}
