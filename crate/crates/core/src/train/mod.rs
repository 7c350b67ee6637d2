//! Two-stage training: margin-loss pretraining of the encoder table, then
//! the denoisers (and optionally the table) under the weighted total loss.

mod adam;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::diffusion::{DenoiserNet, ForwardProcess};
use crate::encoder::{encode_backward, encode_tangent, EmbeddingTable, Graph};
use crate::error::{HdrmError, Result};
use crate::eval::{EmbeddingScorer, Metrics, Split};
use crate::objective::{ranking_term, triplet_loss, Geometry, LossConfig, TripletStates};

pub use adam::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    /// Negatives drawn per train positive.
    pub negatives: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Epochs without a validation Recall@20 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Whether stage 2 also updates the embedding table.
    pub fine_tune: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_stage1: 100,
            epochs_stage2: 30,
            batch_size: 256,
            negatives: 1,
            lr: 1e-3,
            weight_decay: 0.005,
            patience: 10,
            seed: 0,
            fine_tune: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.negatives == 0 || self.patience == 0 {
            return Err(HdrmError::Config("batch_size, negatives and patience must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(HdrmError::Config(format!(
                "need lr > 0 and weight_decay >= 0, got lr={} weight_decay={}",
                self.lr, self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One line of a run log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub recall20: f64,
    pub ndcg20: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,recall@20,ndcg@20\n");
        for r in &self.records {
            writeln!(out, "{},{:.10e},{:.6},{:.6}", r.epoch, r.loss, r.recall20, r.ndcg20).unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| HdrmError::io(path, e))
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.recall20 >= r.recall20 => Some(b),
                _ => Some(r),
            })
    }
}

/// A `(user, positive item, negative item)` training instance.
pub type Triplet = (usize, usize, usize);

/// Shuffled train positives, each paired with fresh uniform negatives.
pub fn sample_triplets<R: Rng + ?Sized>(ds: &InteractionDataset, negatives: usize, rng: &mut R) -> Result<Vec<Triplet>> {
    let mut pairs = ds.train().to_vec();
    pairs.shuffle(rng);
    let mut out = Vec::with_capacity(pairs.len() * negatives);
    for (u, i) in pairs {
        for _ in 0..negatives {
            out.push((u, i, ds.sample_negative(u, rng)?));
        }
    }
    Ok(out)
}

/// Uniform diffusion step in `1..=steps`.
pub fn sample_timestep<R: Rng + ?Sized>(steps: usize, rng: &mut R) -> usize {
    rng.random_range(1..=steps)
}

fn add_row(grad: &mut Array2<f64>, row: usize, g: &[f64], scale: f64) {
    for (dst, v) in grad.row_mut(row).iter_mut().zip(g) {
        *dst += scale * v;
    }
}

/// Tracks the best validation Recall@20 and decides when to stop.
struct EarlyStop<T> {
    best: Option<(T, Metrics, usize)>,
    patience: usize,
    since: usize,
}

impl<T> EarlyStop<T> {
    fn new(patience: usize) -> Self {
        EarlyStop {
            best: None,
            patience,
            since: 0,
        }
    }

    /// Returns true once patience is exhausted.
    fn observe(&mut self, epoch: usize, metrics: Metrics, state: impl FnOnce() -> T) -> bool {
        let improved = self.best.as_ref().is_none_or(|(_, m, _)| metrics.recall20 > m.recall20);
        if improved {
            self.best = Some((state(), metrics, epoch));
            self.since = 0;
        } else {
            self.since += 1;
        }
        self.since >= self.patience
    }
}

pub struct Stage1Outcome {
    pub table: EmbeddingTable,
    pub log: RunLog,
    pub best_epoch: usize,
    pub best_val: Metrics,
}

/// Validation metrics of raw encoder states.
pub fn validate_table(ds: &InteractionDataset, graph: &Graph, table: &EmbeddingTable, layers: usize, geometry: &Geometry) -> Result<Metrics> {
    let z = encode_tangent(table.params.view(), graph, layers)?;
    let nu = table.num_users;
    let scorer = EmbeddingScorer::new(*geometry, z.slice(s![..nu, ..]), z.slice(s![nu.., ..]));
    Ok(scorer.evaluate(ds, Split::Val))
}

/// Margin-loss pretraining of the embedding table through the encoder.
pub fn train_stage1(
    ds: &InteractionDataset,
    graph: &Graph,
    mut table: EmbeddingTable,
    layers: usize,
    geometry: &Geometry,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<Stage1Outcome> {
    cfg.validate()?;
    loss.validate()?;
    let nu = table.num_users;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(table.params.len(), cfg.lr, cfg.weight_decay);
    let mut log = RunLog::default();
    let mut stop = EarlyStop::new(cfg.patience);
    for epoch in 1..=cfg.epochs_stage1 {
        let triplets = sample_triplets(ds, cfg.negatives, &mut rng)?;
        let mut total = 0.0;
        for batch in triplets.chunks(cfg.batch_size) {
            let z = encode_tangent(table.params.view(), graph, layers)?;
            let terms: Vec<_> = batch
                .par_iter()
                .map(|&(u, i, j)| {
                    ranking_term(
                        geometry,
                        loss,
                        &z.row(u).to_vec(),
                        &z.row(nu + i).to_vec(),
                        &z.row(nu + j).to_vec(),
                    )
                })
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let mut grad_z = Array2::zeros(z.dim());
            for (&(u, i, j), term) in batch.iter().zip(&terms) {
                total += term.loss;
                if term.is_active() {
                    add_row(&mut grad_z, u, &term.grad_u, scale);
                    add_row(&mut grad_z, nu + i, &term.grad_i, scale);
                    add_row(&mut grad_z, nu + j, &term.grad_j, scale);
                }
            }
            let grad = encode_backward(grad_z.view(), graph, layers)?;
            opt.step(table.params.as_slice_mut().unwrap(), grad.as_slice().unwrap())?;
        }
        let mean_loss = total / triplets.len().max(1) as f64;
        if !mean_loss.is_finite() || !table.is_finite() {
            return Err(HdrmError::Numeric(format!("stage 1 diverged at epoch {epoch}")));
        }
        let val = validate_table(ds, graph, &table, layers, geometry)?;
        log.records.push(EpochRecord {
            epoch,
            loss: mean_loss,
            recall20: val.recall20,
            ndcg20: val.ndcg20,
        });
        log::info!("stage1 epoch {epoch}: loss {mean_loss:.5} val recall@20 {:.4}", val.recall20);
        if stop.observe(epoch, val, || table.clone()) {
            break;
        }
    }
    let (best, best_val, best_epoch) = match stop.best {
        Some(b) => b,
        None => {
            let val = validate_table(ds, graph, &table, layers, geometry)?;
            (table, val, 0)
        }
    };
    Ok(Stage1Outcome {
        table: best,
        log,
        best_epoch,
        best_val,
    })
}

/// The diffusion side of stage 2: both nets and the per-node signs.
#[derive(Debug, Clone)]
pub struct Denoisers {
    pub user_net: DenoiserNet,
    pub item_net: DenoiserNet,
    pub user_signs: Array2<f64>,
    pub item_signs: Array2<f64>,
}

impl Denoisers {
    /// Denoised `ẑ₀` for every user and item, given clean encoder states.
    pub fn denoise(&self, process: &ForwardProcess, z: ArrayView2<'_, f64>, num_users: usize) -> Result<(Array2<f64>, Array2<f64>)> {
        let users = process.denoise_states(&self.user_net, z.slice(s![..num_users, ..]), self.user_signs.view())?;
        let items = process.denoise_states(&self.item_net, z.slice(s![num_users.., ..]), self.item_signs.view())?;
        Ok((users, items))
    }
}

/// Validation metrics of the denoised states.
pub fn validate_denoised(
    ds: &InteractionDataset,
    graph: &Graph,
    table: &EmbeddingTable,
    layers: usize,
    geometry: &Geometry,
    process: &ForwardProcess,
    models: &Denoisers,
    split: Split,
) -> Result<Metrics> {
    let z = encode_tangent(table.params.view(), graph, layers)?;
    let (users, items) = models.denoise(process, z.view(), table.num_users)?;
    Ok(EmbeddingScorer::new(*geometry, users.view(), items.view()).evaluate(ds, split))
}

pub struct Stage2Outcome {
    pub table: EmbeddingTable,
    pub models: Denoisers,
    pub log: RunLog,
    pub best_epoch: usize,
    pub best_val: Metrics,
}

struct Noised {
    t: usize,
    u: Vec<f64>,
    i: Vec<f64>,
    j: Vec<f64>,
}

/// Denoiser training under the reweighted total loss. Each triplet gets its
/// own uniform step `t`; `z_t` is produced by iterating single forward steps
/// and is treated as data. The ranking term acts on the predictions and is
/// passed straight through to the table, so the nets only see the
/// reconstruction gradient.
#[allow(clippy::too_many_arguments)]
pub fn train_stage2(
    ds: &InteractionDataset,
    graph: &Graph,
    table: &EmbeddingTable,
    layers: usize,
    geometry: &Geometry,
    loss: &LossConfig,
    process: &ForwardProcess,
    models: Denoisers,
    cfg: &TrainConfig,
) -> Result<Stage2Outcome> {
    cfg.validate()?;
    loss.validate()?;
    let nu = table.num_users;
    let n = table.dim();
    let mut table = table.clone();
    let mut models = models;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut opt_table = Adam::new(table.params.len(), cfg.lr, cfg.weight_decay);
    let mut opt_user = Adam::new(models.user_net.params().len(), cfg.lr, cfg.weight_decay);
    let mut opt_item = Adam::new(models.item_net.params().len(), cfg.lr, cfg.weight_decay);
    let mut log = RunLog::default();
    let mut stop = EarlyStop::new(cfg.patience);
    for epoch in 1..=cfg.epochs_stage2 {
        let triplets = sample_triplets(ds, cfg.negatives, &mut rng)?;
        let mut total = 0.0;
        for batch in triplets.chunks(cfg.batch_size) {
            let z = encode_tangent(table.params.view(), graph, layers)?;
            let seeds: Vec<(usize, u64)> = batch
                .iter()
                .map(|_| (sample_timestep(process.steps(), &mut rng), rng.random()))
                .collect();
            let noised: Vec<Noised> = batch
                .par_iter()
                .zip(&seeds)
                .map(|(&(u, i, j), &(t, seed))| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let us = models.user_signs.row(u).to_vec();
                    let is = models.item_signs.row(i).to_vec();
                    let js = models.item_signs.row(j).to_vec();
                    Ok(Noised {
                        t,
                        u: process.chain(&z.row(u).to_vec(), t, &us, &mut r)?,
                        i: process.chain(&z.row(nu + i).to_vec(), t, &is, &mut r)?,
                        j: process.chain(&z.row(nu + j).to_vec(), t, &js, &mut r)?,
                    })
                })
                .collect::<Result<_>>()?;
            let b = batch.len();
            let ts: Vec<usize> = noised.iter().map(|x| x.t).collect();
            let zu = Array2::from_shape_fn((b, n), |(r, c)| noised[r].u[c]);
            let zij = Array2::from_shape_fn((2 * b, n), |(r, c)| if r < b { noised[r].i[c] } else { noised[r - b].j[c] });
            let ts2: Vec<usize> = ts.iter().chain(&ts).copied().collect();
            let (hat_u, cache_u) = models.user_net.forward(zu.view(), &ts)?;
            let (hat_ij, cache_ij) = models.item_net.forward(zij.view(), &ts2)?;

            let losses: Vec<_> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &(u, i, _))| {
                    triplet_loss(
                        geometry,
                        loss,
                        TripletStates {
                            z0_u: &z.row(u).to_vec(),
                            z0_i: &z.row(nu + i).to_vec(),
                            z_hat_u: &hat_u.row(k).to_vec(),
                            z_hat_i: &hat_ij.row(k).to_vec(),
                            z_hat_j: &hat_ij.row(b + k).to_vec(),
                        },
                    )
                })
                .collect::<Result<_>>()?;

            let scale = 1.0 / b as f64;
            let mut up_u = Array2::zeros((b, n));
            let mut up_ij = Array2::zeros((2 * b, n));
            let mut grad_z = Array2::zeros(z.dim());
            for (k, (&(u, i, j), l)) in batch.iter().zip(&losses).enumerate() {
                total += l.value;
                add_row(&mut up_u, k, &l.recon_grad_u, scale);
                add_row(&mut up_ij, k, &l.recon_grad_i, scale);
                if cfg.fine_tune {
                    add_row(&mut grad_z, u, &l.rank_grad_u, scale);
                    add_row(&mut grad_z, u, &l.recon_grad_u, -scale);
                    add_row(&mut grad_z, nu + i, &l.rank_grad_i, scale);
                    add_row(&mut grad_z, nu + i, &l.recon_grad_i, -scale);
                    add_row(&mut grad_z, nu + j, &l.rank_grad_j, scale);
                }
            }
            let (g_user, _) = models.user_net.backward(&cache_u, up_u.view())?;
            let (g_item, _) = models.item_net.backward(&cache_ij, up_ij.view())?;
            opt_user.step(models.user_net.params_mut(), &g_user)?;
            opt_item.step(models.item_net.params_mut(), &g_item)?;
            if cfg.fine_tune {
                let grad = encode_backward(grad_z.view(), graph, layers)?;
                opt_table.step(table.params.as_slice_mut().unwrap(), grad.as_slice().unwrap())?;
            }
        }
        let mean_loss = total / triplets.len().max(1) as f64;
        if !mean_loss.is_finite() || !models.user_net.is_finite() || !models.item_net.is_finite() {
            return Err(HdrmError::Numeric(format!("stage 2 diverged at epoch {epoch}")));
        }
        let val = validate_denoised(ds, graph, &table, layers, geometry, process, &models, Split::Val)?;
        log.records.push(EpochRecord {
            epoch,
            loss: mean_loss,
            recall20: val.recall20,
            ndcg20: val.ndcg20,
        });
        log::info!("stage2 epoch {epoch}: loss {mean_loss:.5} val recall@20 {:.4}", val.recall20);
        if stop.observe(epoch, val, || (table.clone(), models.clone())) {
            break;
        }
    }
    let ((table, models), best_val, best_epoch) = match stop.best {
        Some(b) => b,
        None => {
            let val = validate_denoised(ds, graph, &table, layers, geometry, process, &models, Split::Val)?;
            ((table, models), val, 0)
        }
    };
    Ok(Stage2Outcome {
        table,
        models,
        log,
        best_epoch,
        best_val,
    })
}

/// One reconstruction-only Adam step of a single net on a batch of clean
/// states. Returns the mean squared error before the update.
pub fn denoiser_step<R: Rng + ?Sized>(
    net: &mut DenoiserNet,
    opt: &mut Adam,
    process: &ForwardProcess,
    z0: ArrayView2<'_, f64>,
    signs: ArrayView2<'_, f64>,
    rng: &mut R,
) -> Result<f64> {
    let (b, n) = z0.dim();
    let mut zt = Array2::zeros((b, n));
    let mut ts = Vec::with_capacity(b);
    for r in 0..b {
        let t = sample_timestep(process.steps(), rng);
        let row = process.chain(&z0.row(r).to_vec(), t, &signs.row(r).to_vec(), rng)?;
        zt.row_mut(r).assign(&ndarray::Array1::from(row));
        ts.push(t);
    }
    let (hat, cache) = net.forward(zt.view(), &ts)?;
    let diff = &hat - &z0;
    let mse = diff.mapv(|v| v * v).sum() / b as f64;
    let up = diff.mapv(|v| 2.0 * v / b as f64);
    let (g, _) = net.backward(&cache, up.view())?;
    opt.step(net.params_mut(), &g)?;
    Ok(mse)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_csv_format() {
        let log = RunLog {
            records: vec![EpochRecord {
                epoch: 1,
                loss: 0.5,
                recall20: 0.25,
                ndcg20: 0.125,
            }],
        };
        let csv = log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,loss,recall@20,ndcg@20"));
        assert_eq!(lines.next(), Some("1,5.0000000000e-1,0.250000,0.125000"));
    }

    #[test]
    fn best_prefers_earliest_maximum() {
        let rec = |epoch, recall20| EpochRecord {
            epoch,
            loss: 0.0,
            recall20,
            ndcg20: 0.0,
        };
        let log = RunLog {
            records: vec![rec(1, 0.1), rec(2, 0.3), rec(3, 0.3), rec(4, 0.2)],
        };
        assert_eq!(log.best().unwrap().epoch, 2);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
    }
}
