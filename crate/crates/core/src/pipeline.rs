//! End-to-end runs: stage 1, clustering, stage 2 and scoring, plus the
//! on-disk layout of a trained model.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans, ClusterModel};
use crate::config::RunConfig;
use crate::dataset::InteractionDataset;
use crate::diffusion::{direction_signs, DenoiserNet, DiffusionCheckpoint, ForwardProcess, NetRole, CHECKPOINT_VERSION};
use crate::encoder::{encode_tangent, to_manifold, EmbeddingTable, Graph};
use crate::error::{HdrmError, Result};
use crate::eval::{EmbeddingScorer, Metrics, Split};
use crate::objective::Geometry;
use crate::persist::{read_json, write_json};
use crate::train::{train_stage1, train_stage2, Denoisers, RunLog, Stage1Outcome};

/// Model variants with one structural component removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// All-ones signs and no stride.
    Geo,
    /// No diffusion stage; scores come from the stage-1 encoder.
    Diff,
    /// Euclidean scores and losses on the tangent states.
    Hyp,
}

impl FromStr for Ablation {
    type Err = HdrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geo" => Ok(Ablation::Geo),
            "diff" => Ok(Ablation::Diff),
            "hyp" => Ok(Ablation::Hyp),
            other => Err(HdrmError::Config(format!("unknown ablation {other:?}, expected geo, diff or hyp"))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Geo => "geo",
            Ablation::Diff => "diff",
            Ablation::Hyp => "hyp",
        })
    }
}

pub fn geometry(cfg: &RunConfig, ablation: Option<Ablation>) -> Result<Geometry> {
    Ok(match ablation {
        Some(Ablation::Hyp) => Geometry::Euclidean,
        _ => Geometry::Hyperbolic(cfg.manifold()?),
    })
}

fn seed_for(cfg: &RunConfig, stream: u64) -> u64 {
    cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(stream)
}

pub fn run_stage1(ds: &InteractionDataset, cfg: &RunConfig, ablation: Option<Ablation>) -> Result<Stage1Outcome> {
    cfg.validate()?;
    let graph = Graph::from_dataset(ds);
    let table = EmbeddingTable::init(ds.num_users(), ds.num_items(), cfg.dim, cfg.init_std, seed_for(cfg, 1))?;
    train_stage1(ds, &graph, table, cfg.layers, &geometry(cfg, ablation)?, &cfg.loss(), &cfg.train())
}

/// Hyperbolic k-means over the embedded encoder states, users and items
/// separately. The cluster count is capped by the number of nodes.
pub fn cluster_nodes(cfg: &RunConfig, z: ArrayView2<'_, f64>, num_users: usize) -> Result<(ClusterModel, ClusterModel)> {
    let m = cfg.manifold()?;
    let run = |rows: ArrayView2<'_, f64>, stream| {
        let mut kc = cfg.kmeans();
        kc.clusters = kc.clusters.min(rows.nrows());
        kmeans(&m, to_manifold(&m, rows).view(), &kc, seed_for(cfg, stream))
    };
    Ok((run(z.slice(s![..num_users, ..]), 2)?, run(z.slice(s![num_users.., ..]), 3)?))
}

/// Everything needed to score a trained model.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub config: RunConfig,
    pub ablation: Option<Ablation>,
    pub stage1_table: EmbeddingTable,
    /// Final table (after fine-tuning when stage 2 ran with it).
    pub table: EmbeddingTable,
    pub user_clusters: ClusterModel,
    pub item_clusters: ClusterModel,
    pub diffusion: Option<DiffusionCheckpoint>,
    pub stage1_log: RunLog,
    pub stage2_log: RunLog,
}

/// Runs clustering and stage 2 on top of a stage-1 table.
pub fn run_stage2(
    ds: &InteractionDataset,
    cfg: &RunConfig,
    ablation: Option<Ablation>,
    stage1_table: EmbeddingTable,
    stage1_log: RunLog,
) -> Result<FittedModel> {
    cfg.validate()?;
    if stage1_table.num_users != ds.num_users() || stage1_table.num_items != ds.num_items() || stage1_table.dim() != cfg.dim {
        return Err(HdrmError::Data("stage-1 table does not match the dataset and config".into()));
    }
    let graph = Graph::from_dataset(ds);
    let z = encode_tangent(stage1_table.params.view(), &graph, cfg.layers)?;
    let (user_clusters, item_clusters) = cluster_nodes(cfg, z.view(), ds.num_users())?;
    let mut fitted = FittedModel {
        config: cfg.clone(),
        ablation,
        table: stage1_table.clone(),
        stage1_table,
        user_clusters,
        item_clusters,
        diffusion: None,
        stage1_log,
        stage2_log: RunLog::default(),
    };
    if ablation == Some(Ablation::Diff) {
        return Ok(fitted);
    }
    let mut dcfg = cfg.diffusion();
    let (user_signs, item_signs) = if ablation == Some(Ablation::Geo) {
        dcfg.delta = 0.0;
        (Array2::ones((ds.num_users(), cfg.dim)), Array2::ones((ds.num_items(), cfg.dim)))
    } else {
        (direction_signs(&fitted.user_clusters), direction_signs(&fitted.item_clusters))
    };
    let k = cfg.manifold()?.k();
    let process = ForwardProcess::new(dcfg, k)?;
    let models = Denoisers {
        user_net: DenoiserNet::init(NetRole::User, cfg.dim, cfg.hidden, cfg.time_dim, seed_for(cfg, 4))?,
        item_net: DenoiserNet::init(NetRole::Item, cfg.dim, cfg.hidden, cfg.time_dim, seed_for(cfg, 5))?,
        user_signs,
        item_signs,
    };
    let out = train_stage2(
        ds,
        &graph,
        &fitted.stage1_table,
        cfg.layers,
        &geometry(cfg, ablation)?,
        &cfg.loss(),
        &process,
        models,
        &cfg.train(),
    )?;
    fitted.table = out.table;
    fitted.stage2_log = out.log;
    fitted.diffusion = Some(DiffusionCheckpoint {
        version: CHECKPOINT_VERSION,
        config: dcfg,
        k,
        schedule: process.schedule.clone(),
        user_net: out.models.user_net,
        item_net: out.models.item_net,
        user_signs: out.models.user_signs,
        item_signs: out.models.item_signs,
    });
    Ok(fitted)
}

/// Stage 1, clustering and (unless ablated) stage 2.
pub fn fit(ds: &InteractionDataset, cfg: &RunConfig, ablation: Option<Ablation>) -> Result<FittedModel> {
    let s1 = run_stage1(ds, cfg, ablation)?;
    run_stage2(ds, cfg, ablation, s1.table, s1.log)
}

const FILE_CONFIG: &str = "config.toml";
const FILE_META: &str = "model.json";
const FILE_STAGE1: &str = "table_stage1.json";
const FILE_TABLE: &str = "table.json";
const FILE_USER_CLUSTERS: &str = "clusters_user.json";
const FILE_ITEM_CLUSTERS: &str = "clusters_item.json";
const FILE_DIFFUSION: &str = "diffusion.json";
pub const FILE_STAGE1_LOG: &str = "stage1_log.csv";
pub const FILE_STAGE2_LOG: &str = "stage2_log.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    ablation: Option<Ablation>,
    has_diffusion: bool,
}

fn missing(path: PathBuf, hint: &str) -> HdrmError {
    HdrmError::MissingArtifact {
        path,
        hint: hint.to_owned(),
    }
}

fn require(path: PathBuf, hint: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(missing(path, hint))
    }
}

/// Writes the stage-1 checkpoint and its log.
pub fn save_stage1(dir: &Path, cfg: &RunConfig, table: &EmbeddingTable, log: &RunLog) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HdrmError::io(dir, e))?;
    cfg.save(&dir.join(FILE_CONFIG))?;
    write_json(&dir.join(FILE_STAGE1), table)?;
    log.write(&dir.join(FILE_STAGE1_LOG))
}

pub fn load_stage1(dir: &Path) -> Result<EmbeddingTable> {
    read_json(&require(dir.join(FILE_STAGE1), "run `hdrm train --stage 1` first")?)
}

impl FittedModel {
    /// Writes every artifact into `dir`. The stage-1 checkpoint is only
    /// written when absent, so a stage-2 run never rewrites it.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| HdrmError::io(dir, e))?;
        if !dir.join(FILE_STAGE1).exists() {
            save_stage1(dir, &self.config, &self.stage1_table, &self.stage1_log)?;
        }
        self.config.save(&dir.join(FILE_CONFIG))?;
        write_json(
            &dir.join(FILE_META),
            &Meta {
                ablation: self.ablation,
                has_diffusion: self.diffusion.is_some(),
            },
        )?;
        write_json(&dir.join(FILE_TABLE), &self.table)?;
        write_json(&dir.join(FILE_USER_CLUSTERS), &self.user_clusters)?;
        write_json(&dir.join(FILE_ITEM_CLUSTERS), &self.item_clusters)?;
        if let Some(d) = &self.diffusion {
            d.save(&dir.join(FILE_DIFFUSION))?;
        }
        self.stage2_log.write(&dir.join(FILE_STAGE2_LOG))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let hint = "run `hdrm train` to produce a checkpoint";
        let config = RunConfig::load(&require(dir.join(FILE_CONFIG), hint)?)?;
        let meta: Meta = read_json(&require(dir.join(FILE_META), hint)?)?;
        let diffusion = if meta.has_diffusion {
            Some(DiffusionCheckpoint::load(&require(dir.join(FILE_DIFFUSION), hint)?)?)
        } else {
            None
        };
        Ok(FittedModel {
            config,
            ablation: meta.ablation,
            stage1_table: load_stage1(dir)?,
            table: read_json(&require(dir.join(FILE_TABLE), hint)?)?,
            user_clusters: read_json(&require(dir.join(FILE_USER_CLUSTERS), hint)?)?,
            item_clusters: read_json(&require(dir.join(FILE_ITEM_CLUSTERS), hint)?)?,
            diffusion,
            stage1_log: RunLog::default(),
            stage2_log: RunLog::default(),
        })
    }

    pub fn geometry(&self) -> Result<Geometry> {
        geometry(&self.config, self.ablation)
    }

    /// Raw encoder tangent states, users first.
    pub fn tangent_states(&self, ds: &InteractionDataset) -> Result<Array2<f64>> {
        self.check_dataset(ds)?;
        encode_tangent(self.table.params.view(), &Graph::from_dataset(ds), self.config.layers)
    }

    /// The user and item states that are scored: denoised when the model
    /// has a diffusion stage, raw encoder states otherwise.
    pub fn scored_states(&self, ds: &InteractionDataset) -> Result<(Array2<f64>, Array2<f64>)> {
        let z = self.tangent_states(ds)?;
        let nu = ds.num_users();
        match &self.diffusion {
            Some(d) => {
                let process = d.process()?;
                let users = process.denoise_states(&d.user_net, z.slice(s![..nu, ..]), d.user_signs.view())?;
                let items = process.denoise_states(&d.item_net, z.slice(s![nu.., ..]), d.item_signs.view())?;
                Ok((users, items))
            }
            None => Ok((z.slice(s![..nu, ..]).to_owned(), z.slice(s![nu.., ..]).to_owned())),
        }
    }

    pub fn scorer(&self, ds: &InteractionDataset) -> Result<EmbeddingScorer> {
        let (users, items) = self.scored_states(ds)?;
        Ok(EmbeddingScorer::new(self.geometry()?, users.view(), items.view()))
    }

    pub fn evaluate(&self, ds: &InteractionDataset, split: Split) -> Result<Metrics> {
        Ok(self.scorer(ds)?.evaluate(ds, split))
    }

    fn check_dataset(&self, ds: &InteractionDataset) -> Result<()> {
        if self.table.num_users != ds.num_users() || self.table.num_items != ds.num_items() {
            return Err(HdrmError::Data(format!(
                "checkpoint has {}x{} nodes, dataset has {}x{}",
                self.table.num_users,
                self.table.num_items,
                ds.num_users(),
                ds.num_items()
            )));
        }
        Ok(())
    }
}

/// Hyperparameters that can be swept from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Margin,
    /// Diffusion and inference steps together.
    Steps,
}

impl FromStr for SweepParam {
    type Err = HdrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "margin" => Ok(SweepParam::Margin),
            "steps" => Ok(SweepParam::Steps),
            other => Err(HdrmError::Config(format!("unknown sweep {other:?}, expected margin or steps"))),
        }
    }
}

impl SweepParam {
    /// The grid used when no explicit values are given.
    pub fn default_grid(&self) -> Vec<f64> {
        match self {
            SweepParam::Margin => (1..=8).map(|k| k as f64 * 0.05).collect(),
            SweepParam::Steps => vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
        }
    }

    pub fn apply(&self, cfg: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut out = cfg.clone();
        match self {
            SweepParam::Margin => out.margin = value,
            SweepParam::Steps => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(HdrmError::Config(format!("step count must be a positive integer, got {value}")));
                }
                out.steps = value as usize;
                out.inference_steps = value as usize;
            }
        }
        out.validate()?;
        Ok(out)
    }
}

/// Retrains once per grid value and reports test metrics.
pub fn sweep(
    ds: &InteractionDataset,
    cfg: &RunConfig,
    ablation: Option<Ablation>,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<(f64, Metrics)>> {
    values
        .iter()
        .map(|&v| {
            let run_cfg = param.apply(cfg, v)?;
            Ok((v, fit(ds, &run_cfg, ablation)?.evaluate(ds, Split::Test)?))
        })
        .collect()
}

/// Parses `a..b` (inclusive, step 0.05 for margins and 10 for steps) or a
/// comma-separated list.
pub fn parse_grid(param: SweepParam, spec: &str) -> Result<Vec<f64>> {
    let bad = || HdrmError::Config(format!("bad sweep grid {spec:?}"));
    if let Some((a, b)) = spec.split_once("..") {
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        let step = match param {
            SweepParam::Margin => 0.05,
            SweepParam::Steps => 10.0,
        };
        if !(b >= a) {
            return Err(bad());
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        // round to the step's precision so 0.05 * 3 prints as 0.15
        return Ok((0..=n).map(|k| ((a + k as f64 * step) * 1e6).round() / 1e6).collect());
    }
    spec.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}
