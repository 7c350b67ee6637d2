use std::path::{Path, PathBuf};

use hdrm::config::RunConfig;
use hdrm::dataset::{
    binarize, load_interactions, read_manifest, split, write_id_map, write_manifest, DatasetStats,
    Format, InteractionDataset,
};
use hdrm::encoder::{to_manifold, write_embedding_csv};
use hdrm::eval::{metrics_table, popularity_baseline, train_mf_bpr, Metrics, Split};
use hdrm::persist::write_json;
use hdrm::pipeline::{
    load_stage1, parse_grid, run_stage1, run_stage2, save_stage1, sweep, Ablation, FittedModel,
    SweepParam,
};
use hdrm::train::RunLog;
use hdrm::{HdrmError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{EvalArgs, ExportArgs, PrepareArgs, Stage, TrainArgs};

pub const MANIFEST: &str = "manifest.tsv";
pub const USER_IDS: &str = "users.tsv";
pub const ITEM_IDS: &str = "items.tsv";
pub const STATS: &str = "stats.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HdrmError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HdrmError::io(path, e))
}

fn load_dataset(dir: &Path) -> Result<InteractionDataset> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(HdrmError::MissingArtifact {
            path,
            hint: "run `hdrm prepare` first".into(),
        });
    }
    read_manifest(&path)
}

#[derive(Serialize)]
struct PrepareReport<'a> {
    source: &'a Path,
    rating_threshold: f64,
    noise_injected: bool,
    dropped_users: usize,
    #[serde(flatten)]
    stats: DatasetStats,
}

pub fn prepare(cfg: &RunConfig, args: &PrepareArgs) -> Result<()> {
    let out = args.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
    let format = args
        .format
        .unwrap_or_else(|| Format::from_path(&args.input));
    let log = load_interactions(&args.input, format)?;
    let bin = binarize(&log.records, cfg.rating_threshold);
    let outcome = split(&bin, log.users.len(), log.items.len(), &cfg.split())?;
    let ds = if args.noise {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0015_e000);
        outcome.dataset.inject_noise(&mut rng)?
    } else {
        outcome.dataset
    };

    ensure_dir(&out)?;
    write_manifest(&out.join(MANIFEST), &ds)?;
    write_id_map(
        &out.join(USER_IDS),
        &log.users.restrict(&outcome.kept_users),
    )?;
    write_id_map(&out.join(ITEM_IDS), &log.items)?;
    let report = PrepareReport {
        source: &args.input,
        rating_threshold: cfg.rating_threshold,
        noise_injected: args.noise,
        dropped_users: outcome.dropped_users,
        stats: ds.stats(),
    };
    write_json(&out.join(STATS), &report)?;
    let s = &report.stats;
    println!(
        "{} users, {} items, train/val/test {}/{}/{} -> {}",
        s.users,
        s.items,
        s.train,
        s.val,
        s.test,
        out.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let data = args.data.clone().unwrap_or_else(|| cfg.data_dir.clone());
    let run = args.run.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let ds = load_dataset(&data)?;
    match args.stage {
        Stage::One => {
            let s1 = run_stage1(&ds, cfg, args.ablate)?;
            save_stage1(&run, cfg, &s1.table, &s1.log)?;
            println!(
                "stage 1: best epoch {} val recall@20 {:.4}",
                s1.best_epoch, s1.best_val.recall20
            );
        }
        Stage::Two => {
            let table = load_stage1(&run)?;
            let fitted = run_stage2(&ds, cfg, args.ablate, table, RunLog::default())?;
            fitted.save(&run)?;
            report_stage2(&fitted);
        }
        Stage::All => {
            let s1 = run_stage1(&ds, cfg, args.ablate)?;
            save_stage1(&run, cfg, &s1.table, &s1.log)?;
            println!(
                "stage 1: best epoch {} val recall@20 {:.4}",
                s1.best_epoch, s1.best_val.recall20
            );
            let fitted = run_stage2(&ds, cfg, args.ablate, s1.table, s1.log)?;
            fitted.save(&run)?;
            report_stage2(&fitted);
        }
    }
    Ok(())
}

fn report_stage2(fitted: &FittedModel) {
    match fitted.stage2_log.best() {
        Some(best) => println!(
            "stage 2: best epoch {} val recall@20 {:.4}",
            best.epoch, best.recall20
        ),
        None => println!("stage 2: skipped"),
    }
}

#[derive(Serialize)]
struct EvalRow {
    model: String,
    #[serde(flatten)]
    metrics: Metrics,
}

#[derive(Serialize)]
struct EvalReport {
    split: &'static str,
    ablation: Option<Ablation>,
    rows: Vec<EvalRow>,
}

#[derive(Serialize)]
struct SweepRow {
    value: f64,
    #[serde(flatten)]
    metrics: Metrics,
}

#[derive(Serialize)]
struct SweepReport {
    param: &'static str,
    ablation: Option<Ablation>,
    split: &'static str,
    rows: Vec<SweepRow>,
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Val => "val",
        Split::Test => "test",
    }
}

fn model_label(ablation: Option<Ablation>) -> String {
    match ablation {
        Some(a) => format!("hdrm w/o {a}"),
        None => "hdrm".into(),
    }
}

pub fn eval(base: &RunConfig, seed: Option<u64>, args: &EvalArgs) -> Result<()> {
    let run = args.run.clone().unwrap_or_else(|| base.out_dir.clone());
    let model = FittedModel::load(&run)?;
    let mut cfg = model.config.clone();
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let data = args.data.clone().unwrap_or_else(|| cfg.data_dir.clone());
    let ds = load_dataset(&data)?;
    let out = args.out.clone().unwrap_or_else(|| run.clone());
    ensure_dir(&out)?;

    if let Some(param) = args.sweep {
        let grid = match &args.grid {
            Some(spec) => parse_grid(param, spec)?,
            None => param.default_grid(),
        };
        let name = match param {
            SweepParam::Margin => "margin",
            SweepParam::Steps => "steps",
        };
        let rows = sweep(&ds, &cfg, model.ablation, param, &grid)?;
        let labelled: Vec<(String, Metrics)> = rows
            .iter()
            .map(|(v, m)| (format!("{name}={v}"), *m))
            .collect();
        let table = metrics_table(&labelled);
        write_json(
            &out.join(format!("sweep_{name}.json")),
            &SweepReport {
                param: name,
                ablation: model.ablation,
                split: "test",
                rows: rows
                    .into_iter()
                    .map(|(value, metrics)| SweepRow { value, metrics })
                    .collect(),
            },
        )?;
        write_text(&out.join(format!("sweep_{name}.txt")), &table)?;
        print!("{table}");
        return Ok(());
    }

    let split: Split = args.split.into();
    let mut rows = vec![(model_label(model.ablation), model.evaluate(&ds, split)?)];
    if args.baselines {
        rows.push(("popularity".into(), popularity_baseline(&ds, split)));
        let (mf, _) = train_mf_bpr(&ds, &cfg.mf())?;
        rows.push(("mf-bpr".into(), mf.evaluate(&ds, split)));
    }
    let table = metrics_table(&rows);
    write_json(
        &out.join("metrics.json"),
        &EvalReport {
            split: split_name(split),
            ablation: model.ablation,
            rows: rows
                .into_iter()
                .map(|(model, metrics)| EvalRow { model, metrics })
                .collect(),
        },
    )?;
    write_text(&out.join("metrics.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// Items sorted by train popularity (ties to the smaller id); the first
/// `round(fraction * items)` are labelled popular.
pub fn popularity_labels(counts: &[usize], fraction: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let cut = (fraction * counts.len() as f64).round() as usize;
    let mut labels = vec![false; counts.len()];
    for &i in &order[..cut.min(counts.len())] {
        labels[i] = true;
    }
    labels
}

fn write_popularity_csv(path: &Path, counts: &[usize], labels: &[bool]) -> Result<()> {
    let mut body = String::from("item_id,train_count,group\n");
    for (i, (c, popular)) in counts.iter().zip(labels).enumerate() {
        body.push_str(&format!(
            "{i},{c},{}\n",
            if *popular { "popular" } else { "niche" }
        ));
    }
    write_text(path, &body)
}

pub fn export(cfg: &RunConfig, args: &ExportArgs) -> Result<()> {
    let run = args.run.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let model = FittedModel::load(&run)?;
    let data = args
        .data
        .clone()
        .unwrap_or_else(|| model.config.data_dir.clone());
    let ds = load_dataset(&data)?;
    let out: PathBuf = args.out.clone().unwrap_or_else(|| run.join("export"));
    ensure_dir(&out)?;

    let z = model.tangent_states(&ds)?;
    let manifold = model.config.manifold()?;
    write_embedding_csv(&out.join("tangent.csv"), ds.num_users(), z.view())?;
    write_embedding_csv(
        &out.join("manifold.csv"),
        ds.num_users(),
        to_manifold(&manifold, z.view()).view(),
    )?;
    model
        .user_clusters
        .write_assignments_csv(&out.join("clusters_user.csv"))?;
    model
        .item_clusters
        .write_assignments_csv(&out.join("clusters_item.csv"))?;
    let counts = ds.popularity();
    let labels = popularity_labels(&counts, model.config.popular_fraction);
    write_popularity_csv(&out.join("popularity.csv"), &counts, &labels)?;
    println!(
        "exported {} users and {} items -> {}",
        ds.num_users(),
        ds.num_items(),
        out.display()
    );
    Ok(())
}
