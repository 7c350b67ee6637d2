use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hdrm::manifold::Manifold;
use tempfile::TempDir;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/planted_small.tsv");

const SMALL: &str = "\
dim = 6
layers = 2
clusters = 3
kmeans_restarts = 3
steps = 4
inference_steps = 4
hidden = 16
epochs_stage1 = 8
epochs_stage2 = 3
batch_size = 64
lr = 0.005
mf_dim = 6
mf_epochs = 5
";

fn hdrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdrm"))
        .args(args)
        .env_remove("HDRM_SEED")
        .output()
        .expect("spawn hdrm")
}

fn ok(args: &[&str]) -> String {
    let out = hdrm(args);
    assert!(
        out.status.success(),
        "hdrm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// `SMALL` with the keys set in `extra` replaced.
fn config_with(extra: &str) -> String {
    let key = |l: &str| l.split('=').next().unwrap().trim().to_owned();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut out: String = SMALL
        .lines()
        .filter(|l| !overridden.contains(&key(l)))
        .map(|l| format!("{l}\n"))
        .collect();
    out.push_str(extra);
    out
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new(extra: &str) -> Work {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("cfg.toml"), config_with(extra)).unwrap();
        Work { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_owned()
    }

    fn run(&self, args: &[&str]) -> String {
        let cfg = self.s("cfg.toml");
        let mut full = vec!["--config", cfg.as_str()];
        full.extend_from_slice(args);
        ok(&full)
    }

    fn prepare(&self, out: &str, noise: bool) {
        let out = self.s(out);
        let mut args = vec!["prepare", "--input", FIXTURE, "--out", out.as_str()];
        if noise {
            args.push("--noise");
        }
        self.run(&args);
    }

    fn train(&self, data: &str, run: &str, extra: &[&str]) {
        let (data, run) = (self.s(data), self.s(run));
        let mut args = vec!["train", "--data", data.as_str(), "--run", run.as_str()];
        args.extend_from_slice(extra);
        self.run(&args);
    }
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&read(path)).unwrap()
}

fn manifest_sections(path: &Path) -> HashMap<String, Vec<(usize, usize)>> {
    let mut out: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
    let mut current = String::new();
    for line in read(path).lines().skip(2) {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.to_owned();
            out.entry(current.clone()).or_default();
        } else if let Some((u, i)) = line.split_once('\t') {
            out.get_mut(&current).unwrap().push((u.parse().unwrap(), i.parse().unwrap()));
        }
    }
    out
}

#[test]
fn prepare_splits_per_user_and_is_reproducible() {
    let w = Work::new("");
    w.prepare("a", false);
    w.prepare("b", false);
    for f in ["manifest.tsv", "users.tsv", "items.tsv", "stats.json"] {
        assert_eq!(fs::read(w.path("a").join(f)).unwrap(), fs::read(w.path("b").join(f)).unwrap(), "{f}");
    }

    // positives per original user straight from the ratings file
    let mut positives: HashMap<String, usize> = HashMap::new();
    for line in read(Path::new(FIXTURE)).lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols[2].parse::<f64>().unwrap() >= 4.0 {
            *positives.entry(cols[0].to_owned()).or_default() += 1;
        }
    }
    let dense: HashMap<usize, String> = read(&w.path("a/users.tsv"))
        .lines()
        .map(|l| {
            let (orig, d) = l.split_once('\t').unwrap();
            (d.parse().unwrap(), orig.to_owned())
        })
        .collect();
    let sections = manifest_sections(&w.path("a/manifest.tsv"));
    let count = |name: &str, u: usize| sections[name].iter().filter(|p| p.0 == u).count();
    for (u, orig) in &dense {
        let n = positives[orig];
        let test = ((n as f64 * 0.2).floor() as usize).max(1);
        let val = ((n as f64 * 0.1).floor() as usize).max(1).min(n - test - 1);
        assert_eq!(
            (count("train", *u), count("val", *u), count("test", *u)),
            (n - val - test, val, test),
            "user {orig} with {n} positives"
        );
    }
    let stats = json(&w.path("a/stats.json"));
    assert_eq!(stats["users"], 60);
    assert_eq!(stats["items"], 40);
}

#[test]
fn noise_flag_injects_equal_scale_noise_into_train_only() {
    let w = Work::new("");
    w.prepare("clean", false);
    w.prepare("noisy", true);
    let clean = manifest_sections(&w.path("clean/manifest.tsv"));
    let noisy = manifest_sections(&w.path("noisy/manifest.tsv"));
    let natural = json(&w.path("clean/stats.json"))["natural_noise"].as_u64().unwrap() as usize;
    assert!(natural > 0);
    assert_eq!(noisy["val"], clean["val"]);
    assert_eq!(noisy["test"], clean["test"]);
    assert_eq!(noisy["train"].len(), clean["train"].len() + 2 * natural);
    assert!(clean["train"].iter().all(|p| noisy["train"].contains(p)));
    assert_eq!(json(&w.path("noisy/stats.json"))["noise_injected"], true);
}

#[test]
fn full_pipeline_writes_checkpoints_and_exports() {
    let w = Work::new("");
    w.prepare("data", false);
    w.train("data", "run", &[]);
    for f in [
        "config.toml",
        "model.json",
        "table_stage1.json",
        "table.json",
        "clusters_user.json",
        "clusters_item.json",
        "diffusion.json",
        "stage1_log.csv",
        "stage2_log.csv",
    ] {
        assert!(w.path("run").join(f).exists(), "missing {f}");
    }
    let (data, run) = (w.s("data"), w.s("run"));
    let table = w.run(&["eval", "--data", &data, "--run", &run, "--baselines"]);
    assert!(table.contains("popularity") && table.contains("mf-bpr"));
    let metrics = json(&w.path("run/metrics.json"));
    assert_eq!(metrics["rows"].as_array().unwrap().len(), 3);
    assert_eq!(metrics["rows"][0]["model"], "hdrm");

    w.run(&["export", "--data", &data, "--run", &run]);
    let export = w.path("run/export");
    let manifold = Manifold::lorentz(-1.0, 6).unwrap();
    for f in ["tangent.csv", "manifold.csv"] {
        let body = read(&export.join(f));
        let rows: Vec<&str> = body.lines().skip(1).collect();
        assert_eq!(rows.len(), 60 + 40, "{f}");
        assert_eq!(rows.iter().filter(|r| r.starts_with("user,")).count(), 60);
        if f == "manifold.csv" {
            for r in rows {
                let coords: Vec<f64> = r.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
                manifold.check_point(&coords).unwrap();
            }
        }
    }
    let users = read(&export.join("clusters_user.csv"));
    let items = read(&export.join("clusters_item.csv"));
    assert_eq!(users.lines().count() - 1 + items.lines().count() - 1, 100);
}

#[test]
fn popularity_labels_split_at_the_configured_quantile() {
    for (fraction, popular) in [(0.5, 20), (0.2, 8)] {
        let w = Work::new(&format!("popular_fraction = {fraction}\nepochs_stage1 = 1\n"));
        w.prepare("data", false);
        w.train("data", "run", &["--ablate", "diff"]);
        let (data, run) = (w.s("data"), w.s("run"));
        w.run(&["export", "--data", &data, "--run", &run]);
        let rows: Vec<(usize, bool)> = read(&w.path("run/export/popularity.csv"))
            .lines()
            .skip(1)
            .map(|l| {
                let c: Vec<&str> = l.split(',').collect();
                (c[1].parse().unwrap(), c[2] == "popular")
            })
            .collect();
        assert_eq!(rows.len(), 40);
        assert_eq!(rows.iter().filter(|r| r.1).count(), popular);
        let min_popular = rows.iter().filter(|r| r.1).map(|r| r.0).min().unwrap();
        let max_niche = rows.iter().filter(|r| !r.1).map(|r| r.0).max().unwrap();
        assert!(min_popular >= max_niche);

        // train counts come from the manifest
        let sections = manifest_sections(&w.path("data/manifest.tsv"));
        for (i, (count, _)) in rows.iter().enumerate() {
            assert_eq!(*count, sections["train"].iter().filter(|p| p.1 == i).count());
        }
    }
}

#[test]
fn ablate_diff_skips_stage_two() {
    let w = Work::new("");
    w.prepare("data", false);
    w.train("data", "run", &["--ablate", "diff"]);
    assert!(!w.path("run/diffusion.json").exists());
    assert_eq!(read(&w.path("run/stage2_log.csv")).lines().count(), 1);
    let meta = json(&w.path("run/model.json"));
    assert_eq!(meta["has_diffusion"], false);
    assert_eq!(meta["ablation"], "diff");
    let (data, run) = (w.s("data"), w.s("run"));
    assert!(w.run(&["eval", "--data", &data, "--run", &run]).contains("hdrm w/o diff"));
}

#[test]
fn separate_stages_keep_the_stage_one_checkpoint() {
    let w = Work::new("");
    w.prepare("data", false);
    w.train("data", "run", &["--stage", "1"]);
    assert!(!w.path("run/table.json").exists());
    let before = fs::read(w.path("run/table_stage1.json")).unwrap();
    w.train("data", "run", &["--stage", "2"]);
    assert_eq!(fs::read(w.path("run/table_stage1.json")).unwrap(), before);
    assert!(w.path("run/diffusion.json").exists());
}

#[test]
fn training_is_deterministic_under_a_seed() {
    let w = Work::new("");
    w.prepare("data", false);
    w.train("data", "a", &[]);
    w.train("data", "b", &[]);
    for f in ["table.json", "diffusion.json", "clusters_user.json", "stage2_log.csv"] {
        assert_eq!(fs::read(w.path("a").join(f)).unwrap(), fs::read(w.path("b").join(f)).unwrap(), "{f}");
    }
    let (data, a, b) = (w.s("data"), w.s("a"), w.s("b"));
    w.run(&["eval", "--data", &data, "--run", &a]);
    w.run(&["eval", "--data", &data, "--run", &b]);
    assert_eq!(read(&w.path("a/metrics.json")), read(&w.path("b/metrics.json")));

    // the environment seed overrides the config
    let cfg = w.s("cfg.toml");
    let c = w.s("c");
    let out = Command::new(env!("CARGO_BIN_EXE_hdrm"))
        .args(["--config", &cfg, "train", "--data", &data, "--run", &c])
        .env("HDRM_SEED", "17")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(read(&w.path("c/config.toml")).contains("seed = 17"));
    assert_ne!(fs::read(w.path("a/table.json")).unwrap(), fs::read(w.path("c/table.json")).unwrap());
}

#[test]
fn margin_sweep_emits_one_row_per_value() {
    let w = Work::new("epochs_stage1 = 2\nepochs_stage2 = 1\n");
    w.prepare("data", false);
    w.train("data", "run", &[]);
    let (data, run) = (w.s("data"), w.s("run"));
    let table = w.run(&["eval", "--data", &data, "--run", &run, "--sweep", "margin", "0.05..0.4"]);
    let report = json(&w.path("run/sweep_margin.json"));
    let values: Vec<f64> = report["rows"].as_array().unwrap().iter().map(|r| r["value"].as_f64().unwrap()).collect();
    assert_eq!(values, vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4]);
    assert_eq!(table.lines().count(), 1 + 8);
}

#[test]
fn memorized_three_user_catalogue_has_full_recall() {
    let w = Work::new("clusters = 2\n");
    let mut body = String::from("user\titem\trating\n");
    for u in 0..3 {
        for i in 0..6 {
            body.push_str(&format!("u{u}\ti{}\t5\n", u * 6 + i));
        }
    }
    fs::write(w.path("three.tsv"), body).unwrap();
    let input = w.s("three.tsv");
    let data = w.s("data");
    w.run(&["prepare", "--input", &input, "--out", &data]);
    w.train("data", "run", &[]);
    let run = w.s("run");
    w.run(&["eval", "--data", &data, "--run", &run]);
    let m = &json(&w.path("run/metrics.json"))["rows"][0];
    assert_eq!(m["recall@20"], 1.0);
    assert_eq!(m["users_evaluated"], 3);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let w = Work::new("");
    let code = |args: &[&str]| hdrm(args).status.code().unwrap();

    fs::write(w.path("bad.toml"), "learning_rate = 0.1\n").unwrap();
    let bad = w.s("bad.toml");
    assert_eq!(code(&["--config", &bad, "eval"]), 2);
    assert_eq!(code(&["train", "--ablate", "everything"]), 2);

    let missing = w.s("nowhere");
    assert_eq!(code(&["eval", "--run", &missing]), 3);
    fs::write(w.path("broken.tsv"), "u1\ti1\t5\nu2\ti2\tfive\n").unwrap();
    let broken = w.s("broken.tsv");
    let out = w.s("out");
    assert_eq!(code(&["prepare", "--input", &broken, "--out", &out]), 3);
    w.prepare("data", false);
    let data = w.s("data");
    let stderr = String::from_utf8(hdrm(&["train", "--data", &data, "--run", &missing, "--stage", "2"]).stderr).unwrap();
    assert!(stderr.contains("hdrm train --stage 1"), "{stderr}");

    fs::write(w.path("huge.toml"), config_with("init_std = 1e308\n")).unwrap();
    let huge = w.s("huge.toml");
    let run = w.s("run");
    assert_eq!(code(&["--config", &huge, "train", "--data", &data, "--run", &run]), 4);
}
