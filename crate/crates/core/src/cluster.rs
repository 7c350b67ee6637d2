//! Hyperbolic k-means with Karcher-mean centers, and the geodesic LCA point.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HdrmError, Result};
use crate::manifold::{Manifold, Model};

/// Inner Karcher-mean loop limits.
pub const KARCHER_MAX_ITER: usize = 50;
pub const KARCHER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub clusters: usize,
    pub max_iter: usize,
    /// Stop when the objective improves by less than this.
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            clusters: 10,
            max_iter: 100,
            tol: 1e-10,
            restarts: 10,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.max_iter == 0 || self.restarts == 0 {
            return Err(HdrmError::Config("clusters, max_iter and restarts must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(HdrmError::Config(format!("kmeans tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub manifold: Manifold,
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// `Σ d(e_i, μ_{a(i)})²` at the returned state.
    pub objective: f64,
    /// Objective after every assignment and every center update of the
    /// selected restart.
    pub history: Vec<f64>,
}

fn nearest(m: &Manifold, centers: &[Vec<f64>], p: &[f64], current: Option<usize>) -> (usize, f64) {
    let mut best = current.unwrap_or(0);
    let mut best_d = m.sq_dist(p, &centers[best]);
    for (k, c) in centers.iter().enumerate() {
        let d = m.sq_dist(p, c);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    (best, best_d)
}

fn objective(m: &Manifold, points: ArrayView2<'_, f64>, centers: &[Vec<f64>], assign: &[usize]) -> f64 {
    (0..points.nrows())
        .into_par_iter()
        .map(|r| m.sq_dist(points.row(r).as_slice().unwrap(), &centers[assign[r]]))
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Karcher mean by tangent averaging, started at `start`.
pub fn karcher_mean(m: &Manifold, members: &[&[f64]], start: &[f64]) -> Vec<f64> {
    let mut mu = start.to_vec();
    let n = members.len() as f64;
    for _ in 0..KARCHER_MAX_ITER {
        let mut v = vec![0.0; mu.len()];
        for p in members {
            for (a, b) in v.iter_mut().zip(m.log(&mu, p)) {
                *a += b / n;
            }
        }
        let step = m.tangent_norm(&mu, &v);
        if !step.is_finite() {
            break;
        }
        mu = m.exp(&mu, &v);
        if step < KARCHER_TOL {
            break;
        }
    }
    mu
}

fn plus_plus_seed(m: &Manifold, points: ArrayView2<'_, f64>, c: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.nrows();
    let row = |r: usize| points.row(r).to_vec();
    let mut centers = vec![row(rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|r| m.sq_dist(&row(r), &centers[0])).collect();
    while centers.len() < c {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (r, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = r;
                    break;
                }
                target -= d;
            }
            // guard against rounding landing on a zero-weight tail
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|d| *d > 0.0).unwrap();
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let new = row(pick);
        for (r, d) in d2.iter_mut().enumerate() {
            *d = d.min(m.sq_dist(&row(r), &new));
        }
        centers.push(new);
    }
    centers
}

fn lloyd(
    m: &Manifold,
    points: ArrayView2<'_, f64>,
    cfg: &KMeansConfig,
    rng: &mut ChaCha8Rng,
) -> ClusterModel {
    let n = points.nrows();
    let c = cfg.clusters;
    let mut centers = plus_plus_seed(m, points, c, rng);
    let mut assign: Vec<usize> = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..cfg.max_iter {
        let prev = assign.clone();
        let nearest_all: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|r| {
                let cur = (prev[r] != usize::MAX).then_some(prev[r]);
                nearest(m, &centers, points.row(r).as_slice().unwrap(), cur)
            })
            .collect();
        assign = nearest_all.iter().map(|(k, _)| *k).collect();
        let mut dist: Vec<f64> = nearest_all.iter().map(|(_, d)| *d).collect();

        // empty clusters take the point farthest from its center
        let mut counts = vec![0usize; c];
        for &a in &assign {
            counts[a] += 1;
        }
        for k in 0..c {
            if counts[k] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&r| counts[assign[r]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
            if let Some(r) = far {
                counts[assign[r]] -= 1;
                assign[r] = k;
                counts[k] = 1;
                centers[k] = points.row(r).to_vec();
                dist[r] = 0.0;
            }
        }
        let after_assign = objective(m, points, &centers, &assign);
        history.push(after_assign);
        if assign == prev {
            break;
        }

        for (k, center) in centers.iter_mut().enumerate() {
            let members: Vec<&[f64]> = (0..n)
                .filter(|&r| assign[r] == k)
                .map(|r| points.row(r).to_slice().unwrap())
                .collect();
            if members.is_empty() {
                continue;
            }
            let cost = |mu: &[f64]| members.iter().map(|p| m.sq_dist(p, mu)).sum::<f64>();
            let old = cost(center);
            let mut cand = karcher_mean(m, &members, center);
            // backtrack along the geodesic until the cluster cost does not rise
            let mut cand_cost = cost(&cand);
            let dir = m.log(center, &cand);
            let mut scale = 1.0;
            while !(cand_cost <= old) && scale > 1e-6 {
                scale *= 0.5;
                let v: Vec<f64> = dir.iter().map(|x| x * scale).collect();
                cand = m.exp(center, &v);
                cand_cost = cost(&cand);
            }
            if cand_cost <= old {
                *center = cand;
            }
        }
        let after_update = objective(m, points, &centers, &assign);
        history.push(after_update);
        if after_assign - after_update < cfg.tol && history.len() > 2 {
            // centers barely moved; one more assignment pass settles it
            let settled: Vec<usize> = (0..n)
                .map(|r| nearest(m, &centers, points.row(r).as_slice().unwrap(), Some(assign[r])).0)
                .collect();
            if settled == assign {
                break;
            }
        }
    }
    let objective = *history.last().unwrap_or(&0.0);
    ClusterModel {
        manifold: *m,
        centers,
        assignments: assign,
        objective,
        history,
    }
}

fn distinct_rows(points: ArrayView2<'_, f64>) -> usize {
    let mut seen = HashSet::new();
    for row in points.rows() {
        seen.insert(row.iter().map(|v| v.to_bits()).collect::<Vec<u64>>());
    }
    seen.len()
}

/// Clusters manifold points (one per row, ambient coordinates).
pub fn kmeans(m: &Manifold, points: ArrayView2<'_, f64>, cfg: &KMeansConfig, seed: u64) -> Result<ClusterModel> {
    cfg.validate()?;
    if points.ncols() != m.ambient_len() {
        return Err(HdrmError::Dimension {
            expected: m.ambient_len(),
            got: points.ncols(),
        });
    }
    let points = points.as_standard_layout();
    let points = points.view();
    let distinct = distinct_rows(points);
    if cfg.clusters > distinct {
        return Err(HdrmError::Config(format!(
            "{} clusters requested but only {distinct} distinct points",
            cfg.clusters
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusterModel> = None;
    for _ in 0..cfg.restarts {
        let run = lloyd(m, points, cfg, &mut rng);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let best = best.unwrap();
    if !best.objective.is_finite() {
        return Err(HdrmError::Numeric("kmeans objective is not finite".into()));
    }
    Ok(best)
}

impl ClusterModel {
    pub fn clusters(&self) -> usize {
        self.centers.len()
    }

    pub fn center_of(&self, node: usize) -> Result<&[f64]> {
        self.assignments
            .get(node)
            .map(|&k| self.centers[k].as_slice())
            .ok_or_else(|| HdrmError::Data(format!("node {node} has no cluster assignment")))
    }

    /// `log_{μ_{a(node)}}(e)`.
    pub fn log_at_center(&self, node: usize, e: &[f64]) -> Result<Vec<f64>> {
        let mu = self.center_of(node)?;
        Ok(self.manifold.log(mu, e))
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.centers.len()];
        for &a in &self.assignments {
            out[a] += 1;
        }
        out
    }

    /// `node_id,cluster_id` lines.
    pub fn write_assignments_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| HdrmError::io(path, e))?);
        let mut body = String::from("node_id,cluster_id\n");
        for (node, k) in self.assignments.iter().enumerate() {
            body.push_str(&format!("{node},{k}\n"));
        }
        w.write_all(body.as_bytes()).map_err(|e| HdrmError::io(path, e))
    }

    /// `cluster_id,c0,c1,...` lines with ambient center coordinates.
    pub fn write_centers_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| HdrmError::io(path, e))?);
        let dims = self.centers.first().map_or(0, Vec::len);
        let mut body = String::from("cluster_id");
        for d in 0..dims {
            body.push_str(&format!(",c{d}"));
        }
        body.push('\n');
        for (k, c) in self.centers.iter().enumerate() {
            body.push_str(&k.to_string());
            for v in c {
                body.push_str(&format!(",{v:e}"));
            }
            body.push('\n');
        }
        w.write_all(body.as_bytes()).map_err(|e| HdrmError::io(path, e))
    }
}

/// Point of the geodesic segment `x → y` closest to the origin. A coarse
/// grid over the segment parameter brackets the minimum, golden-section
/// search refines it to `tol`.
pub fn lca(m: &Manifold, x: &[f64], y: &[f64], grid: usize, tol: f64) -> Vec<f64> {
    let v = m.log(x, y);
    let o = m.origin();
    let at = |t: f64| {
        let tv: Vec<f64> = v.iter().map(|c| c * t).collect();
        m.exp(x, &tv)
    };
    let f = |t: f64| m.dist(&o, &at(t));
    let grid = grid.max(2);
    let (best, _) = (0..=grid)
        .map(|g| (g, f(g as f64 / grid as f64)))
        .fold((0, f64::INFINITY), |acc, (g, d)| if d < acc.1 { (g, d) } else { acc });
    let step = 1.0 / grid as f64;
    let (mut a, mut b) = (
        (best as f64 - 1.0).max(0.0) * step,
        (best as f64 + 1.0).min(grid as f64) * step,
    );
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol.max(1e-15) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    // never return something worse than the grid winner or the endpoints
    let candidates = [0.5 * (a + b), best as f64 * step];
    let t = candidates
        .iter()
        .copied()
        .min_by(|p, q| f(*p).total_cmp(&f(*q)))
        .unwrap();
    let mut p = at(t);
    if m.model == Model::Lorentz {
        m.project_in_place(&mut p);
    }
    p
}
