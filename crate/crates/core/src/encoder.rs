//! Hyperbolic graph-convolutional encoder.
//!
//! Parameters are Euclidean vectors `x` lifted into the tangent space at the
//! origin. Each layer applies `z ← z + mean_{w ∈ N(v)} z_w` over the train
//! bipartite graph (`(I + D⁻¹A)` as an operator), layers `0..=K` are
//! sum-pooled, and `exp_o` maps the pooled state onto the manifold. The
//! operator is linear, so the backward pass is the transposed sum.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::error::{HdrmError, Result};
use crate::manifold::Manifold;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub dim: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(HdrmError::Config("encoder needs at least one layer".into()));
        }
        if self.dim == 0 {
            return Err(HdrmError::Config("embedding dimension must be positive".into()));
        }
        Ok(())
    }
}

/// Learnable Euclidean parameters: user rows first, then item rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub num_users: usize,
    pub num_items: usize,
    pub params: Array2<f64>,
}

impl EmbeddingTable {
    /// I.i.d. `N(0, init_std²)` entries.
    pub fn init(num_users: usize, num_items: usize, dim: usize, init_std: f64, seed: u64) -> Result<Self> {
        if !(init_std >= 0.0) || !init_std.is_finite() {
            return Err(HdrmError::Config(format!("init_std must be finite and >= 0, got {init_std}")));
        }
        let mut params = Array2::zeros((num_users + num_items, dim));
        if init_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, init_std).expect("validated std");
            params.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        Ok(EmbeddingTable {
            num_users,
            num_items,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.ncols()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn users(&self) -> ArrayView2<'_, f64> {
        self.params.slice(ndarray::s![..self.num_users, ..])
    }

    pub fn items(&self) -> ArrayView2<'_, f64> {
        self.params.slice(ndarray::s![self.num_users.., ..])
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

/// The bipartite train graph over `users ++ items` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_users: usize,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    pub fn from_dataset(ds: &InteractionDataset) -> Self {
        let nu = ds.num_users();
        let mut neighbors: Vec<Vec<usize>> = ds.user_adjacency().iter().map(|items| items.iter().map(|i| nu + i).collect()).collect();
        neighbors.extend(ds.item_adjacency().iter().cloned());
        Graph {
            num_users: nu,
            neighbors,
        }
    }

    /// A graph with no edges.
    pub fn empty(num_users: usize, num_items: usize) -> Self {
        Graph {
            num_users,
            neighbors: vec![Vec::new(); num_users + num_items],
        }
    }

    /// Builds a graph from user/item edges.
    pub fn from_edges(num_users: usize, num_items: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Graph::empty(num_users, num_items);
        for &(u, i) in edges {
            g.neighbors[u].push(num_users + i);
            g.neighbors[num_users + i].push(u);
        }
        for list in &mut g.neighbors {
            list.sort_unstable();
            list.dedup();
        }
        g
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    /// One aggregation layer: `z_v + (1/|N_v|) Σ_{w∈N_v} z_w`; isolated
    /// nodes pass through.
    pub fn aggregate(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = z.to_owned();
        for (v, nbrs) in self.neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let w = 1.0 / nbrs.len() as f64;
            let mut row = out.row_mut(v);
            for &n in nbrs {
                row.scaled_add(w, &z.row(n));
            }
        }
        out
    }

    /// Transpose of [`Graph::aggregate`]:
    /// `g_v + Σ_{w∈N_v} g_w/|N_w|`.
    pub fn aggregate_transpose(&self, g: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = g.to_owned();
        for (v, nbrs) in self.neighbors.iter().enumerate() {
            let mut row = out.row_mut(v);
            for &n in nbrs {
                row.scaled_add(1.0 / self.neighbors[n].len() as f64, &g.row(n));
            }
        }
        out
    }
}

/// Tangent states and manifold points for every node.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub num_users: usize,
    /// Pooled spatial tangent states at the origin.
    pub z: Array2<f64>,
    /// `exp_o(z)` rows.
    pub e: Array2<f64>,
}

impl EncoderOutput {
    pub fn z_user(&self, u: usize) -> ndarray::ArrayView1<'_, f64> {
        self.z.row(u)
    }

    pub fn z_item(&self, i: usize) -> ndarray::ArrayView1<'_, f64> {
        self.z.row(self.num_users + i)
    }
}

/// Sum-pooled tangent states `Σ_{k=0..K} (I + D⁻¹A)^k x`.
pub fn encode_tangent(params: ArrayView2<'_, f64>, graph: &Graph, layers: usize) -> Result<Array2<f64>> {
    HdrmError::check_len(graph.num_nodes(), params.nrows())?;
    let mut cur = params.to_owned();
    let mut pooled = cur.clone();
    for k in 1..=layers {
        cur = graph.aggregate(cur.view());
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(HdrmError::Numeric(format!("non-finite tangent state at encoder layer {k}")));
        }
        pooled += &cur;
    }
    Ok(pooled)
}

/// Maps each spatial tangent row onto the manifold with `exp_o`.
pub fn to_manifold(manifold: &Manifold, z: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut e = Array2::zeros((z.nrows(), manifold.ambient_len()));
    for (src, mut dst) in z.axis_iter(Axis(0)).zip(e.axis_iter_mut(Axis(0))) {
        let p = manifold.exp_origin(src.as_slice().expect("row-major"));
        dst.assign(&ndarray::ArrayView1::from(&p));
    }
    e
}

pub fn encode(table: &EmbeddingTable, graph: &Graph, layers: usize, manifold: &Manifold) -> Result<EncoderOutput> {
    HdrmError::check_len(manifold.dim, table.dim())?;
    let z = encode_tangent(table.params.view(), graph, layers)?;
    let e = to_manifold(manifold, z.view());
    Ok(EncoderOutput {
        num_users: table.num_users,
        z,
        e,
    })
}

/// Gradient w.r.t. the parameter table given the gradient w.r.t. the pooled
/// tangent states: `Σ_k ((I + D⁻¹A)ᵀ)^k g`.
pub fn encode_backward(grad_z: ArrayView2<'_, f64>, graph: &Graph, layers: usize) -> Result<Array2<f64>> {
    HdrmError::check_len(graph.num_nodes(), grad_z.nrows())?;
    let mut cur = grad_z.to_owned();
    let mut total = cur.clone();
    for _ in 0..layers {
        cur = graph.aggregate_transpose(cur.view());
        total += &cur;
    }
    Ok(total)
}

/// Writes `node_type,node_id,c0..cn` rows for users then items.
pub fn write_embedding_csv(path: &Path, num_users: usize, rows: ArrayView2<'_, f64>) -> Result<()> {
    let io = |e| HdrmError::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header: Vec<String> = (0..rows.ncols()).map(|c| format!("c{c}")).collect();
    writeln!(w, "node_type,node_id,{}", header.join(",")).map_err(io)?;
    for (idx, row) in rows.axis_iter(Axis(0)).enumerate() {
        let (kind, id) = if idx < num_users {
            ("user", idx)
        } else {
            ("item", idx - num_users)
        };
        let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{kind},{id},{}", vals.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}
