//! Time-conditioned two-hidden-layer denoiser with explicit backprop.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HdrmError, Result};

pub const TIME_EMBED_DIM: usize = 32;

/// Which side of the interaction graph a net denoises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetRole {
    User,
    Item,
}

/// Sinusoidal embedding of a diffusion step.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let freq = 10_000f64.powf(-(j as f64) / half.max(1) as f64);
        out[j] = (t as f64 * freq).sin();
        out[half + j] = (t as f64 * freq).cos();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserNet {
    pub role: NetRole,
    dim: usize,
    hidden: usize,
    time_dim: usize,
    /// `W1, b1, W2, b2, W3, b3`, row-major, concatenated.
    params: Vec<f64>,
}

/// Activations kept by [`DenoiserNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
}

struct Layout {
    w1: (usize, usize, usize),
    b1: usize,
    w2: (usize, usize, usize),
    b2: usize,
    w3: (usize, usize, usize),
    b3: usize,
    len: usize,
}

impl DenoiserNet {
    fn layout(&self) -> Layout {
        let (n, h, i) = (self.dim, self.hidden, self.dim + self.time_dim);
        let w1 = (0, h, i);
        let b1 = h * i;
        let w2 = (b1 + h, h, h);
        let b2 = w2.0 + h * h;
        let w3 = (b2 + h, n, h);
        let b3 = w3.0 + n * h;
        Layout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + n,
        }
    }

    pub fn param_count(dim: usize, hidden: usize, time_dim: usize) -> usize {
        let i = dim + time_dim;
        hidden * i + hidden + hidden * hidden + hidden + dim * hidden + dim
    }

    /// All-zero parameters.
    pub fn zeros(role: NetRole, dim: usize, hidden: usize, time_dim: usize) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(HdrmError::Config("denoiser dim and hidden must be >= 1".into()));
        }
        Ok(DenoiserNet {
            role,
            dim,
            hidden,
            time_dim,
            params: vec![0.0; Self::param_count(dim, hidden, time_dim)],
        })
    }

    /// Weights `N(0, 1/fan_in)`, zero biases.
    pub fn init(role: NetRole, dim: usize, hidden: usize, time_dim: usize, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(role, dim, hidden, time_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = net.layout();
        for (off, rows, cols) in [l.w1, l.w2, l.w3] {
            let normal = Normal::new(0.0, (1.0 / cols as f64).sqrt()).unwrap();
            for p in &mut net.params[off..off + rows * cols] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(net)
    }

    pub fn from_params(role: NetRole, dim: usize, hidden: usize, time_dim: usize, params: Vec<f64>) -> Result<Self> {
        let net = Self::zeros(role, dim, hidden, time_dim)?;
        HdrmError::check_len(net.params.len(), params.len())?;
        Ok(DenoiserNet { params, ..net })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn mat(&self, (off, rows, cols): (usize, usize, usize)) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[off..off + rows * cols]).unwrap()
    }

    fn vec(&self, off: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[off..off + len])
    }

    fn input(&self, z: ArrayView2<'_, f64>, ts: &[usize]) -> Result<Array2<f64>> {
        HdrmError::check_len(self.dim, z.ncols())?;
        HdrmError::check_len(z.nrows(), ts.len())?;
        let mut emb = Array2::zeros((ts.len(), self.time_dim));
        for (r, &t) in ts.iter().enumerate() {
            emb.row_mut(r).assign(&Array1::from(time_embedding(t, self.time_dim)));
        }
        Ok(concatenate(Axis(1), &[z, emb.view()]).unwrap())
    }

    /// Predicts `ẑ₀` for each row of `z` at its step `ts[row]`.
    pub fn forward(&self, z: ArrayView2<'_, f64>, ts: &[usize]) -> Result<(Array2<f64>, ForwardCache)> {
        let l = self.layout();
        let input = self.input(z, ts)?;
        let h1 = (input.dot(&self.mat(l.w1).t()) + self.vec(l.b1, self.hidden)).mapv(f64::tanh);
        let h2 = (h1.dot(&self.mat(l.w2).t()) + self.vec(l.b2, self.hidden)).mapv(f64::tanh);
        let out = (h2.dot(&self.mat(l.w3).t()) + self.vec(l.b3, self.dim))
            .as_standard_layout()
            .into_owned();
        Ok((out, ForwardCache { input, h1, h2 }))
    }

    /// Forward without keeping activations.
    pub fn predict(&self, z: ArrayView2<'_, f64>, ts: &[usize]) -> Result<Array2<f64>> {
        Ok(self.forward(z, ts)?.0)
    }

    /// Gradients of `Σ upstream ⊙ output` with respect to the flat
    /// parameters and to `z`.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let l = self.layout();
        if cache.input.ncols() != self.dim + self.time_dim || cache.h1.ncols() != self.hidden {
            return Err(HdrmError::Config("forward cache does not belong to this net".into()));
        }
        if upstream.dim() != (cache.input.nrows(), self.dim) {
            return Err(HdrmError::Dimension {
                expected: cache.input.nrows() * self.dim,
                got: upstream.len(),
            });
        }
        let mut grads = vec![0.0; l.len];
        let mut put = |off: usize, a: &Array2<f64>| {
            for (g, v) in grads[off..off + a.len()].iter_mut().zip(a.iter()) {
                *g = *v;
            }
        };
        put(l.w3.0, &upstream.t().dot(&cache.h2));
        put(l.b3, &upstream.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let g_a2 = upstream.dot(&self.mat(l.w3)) * cache.h2.mapv(|h| 1.0 - h * h);
        put(l.w2.0, &g_a2.t().dot(&cache.h1));
        put(l.b2, &g_a2.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let g_a1 = g_a2.dot(&self.mat(l.w2)) * cache.h1.mapv(|h| 1.0 - h * h);
        put(l.w1.0, &g_a1.t().dot(&cache.input));
        put(l.b1, &g_a1.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let g_in = g_a1.dot(&self.mat(l.w1));
        Ok((grads, g_in.slice(s![.., ..self.dim]).to_owned()))
    }
}
