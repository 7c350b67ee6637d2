//! Directional forward noising, the denoising nets and the deterministic
//! reverse chain.
//!
//! All states live in the spatial tangent space at the origin. The forward
//! process has no closed-form jump, so every noised state is produced by
//! iterating single steps.

mod net;

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::error::{HdrmError, Result};
use crate::manifold::norm_sq;

pub use net::{time_embedding, DenoiserNet, ForwardCache, NetRole, TIME_EMBED_DIM};

pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 1e-2;

/// `E|N(0,1)| = √(2/π)`.
pub fn half_normal_mean() -> f64 {
    (2.0 / PI).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// `T` betas spaced linearly in `[beta_min, beta_max]`.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(HdrmError::Config("diffusion steps must be >= 1".into()));
        }
        if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
            return Err(HdrmError::Config(format!(
                "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }
        let beta = (0..steps)
            .map(|s| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * s as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(HdrmError::Config("every beta must lie in (0, 1)".into()));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(NoiseSchedule { beta, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `β_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    /// Stride length `δ`.
    pub delta: f64,
    /// Stride growth-rate control `r`.
    pub r: f64,
    pub steps: usize,
    pub inference_steps: usize,
    pub eps_norm: f64,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            delta: 0.01,
            r: 1.0,
            steps: 30,
            inference_steps: 30,
            eps_norm: 1e-8,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) || !(self.r > 0.0) {
            return Err(HdrmError::Config(format!(
                "need delta >= 0 and r > 0, got delta={} r={}",
                self.delta, self.r
            )));
        }
        if self.steps == 0 || self.inference_steps == 0 || self.inference_steps > self.steps {
            return Err(HdrmError::Config(format!(
                "need 1 <= inference_steps ({}) <= steps ({})",
                self.inference_steps, self.steps
            )));
        }
        if !(self.eps_norm > 0.0) {
            return Err(HdrmError::Config("eps_norm must be > 0".into()));
        }
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max).map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }
}

/// Componentwise `|N(0,1)|` draws.
pub fn sample_poincare_noise<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g.abs()
        })
        .collect()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-node `sign(log_o(μ_{a(node)}))`, one row per clustered node.
pub fn direction_signs(model: &ClusterModel) -> Array2<f64> {
    let m = &model.manifold;
    let per_center: Vec<Vec<f64>> = model
        .centers
        .iter()
        .map(|c| m.log_origin(c).into_iter().map(sign).collect())
        .collect();
    let n = m.dim;
    let mut out = Array2::zeros((model.assignments.len(), n));
    for (node, &k) in model.assignments.iter().enumerate() {
        for (c, v) in per_center[k].iter().enumerate() {
            out[[node, c]] = *v;
        }
    }
    out
}

/// Forward process parameters bound to a curvature magnitude `k = |κ|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardProcess {
    pub config: DiffusionConfig,
    pub schedule: NoiseSchedule,
    pub k: f64,
}

impl ForwardProcess {
    pub fn new(config: DiffusionConfig, k: f64) -> Result<Self> {
        config.validate()?;
        if !(k > 0.0) {
            return Err(HdrmError::Config(format!("curvature magnitude must be > 0, got {k}")));
        }
        Ok(ForwardProcess {
            schedule: config.schedule()?,
            config,
            k,
        })
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    /// `δ·tanh(√k·ζ/r)·z` with `ζ = 1/(k‖z‖)`; zero below `eps_norm`.
    pub fn stride(&self, z: &[f64]) -> Vec<f64> {
        let norm = norm_sq(z).sqrt();
        if norm < self.config.eps_norm || self.config.delta == 0.0 {
            return vec![0.0; z.len()];
        }
        let zeta = 1.0 / (self.k * norm);
        let coef = self.config.delta * (self.k.sqrt() * zeta / self.config.r).tanh();
        z.iter().map(|v| coef * v).collect()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(HdrmError::Config(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    fn combine(&self, z: &[f64], t: usize, signs: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        let b = self.schedule.beta(t);
        let (keep, scale) = ((1.0 - b).sqrt(), b.sqrt());
        let stride = self.stride(z);
        let out: Vec<f64> = (0..z.len())
            .map(|c| keep * z[c] + scale * signs[c] * noise[c] + stride[c])
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(HdrmError::Numeric(format!("forward step {t} produced a non-finite state")));
        }
        Ok(out)
    }

    /// One noising step `z_{t-1} → z_t`.
    pub fn step<R: Rng + ?Sized>(&self, z: &[f64], t: usize, signs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check_t(t)?;
        HdrmError::check_len(z.len(), signs.len())?;
        let noise = sample_poincare_noise(z.len(), rng);
        self.combine(z, t, signs, &noise)
    }

    /// `t_target` single steps from `z₀`.
    pub fn chain<R: Rng + ?Sized>(&self, z0: &[f64], t_target: usize, signs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        if t_target > self.steps() {
            return Err(HdrmError::Config(format!("step {t_target} outside 0..={}", self.steps())));
        }
        let mut z = z0.to_vec();
        for t in 1..=t_target {
            z = self.step(&z, t, signs, rng)?;
        }
        Ok(z)
    }

    /// Step with the noise replaced by its expectation.
    pub fn mean_step(&self, z: &[f64], t: usize, signs: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t)?;
        HdrmError::check_len(z.len(), signs.len())?;
        let noise = vec![half_normal_mean(); z.len()];
        self.combine(z, t, signs, &noise)
    }

    /// Deterministic path `z₀ → z_t` through [`Self::mean_step`].
    pub fn mean_chain(&self, z0: &[f64], t_target: usize, signs: &[f64]) -> Result<Vec<f64>> {
        let mut z = z0.to_vec();
        for t in 1..=t_target.min(self.steps()) {
            z = self.mean_step(&z, t, signs)?;
        }
        Ok(z)
    }

    /// Evenly spaced inference timesteps from `T` down to `1`.
    pub fn inference_timesteps(&self) -> Vec<usize> {
        let (t, s) = (self.steps(), self.config.inference_steps);
        (0..s).map(|k| (t * (s - k)).div_ceil(s)).collect()
    }

    /// Deterministic reverse chain: predict `ẑ₀` at every inference step,
    /// then move the prediction forward along the mean path to the next
    /// step. `z_start` holds the states at step `T`.
    pub fn reverse_chain(&self, net: &DenoiserNet, z_start: ArrayView2<'_, f64>, signs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if z_start.dim() != signs.dim() {
            return Err(HdrmError::Dimension {
                expected: z_start.len(),
                got: signs.len(),
            });
        }
        let steps = self.inference_timesteps();
        let mut z = z_start.to_owned();
        let mut z0 = z.clone();
        for (k, &t) in steps.iter().enumerate() {
            z0 = net.predict(z.view(), &vec![t; z.nrows()])?;
            if z0.iter().any(|v| !v.is_finite()) {
                return Err(HdrmError::Numeric(format!("denoiser output non-finite at step {t}")));
            }
            if let Some(&next) = steps.get(k + 1) {
                for r in 0..z.nrows() {
                    let row = self.mean_chain(&z0.row(r).to_vec(), next, &signs.row(r).to_vec())?;
                    z.row_mut(r).assign(&ndarray::Array1::from(row));
                }
            }
        }
        Ok(z0)
    }

    /// Clean states pushed to step `T` along the mean path, then denoised.
    pub fn denoise_states(&self, net: &DenoiserNet, z0: ArrayView2<'_, f64>, signs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut start = Array2::zeros(z0.dim());
        for r in 0..z0.nrows() {
            let row = self.mean_chain(&z0.row(r).to_vec(), self.steps(), &signs.row(r).to_vec())?;
            start.row_mut(r).assign(&ndarray::Array1::from(row));
        }
        self.reverse_chain(net, start.view(), signs)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Both denoisers, the schedule they were trained with and the per-node
/// direction signs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionCheckpoint {
    pub version: u32,
    pub config: DiffusionConfig,
    pub k: f64,
    pub schedule: NoiseSchedule,
    pub user_net: DenoiserNet,
    pub item_net: DenoiserNet,
    pub user_signs: Array2<f64>,
    pub item_signs: Array2<f64>,
}

impl DiffusionCheckpoint {
    pub fn process(&self) -> Result<ForwardProcess> {
        ForwardProcess::new(self.config, self.k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::persist::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: DiffusionCheckpoint = crate::persist::read_json(path)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(HdrmError::Serde(format!(
                "{}: checkpoint version {} is not supported",
                path.display(),
                ck.version
            )));
        }
        Ok(ck)
    }
}
