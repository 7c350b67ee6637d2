//! Scores and losses.
//!
//! Scores are computed from spatial tangent states at the origin: the
//! geometry maps both states with `exp_o` and takes the squared geodesic
//! distance. Gradients are returned with respect to those tangent states, so
//! the encoder and the denoisers never see manifold coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{HdrmError, Result};
use crate::manifold::{acosh1p, dot, lorentz_inner, norm_sq, sinhc, tanhc, x_over_sinh, Manifold, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Margin `m` of the ranking hinge.
    pub margin: f64,
    /// Balance `α` between ranking and reconstruction.
    pub alpha: f64,
    /// Reweighting exponent `γ`.
    pub gamma: f64,
    pub fermi_q: f64,
    pub fermi_t: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.2,
            alpha: 0.3,
            gamma: 0.4,
            fermi_q: 2.0,
            fermi_t: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(HdrmError::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(HdrmError::Config(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if !(self.gamma >= 0.0) {
            return Err(HdrmError::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.fermi_t > 0.0) || !self.fermi_q.is_finite() {
            return Err(HdrmError::Config("fermi_t must be > 0 and fermi_q finite".into()));
        }
        Ok(())
    }
}

/// Where scores are measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Geometry {
    Hyperbolic(Manifold),
    /// Flat chart used by the "without hyperbolic space" ablation.
    Euclidean,
}

impl Geometry {
    /// The point a tangent state is scored at.
    pub fn embed(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Geometry::Hyperbolic(m) => m.exp_origin(z),
            Geometry::Euclidean => z.to_vec(),
        }
    }

    /// Squared distance between already-embedded points.
    pub fn sq_dist_embedded(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Geometry::Hyperbolic(m) => m.sq_dist(a, b),
            Geometry::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        }
    }

    /// `d(exp_o(a), exp_o(b))²`.
    pub fn sq_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        self.sq_dist_embedded(&self.embed(a), &self.embed(b))
    }

    /// Squared distance and its gradients with respect to both tangent
    /// states.
    pub fn sq_dist_grad(&self, a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        match self {
            Geometry::Euclidean => {
                let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                let ga: Vec<f64> = diff.iter().map(|d| 2.0 * d).collect();
                let gb: Vec<f64> = ga.iter().map(|g| -g).collect();
                (norm_sq(&diff), ga, gb)
            }
            Geometry::Hyperbolic(m) => {
                let ea = m.exp_origin(a);
                let eb = m.exp_origin(b);
                let k = m.k();
                let u = excess(m, &ea, &eb);
                let acosh = acosh1p(u);
                let r2 = 1.0 / k;
                let d2 = r2 * acosh * acosh;
                // d(d²)/du = 2R²·a/sinh(a), smooth at u = 0
                let dd2_du = 2.0 * r2 * x_over_sinh(acosh);
                let (gea, geb) = match m.model {
                    Model::Lorentz => {
                        let grad_a = minkowski_grad(k, &eb);
                        let grad_b = minkowski_grad(k, &ea);
                        (grad_a, grad_b)
                    }
                    Model::Poincare => poincare_excess_grad(k, &ea, &eb),
                };
                let ga = exp_origin_vjp(m, a, &gea);
                let gb = exp_origin_vjp(m, b, &geb);
                (
                    d2,
                    ga.into_iter().map(|g| dd2_du * g).collect(),
                    gb.into_iter().map(|g| dd2_du * g).collect(),
                )
            }
        }
    }
}

fn excess(m: &Manifold, x: &[f64], y: &[f64]) -> f64 {
    match m.model {
        Model::Lorentz => {
            let alpha = -m.k() * lorentz_inner(x, y);
            if alpha > 2.0 {
                alpha - 1.0
            } else {
                let mut diff = 0.0;
                for (i, (a, b)) in x.iter().zip(y).enumerate() {
                    let d = a - b;
                    diff += if i == 0 { -d * d } else { d * d };
                }
                (0.5 * m.k() * diff).max(0.0)
            }
        }
        Model::Poincare => {
            let k = m.k();
            let diff: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (2.0 * k * diff / ((1.0 - k * norm_sq(x)) * (1.0 - k * norm_sq(y)))).max(0.0)
        }
    }
}

/// Euclidean partials of `-k⟨x, other⟩_L` with respect to `x`.
fn minkowski_grad(k: f64, other: &[f64]) -> Vec<f64> {
    other
        .iter()
        .enumerate()
        .map(|(i, o)| if i == 0 { k * o } else { -k * o })
        .collect()
}

/// Partials of `2k‖x-y‖²/((1-k‖x‖²)(1-k‖y‖²))` with respect to `x` and `y`.
fn poincare_excess_grad(k: f64, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let ax = 1.0 - k * norm_sq(x);
    let ay = 1.0 - k * norm_sq(y);
    let c = 4.0 * k / (ax * ay);
    let gx = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| c * ((xi - yi) + d2 * k / ax * xi))
        .collect();
    let gy = y
        .iter()
        .zip(x)
        .map(|(yi, xi)| c * ((yi - xi) + d2 * k / ay * yi))
        .collect();
    (gx, gy)
}

/// `(s cosh s − sinh s)/s³`.
fn sinhc_slope(s: f64) -> f64 {
    if s.abs() < 1e-3 {
        1.0 / 3.0 + s * s / 30.0
    } else {
        (s * s.cosh() - s.sinh()) / (s * s * s)
    }
}

/// `(s sech² s − tanh s)/s³`.
fn tanhc_slope(s: f64) -> f64 {
    if s.abs() < 1e-3 {
        -2.0 / 3.0 + 8.0 * s * s / 15.0
    } else {
        let t = s.tanh();
        (s * (1.0 - t * t) - t) / (s * s * s)
    }
}

/// Vector-Jacobian product of `z ↦ exp_o(z)` at `z` with upstream `g`
/// (given in manifold coordinates).
fn exp_origin_vjp(m: &Manifold, z: &[f64], g: &[f64]) -> Vec<f64> {
    let k = m.k();
    let s = m.sqrt_k() * norm_sq(z).sqrt();
    match m.model {
        Model::Lorentz => {
            let (g0, gs) = (g[0], &g[1..]);
            let shc = sinhc(s);
            let zg = dot(z, gs);
            let c = g0 * m.sqrt_k() * shc + k * sinhc_slope(s) * zg;
            z.iter().zip(gs).map(|(zi, gi)| shc * gi + c * zi).collect()
        }
        Model::Poincare => {
            let thc = tanhc(s);
            let c = k * tanhc_slope(s) * dot(z, g);
            z.iter().zip(g).map(|(zi, gi)| thc * gi + c * zi).collect()
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fermi-Dirac probability `1/(exp((d² − q)/t) + 1)` from a squared distance.
pub fn fermi_dirac(sq_dist: f64, q: f64, t: f64) -> f64 {
    sigmoid(-(sq_dist - q) / t)
}

/// Score of two manifold points.
pub fn fermi_dirac_score(m: &Manifold, e_u: &[f64], e_i: &[f64], cfg: &LossConfig) -> f64 {
    fermi_dirac(m.sq_dist(e_u, e_i), cfg.fermi_q, cfg.fermi_t)
}

/// `max(s_neg − s_pos + m, 0)`.
pub fn margin_loss(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (s_neg - s_pos + margin).max(0.0)
}

/// `‖z₀ − ẑ₀‖²`.
pub fn recon_loss(z0: &[f64], z_hat: &[f64]) -> Result<f64> {
    HdrmError::check_len(z0.len(), z_hat.len())?;
    Ok(z0.iter().zip(z_hat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `(L_u + L_i)/2`.
pub fn recon_pair(z0_u: &[f64], z_hat_u: &[f64], z0_i: &[f64], z_hat_i: &[f64]) -> Result<f64> {
    Ok(0.5 * (recon_loss(z0_u, z_hat_u)? + recon_loss(z0_i, z_hat_i)?))
}

/// `α·rec + (1 − α)·re`.
pub fn total_loss(rec: f64, re: f64, alpha: f64) -> f64 {
    alpha * rec + (1.0 - alpha) * re
}

/// `sigmoid(s_pos)^γ`.
pub fn reweight(s_pos: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        sigmoid(s_pos).powf(gamma)
    }
}

/// Margin ranking term for one `(u, i, j)` triplet with gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingTerm {
    pub s_pos: f64,
    pub s_neg: f64,
    pub loss: f64,
    pub grad_u: Vec<f64>,
    pub grad_i: Vec<f64>,
    pub grad_j: Vec<f64>,
}

impl RankingTerm {
    pub fn is_active(&self) -> bool {
        self.loss > 0.0
    }
}

pub fn ranking_term(geom: &Geometry, cfg: &LossConfig, z_u: &[f64], z_i: &[f64], z_j: &[f64]) -> RankingTerm {
    let (d_pos, gu_pos, gi) = geom.sq_dist_grad(z_u, z_i);
    let (d_neg, gu_neg, gj) = geom.sq_dist_grad(z_u, z_j);
    let (q, t) = (cfg.fermi_q, cfg.fermi_t);
    let s_pos = fermi_dirac(d_pos, q, t);
    let s_neg = fermi_dirac(d_neg, q, t);
    let loss = margin_loss(s_pos, s_neg, cfg.margin);
    let n = z_u.len();
    if loss <= 0.0 {
        return RankingTerm {
            s_pos,
            s_neg,
            loss: 0.0,
            grad_u: vec![0.0; n],
            grad_i: vec![0.0; n],
            grad_j: vec![0.0; n],
        };
    }
    // ∂s/∂d² = −s(1−s)/t; loss = s_neg − s_pos + m
    let c_pos = s_pos * (1.0 - s_pos) / t;
    let c_neg = -s_neg * (1.0 - s_neg) / t;
    RankingTerm {
        s_pos,
        s_neg,
        loss,
        grad_u: gu_pos.iter().zip(&gu_neg).map(|(p, q)| c_pos * p + c_neg * q).collect(),
        grad_i: gi.iter().map(|g| c_pos * g).collect(),
        grad_j: gj.iter().map(|g| c_neg * g).collect(),
    }
}

/// Inputs of the weighted total loss for one triplet. `z0_*` are the clean
/// encoder states, `z_hat_*` the denoised predictions.
#[derive(Debug, Clone, Copy)]
pub struct TripletStates<'a> {
    pub z0_u: &'a [f64],
    pub z0_i: &'a [f64],
    pub z_hat_u: &'a [f64],
    pub z_hat_i: &'a [f64],
    pub z_hat_j: &'a [f64],
}

/// Value and gradients of `w·(α·L_rec + (1−α)·L_re)` with `w` held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub value: f64,
    pub weight: f64,
    pub ranking: RankingTerm,
    pub recon: f64,
    /// Ranking-part gradients w.r.t. `z_hat_{u,i,j}`, already scaled by `w·α`.
    pub rank_grad_u: Vec<f64>,
    pub rank_grad_i: Vec<f64>,
    pub rank_grad_j: Vec<f64>,
    /// Reconstruction-part gradients w.r.t. `z_hat_{u,i}`, scaled by `w·(1−α)`.
    /// The gradient w.r.t. `z0_{u,i}` is the negation.
    pub recon_grad_u: Vec<f64>,
    pub recon_grad_i: Vec<f64>,
}

impl TripletLoss {
    /// Total gradient w.r.t. `z_hat_u`.
    pub fn grad_hat_u(&self) -> Vec<f64> {
        self.rank_grad_u.iter().zip(&self.recon_grad_u).map(|(a, b)| a + b).collect()
    }

    pub fn grad_hat_i(&self) -> Vec<f64> {
        self.rank_grad_i.iter().zip(&self.recon_grad_i).map(|(a, b)| a + b).collect()
    }
}

pub fn triplet_loss(geom: &Geometry, cfg: &LossConfig, s: TripletStates<'_>) -> Result<TripletLoss> {
    let n = s.z0_u.len();
    for v in [s.z0_i, s.z_hat_u, s.z_hat_i, s.z_hat_j] {
        HdrmError::check_len(n, v.len())?;
    }
    let ranking = ranking_term(geom, cfg, s.z_hat_u, s.z_hat_i, s.z_hat_j);
    let recon = recon_pair(s.z0_u, s.z_hat_u, s.z0_i, s.z_hat_i)?;
    let weight = reweight(ranking.s_pos, cfg.gamma);
    let value = weight * total_loss(ranking.loss, recon, cfg.alpha);
    let wa = weight * cfg.alpha;
    // d/dẑ of (1−α)·w·(‖z₀−ẑ‖²)/2 = w(1−α)(ẑ − z₀)
    let wr = weight * (1.0 - cfg.alpha);
    let scale = |g: &[f64], c: f64| g.iter().map(|v| c * v).collect::<Vec<f64>>();
    let recon_grad = |z0: &[f64], zh: &[f64]| z0.iter().zip(zh).map(|(a, b)| wr * (b - a)).collect::<Vec<f64>>();
    Ok(TripletLoss {
        value,
        weight,
        rank_grad_u: scale(&ranking.grad_u, wa),
        rank_grad_i: scale(&ranking.grad_i, wa),
        rank_grad_j: scale(&ranking.grad_j, wa),
        recon_grad_u: recon_grad(s.z0_u, s.z_hat_u),
        recon_grad_i: recon_grad(s.z0_i, s.z_hat_i),
        ranking,
        recon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fermi_dirac_midpoints() {
        assert!((fermi_dirac(2.0, 2.0, 1.0) - 0.5).abs() < 1e-15);
        let t = 0.7;
        assert!((fermi_dirac(2.0 + t * 3f64.ln(), 2.0, t) - 0.25).abs() < 1e-14);
        assert!(fermi_dirac(1e6, 2.0, 1.0) >= 0.0);
        assert!(fermi_dirac(-1e6, 2.0, 1.0) <= 1.0);
    }

    #[test]
    fn margin_examples() {
        assert_eq!(margin_loss(0.9, 0.1, 0.1), 0.0);
        assert!((margin_loss(0.4, 0.4, 0.1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn recon_examples() {
        assert_eq!(recon_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(recon_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!(recon_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(2.0, 4.0, 1.0), 2.0);
        assert_eq!(total_loss(2.0, 4.0, 0.0), 4.0);
        assert_eq!(total_loss(2.0, 4.0, 0.5), 3.0);
    }

    #[test]
    fn reweight_examples() {
        assert_eq!(reweight(0.3, 0.0), 1.0);
        assert!((reweight(0.0, 0.4) - 0.5f64.powf(0.4)).abs() < 1e-15);
    }

    #[test]
    fn inactive_hinge_has_zero_gradients() {
        let m = Manifold::lorentz(-1.0, 2).unwrap();
        let geom = Geometry::Hyperbolic(m);
        let cfg = LossConfig {
            margin: 0.0,
            ..Default::default()
        };
        // positive much closer than negative
        let r = ranking_term(&geom, &cfg, &[0.1, 0.0], &[0.1, 0.01], &[-2.0, 1.0]);
        assert!(!r.is_active());
        assert!(r.grad_u.iter().chain(&r.grad_i).chain(&r.grad_j).all(|g| *g == 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig { alpha: 1.5, ..Default::default() }.validate().is_err());
        assert!(LossConfig { fermi_t: 0.0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { margin: -0.1, ..Default::default() }.validate().is_err());
    }
}
