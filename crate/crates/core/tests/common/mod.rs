#![allow(dead_code)]

use hdrm::manifold::Manifold;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Double-double value `hi + lo`, roughly 106 bits of mantissa.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub fn from(a: f64) -> Dd {
        Dd { hi: a, lo: 0.0 }
    }
    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = two_sum(s, e);
        Dd { hi, lo }
    }
    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }
    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = two_sum(p, e);
        Dd { hi, lo }
    }
    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::from(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Dd::from(q2)));
        let q3 = r.hi / o.hi;
        Dd::from(q1).add(Dd::from(q2)).add(Dd::from(q3))
    }
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

pub fn dd_dot(x: &[f64], y: &[f64]) -> Dd {
    x.iter()
        .zip(y)
        .fold(Dd::default(), |acc, (a, b)| acc.add(Dd::from(*a).mul(Dd::from(*b))))
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Random direction with Euclidean norm drawn uniformly from `[0, max_norm]`.
pub fn vec_with_norm_at_most(rng: &mut ChaCha8Rng, n: usize, max_norm: f64) -> Vec<f64> {
    let g = gaussian_vec(rng, n, 1.0);
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let r = rng.random_range(0.0..max_norm);
    g.iter().map(|v| v * r / norm).collect()
}

/// Random point whose distance from the origin is at most `max_dist`.
pub fn random_point(m: &Manifold, rng: &mut ChaCha8Rng, max_dist: f64) -> Vec<f64> {
    let chart_scale = match m.model {
        hdrm::manifold::Model::Lorentz => 1.0,
        hdrm::manifold::Model::Poincare => 0.5,
    };
    let z = vec_with_norm_at_most(rng, m.dim, max_dist * chart_scale);
    m.exp_origin(&z)
}

/// Random tangent vector at `x` with Riemannian norm at most `max_norm`.
pub fn random_tangent(m: &Manifold, rng: &mut ChaCha8Rng, x: &[f64], max_norm: f64) -> Vec<f64> {
    let raw = gaussian_vec(rng, m.ambient_len(), 1.0);
    let v = m.project_tangent(x, &raw);
    let n = m.tangent_norm(x, &v).max(1e-300);
    let r = rng.random_range(0.0..max_norm);
    v.iter().map(|c| c * r / n).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Relative error `|a-b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
