//! Hyperbolic manifold kernels for the Lorentz (hyperboloid) and Poincaré
//! ball models.
//!
//! Curvature is stored as `kappa < 0`. Every formula is written in terms of
//! `k = |kappa|` and the radius `R = 1/sqrt(k)`:
//!
//! | | Poincaré ball | Lorentz hyperboloid |
//! |-|-|-|
//! | set | `k‖x‖² < 1` | `⟨x,x⟩_L = -1/k`, `x₀ > 0` |
//! | origin | `0ⁿ` | `(R, 0ⁿ)` |
//! | distance | `R·acosh(1 + 2k‖x-y‖²/((1-k‖x‖²)(1-k‖y‖²)))` | `R·acosh(-k⟨x,y⟩_L)` |
//!
//! Two APIs are exposed. The slice methods on [`Manifold`] are unchecked and
//! allocation-light; they are what the training loops call. The typed
//! [`ManifoldPoint`] / [`TangentVector`] wrappers carry their manifold and
//! validate dimensions and model agreement.

use serde::{Deserialize, Serialize};

use crate::error::{HdrmError, Result};

/// Upper bound on `sqrt(k)·‖x‖` after re-projecting a Poincaré point.
pub const POINCARE_MAX_NORM: f64 = 1.0 - 1e-6;

/// Default tolerance used by the constraint checks.
pub const CONSTRAINT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Lorentz,
    Poincare,
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Model::Lorentz => f.write_str("lorentz"),
            Model::Poincare => f.write_str("poincare"),
        }
    }
}

impl std::str::FromStr for Model {
    type Err = HdrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lorentz" | "hyperboloid" => Ok(Model::Lorentz),
            "poincare" | "poincaré" | "ball" => Ok(Model::Poincare),
            other => Err(HdrmError::Config(format!("unknown manifold model `{other}`"))),
        }
    }
}

/// A hyperbolic manifold of intrinsic dimension `dim` and curvature `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Manifold {
    pub model: Model,
    pub kappa: f64,
    pub dim: usize,
    pub eps: f64,
}

impl Manifold {
    pub fn new(model: Model, kappa: f64, dim: usize) -> Result<Self> {
        let m = Manifold {
            model,
            kappa,
            dim,
            eps: 1e-12,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn lorentz(kappa: f64, dim: usize) -> Result<Self> {
        Self::new(Model::Lorentz, kappa, dim)
    }

    pub fn poincare(kappa: f64, dim: usize) -> Result<Self> {
        Self::new(Model::Poincare, kappa, dim)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa < 0.0) || !self.kappa.is_finite() {
            return Err(HdrmError::Config(format!(
                "curvature must be finite and negative, got {}",
                self.kappa
            )));
        }
        if self.dim < 2 {
            return Err(HdrmError::Config(format!(
                "manifold dimension must be at least 2, got {}",
                self.dim
            )));
        }
        if !(self.eps > 0.0) {
            return Err(HdrmError::Config("eps must be positive".into()));
        }
        Ok(())
    }

    /// `|kappa|`.
    #[inline]
    pub fn k(&self) -> f64 {
        -self.kappa
    }

    #[inline]
    pub fn sqrt_k(&self) -> f64 {
        self.k().sqrt()
    }

    /// Radius `1/sqrt(|kappa|)`.
    #[inline]
    pub fn radius(&self) -> f64 {
        1.0 / self.sqrt_k()
    }

    /// Length of a coordinate vector on this manifold.
    #[inline]
    pub fn ambient_len(&self) -> usize {
        match self.model {
            Model::Lorentz => self.dim + 1,
            Model::Poincare => self.dim,
        }
    }

    pub fn origin(&self) -> Vec<f64> {
        let mut o = vec![0.0; self.ambient_len()];
        if self.model == Model::Lorentz {
            o[0] = self.radius();
        }
        o
    }

    /// Lifts a Euclidean parameter vector into the tangent space at the origin.
    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        match self.model {
            Model::Lorentz => {
                let mut v = Vec::with_capacity(x.len() + 1);
                v.push(0.0);
                v.extend_from_slice(x);
                v
            }
            Model::Poincare => x.to_vec(),
        }
    }

    /// Distance between two points.
    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        self.radius() * acosh1p(self.acosh_excess(x, y))
    }

    /// Squared distance.
    pub fn sq_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dist(x, y);
        d * d
    }

    /// `u` such that `dist = R·acosh(1 + u)`, computed without cancellation
    /// for nearby points.
    fn acosh_excess(&self, x: &[f64], y: &[f64]) -> f64 {
        let k = self.k();
        match self.model {
            Model::Lorentz => {
                let alpha = -k * lorentz_inner(x, y);
                if alpha > 2.0 {
                    alpha - 1.0
                } else {
                    let mut diff = 0.0;
                    for (i, (a, b)) in x.iter().zip(y).enumerate() {
                        let d = a - b;
                        diff += if i == 0 { -d * d } else { d * d };
                    }
                    (0.5 * k * diff).max(0.0)
                }
            }
            Model::Poincare => {
                let diff: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                let den = (1.0 - k * norm_sq(x)) * (1.0 - k * norm_sq(y));
                (2.0 * k * diff / den.max(self.eps)).max(0.0)
            }
        }
    }

    /// Conformal factor `λ_x = 2/(1 - k‖x‖²)` of the Poincaré ball.
    pub fn conformal_factor(&self, x: &[f64]) -> f64 {
        2.0 / (1.0 - self.k() * norm_sq(x)).max(self.eps)
    }

    /// Möbius addition `x ⊕ y` on the Poincaré ball (unprojected).
    pub fn mobius_add(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let c = self.k();
        let xy = dot(x, y);
        let x2 = norm_sq(x);
        let y2 = norm_sq(y);
        let a = 1.0 + 2.0 * c * xy + c * y2;
        let b = 1.0 - c * x2;
        let den = (1.0 + 2.0 * c * xy + c * c * x2 * y2).max(self.eps);
        x.iter()
            .zip(y)
            .map(|(xi, yi)| (a * xi + b * yi) / den)
            .collect()
    }

    /// Gyration `gyr[u, v] w` in closed form.
    pub fn gyration(&self, u: &[f64], v: &[f64], w: &[f64]) -> Vec<f64> {
        let c = self.k();
        let uw = dot(u, w);
        let vw = dot(v, w);
        let uv = dot(u, v);
        let u2 = norm_sq(u);
        let v2 = norm_sq(v);
        let a = -c * c * uw * v2 + c * vw + 2.0 * c * c * uv * vw;
        let b = -c * c * vw * u2 - c * uw;
        let d = (1.0 + 2.0 * c * uv + c * c * u2 * v2).max(self.eps);
        w.iter()
            .zip(u.iter().zip(v))
            .map(|(wi, (ui, vi))| wi + 2.0 * (a * ui + b * vi) / d)
            .collect()
    }

    /// Riemannian norm of a tangent vector `v` at `x`.
    pub fn tangent_norm(&self, x: &[f64], v: &[f64]) -> f64 {
        match self.model {
            Model::Lorentz => lorentz_inner(v, v).max(0.0).sqrt(),
            Model::Poincare => self.conformal_factor(x) * norm_sq(v).sqrt(),
        }
    }

    pub fn exp(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        match self.model {
            Model::Lorentz => {
                let s = self.sqrt_k() * lorentz_inner(v, v).max(0.0).sqrt();
                if s == 0.0 {
                    return x.to_vec();
                }
                let (ch, shc) = (s.cosh(), sinhc(s));
                let mut out: Vec<f64> = x.iter().zip(v).map(|(a, b)| ch * a + shc * b).collect();
                self.project_in_place(&mut out);
                out
            }
            Model::Poincare => {
                let nv = norm_sq(v).sqrt();
                if nv == 0.0 {
                    return x.to_vec();
                }
                let sk = self.sqrt_k();
                let lam = self.conformal_factor(x);
                let scale = (sk * lam * nv / 2.0).tanh() / (sk * nv);
                let step: Vec<f64> = v.iter().map(|vi| scale * vi).collect();
                let mut out = self.mobius_add(x, &step);
                self.project_in_place(&mut out);
                out
            }
        }
    }

    pub fn log(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        if x == y {
            return vec![0.0; x.len()];
        }
        match self.model {
            Model::Lorentz => {
                let k = self.k();
                let u = self.acosh_excess(x, y);
                let alpha = 1.0 + u;
                let a = acosh1p(u);
                let f = x_over_sinh(a);
                let mut v: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| f * (yi - alpha * xi)).collect();
                // re-project onto the tangent space at x
                let c = k * lorentz_inner(x, &v);
                for (vi, xi) in v.iter_mut().zip(x) {
                    *vi += c * xi;
                }
                v
            }
            Model::Poincare => {
                let neg_x: Vec<f64> = x.iter().map(|a| -a).collect();
                let w = self.mobius_add(&neg_x, y);
                let nw = norm_sq(&w).sqrt();
                if nw == 0.0 {
                    return vec![0.0; x.len()];
                }
                let sk = self.sqrt_k();
                let lam = self.conformal_factor(x);
                let arg = (sk * nw).min(1.0 - 1e-16);
                let scale = 2.0 / (sk * lam) * arg.atanh() / nw;
                w.iter().map(|wi| scale * wi).collect()
            }
        }
    }

    /// Parallel transport of `v` from `T_x` to `T_y`.
    pub fn transport(&self, x: &[f64], y: &[f64], v: &[f64]) -> Vec<f64> {
        if x == y {
            return v.to_vec();
        }
        match self.model {
            Model::Lorentz => {
                let k = self.k();
                let coef = k * lorentz_inner(y, v) / (1.0 - k * lorentz_inner(x, y));
                let mut out: Vec<f64> = v
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(vi, (xi, yi))| vi + coef * (xi + yi))
                    .collect();
                let c = k * lorentz_inner(y, &out);
                for (oi, yi) in out.iter_mut().zip(y) {
                    *oi += c * yi;
                }
                out
            }
            Model::Poincare => {
                let neg_x: Vec<f64> = x.iter().map(|a| -a).collect();
                let ratio = self.conformal_factor(x) / self.conformal_factor(y);
                self.gyration(y, &neg_x, v)
                    .into_iter()
                    .map(|g| ratio * g)
                    .collect()
            }
        }
    }

    /// `exp_o` applied to a spatial tangent vector (the zeroth Lorentz
    /// coordinate is implicitly 0).
    pub fn exp_origin(&self, z: &[f64]) -> Vec<f64> {
        let sk = self.sqrt_k();
        let r = norm_sq(z).sqrt();
        let s = sk * r;
        match self.model {
            Model::Lorentz => {
                let mut out = Vec::with_capacity(z.len() + 1);
                out.push(self.radius() * s.cosh());
                let shc = sinhc(s);
                out.extend(z.iter().map(|zi| shc * zi));
                out
            }
            Model::Poincare => {
                let mut out: Vec<f64> = z.iter().map(|zi| tanhc(s) * zi).collect();
                self.project_in_place(&mut out);
                out
            }
        }
    }

    /// `log_o` returned as a spatial vector of length `dim`.
    pub fn log_origin(&self, p: &[f64]) -> Vec<f64> {
        let o = self.origin();
        let v = self.log(&o, p);
        match self.model {
            Model::Lorentz => v[1..].to_vec(),
            Model::Poincare => v,
        }
    }

    /// Re-projects onto the manifold: hyperboloid rescale of the time
    /// coordinate, or radial clip inside the ball.
    pub fn project_in_place(&self, x: &mut [f64]) {
        match self.model {
            Model::Lorentz => {
                let r2 = 1.0 / self.k();
                x[0] = (r2 + norm_sq(&x[1..])).sqrt();
            }
            Model::Poincare => {
                let max = POINCARE_MAX_NORM / self.sqrt_k();
                let n = norm_sq(x).sqrt();
                if n > max {
                    let s = max / n;
                    x.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.project_in_place(&mut out);
        out
    }

    /// Projects `v` onto the tangent space at `x` (identity on the ball).
    pub fn project_tangent(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        match self.model {
            Model::Lorentz => {
                let c = self.k() * lorentz_inner(x, v);
                v.iter().zip(x).map(|(vi, xi)| vi + c * xi).collect()
            }
            Model::Poincare => v.to_vec(),
        }
    }

    /// Constraint residual of a point: `|⟨x,x⟩_L + 1/k|` scaled by `max(1, x₀²)`
    /// on the hyperboloid; on the ball 0 inside `k‖x‖² < 1 - eps`, infinite outside.
    pub fn constraint_residual(&self, x: &[f64]) -> f64 {
        match self.model {
            Model::Lorentz => {
                let r = (lorentz_inner(x, x) + 1.0 / self.k()).abs();
                let scale = (x[0] * x[0]).max(1.0);
                if x[0] > 0.0 {
                    r / scale
                } else {
                    f64::INFINITY
                }
            }
            Model::Poincare => {
                if self.k() * norm_sq(x) < 1.0 - self.eps {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        HdrmError::check_len(self.ambient_len(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(HdrmError::Numeric("non-finite point coordinate".into()));
        }
        let r = self.constraint_residual(x);
        if r > CONSTRAINT_TOL {
            return Err(HdrmError::Numeric(format!(
                "point violates the {} constraint (residual {r:.3e})",
                self.model
            )));
        }
        Ok(())
    }
}

/// `-x₀y₀ + Σ_{i≥1} xᵢyᵢ`.
#[inline]
pub fn lorentz_inner(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut s = -x[0] * y[0];
    for i in 1..x.len() {
        s += x[i] * y[i];
    }
    s
}

/// Checked Minkowski inner product.
pub fn lorentz_inner_checked(x: &[f64], y: &[f64]) -> Result<f64> {
    HdrmError::check_len(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(HdrmError::Dimension {
            expected: 2,
            got: x.len(),
        });
    }
    Ok(lorentz_inner(x, y))
}

#[inline]
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    dot(x, x)
}

/// `acosh(1 + u)` for `u ≥ 0`, accurate near zero.
#[inline]
pub fn acosh1p(u: f64) -> f64 {
    let u = u.max(0.0);
    (u + (u * (u + 2.0)).sqrt()).ln_1p()
}

/// `sinh(s)/s`.
#[inline]
pub fn sinhc(s: f64) -> f64 {
    if s.abs() < 1e-4 {
        1.0 + s * s / 6.0
    } else {
        s.sinh() / s
    }
}

/// `tanh(s)/s`.
#[inline]
pub fn tanhc(s: f64) -> f64 {
    if s.abs() < 1e-4 {
        1.0 - s * s / 3.0
    } else {
        s.tanh() / s
    }
}

/// `s/sinh(s)`.
#[inline]
pub fn x_over_sinh(s: f64) -> f64 {
    if s.abs() < 1e-4 {
        1.0 - s * s / 6.0
    } else {
        s / s.sinh()
    }
}

/// A point on a specific manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    coords: Vec<f64>,
    manifold: Manifold,
}

/// A tangent vector attached to a base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    coords: Vec<f64>,
    base: ManifoldPoint,
}

fn same_manifold(a: &Manifold, b: &Manifold) -> Result<()> {
    if a.model != b.model || a.kappa != b.kappa || a.dim != b.dim {
        return Err(HdrmError::Config(format!(
            "mixed manifolds: {} (κ={}, n={}) vs {} (κ={}, n={})",
            a.model, a.kappa, a.dim, b.model, b.kappa, b.dim
        )));
    }
    Ok(())
}

impl ManifoldPoint {
    /// Validates the coordinates against the manifold constraint.
    pub fn new(manifold: Manifold, coords: Vec<f64>) -> Result<Self> {
        manifold.check_point(&coords)?;
        Ok(ManifoldPoint { coords, manifold })
    }

    /// Projects arbitrary finite coordinates onto the manifold.
    pub fn projected(manifold: Manifold, mut coords: Vec<f64>) -> Result<Self> {
        HdrmError::check_len(manifold.ambient_len(), coords.len())?;
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(HdrmError::Numeric("non-finite point coordinate".into()));
        }
        manifold.project_in_place(&mut coords);
        Ok(ManifoldPoint { coords, manifold })
    }

    pub fn origin(manifold: Manifold) -> Self {
        ManifoldPoint {
            coords: manifold.origin(),
            manifold,
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    pub fn dist(&self, other: &ManifoldPoint) -> Result<f64> {
        same_manifold(&self.manifold, &other.manifold)?;
        Ok(self.manifold.dist(&self.coords, &other.coords))
    }

    pub fn exp(&self, v: &TangentVector) -> Result<ManifoldPoint> {
        same_manifold(&self.manifold, &v.base.manifold)?;
        if v.coords.iter().any(|c| !c.is_finite()) {
            return Err(HdrmError::Numeric("non-finite tangent vector".into()));
        }
        let out = self.manifold.exp(&self.coords, &v.coords);
        if out.iter().any(|c| !c.is_finite()) {
            return Err(HdrmError::Numeric("exponential map overflowed".into()));
        }
        Ok(ManifoldPoint {
            coords: out,
            manifold: self.manifold,
        })
    }

    pub fn log(&self, y: &ManifoldPoint) -> Result<TangentVector> {
        same_manifold(&self.manifold, &y.manifold)?;
        Ok(TangentVector {
            coords: self.manifold.log(&self.coords, &y.coords),
            base: self.clone(),
        })
    }

    /// Möbius addition; only defined on the Poincaré ball.
    pub fn mobius_add(&self, y: &ManifoldPoint) -> Result<ManifoldPoint> {
        same_manifold(&self.manifold, &y.manifold)?;
        if self.manifold.model != Model::Poincare {
            return Err(HdrmError::Config("Möbius addition requires the Poincaré model".into()));
        }
        let out = self.manifold.mobius_add(&self.coords, &y.coords);
        let k = self.manifold.k();
        if out.iter().any(|c| !c.is_finite()) || k * norm_sq(&out) >= 1.0 {
            return Err(HdrmError::Numeric("Möbius sum left the ball".into()));
        }
        let mut out = out;
        self.manifold.project_in_place(&mut out);
        Ok(ManifoldPoint {
            coords: out,
            manifold: self.manifold,
        })
    }

    pub fn conformal_factor(&self) -> Result<f64> {
        if self.manifold.model != Model::Poincare {
            return Err(HdrmError::Config("conformal factor requires the Poincaré model".into()));
        }
        Ok(self.manifold.conformal_factor(&self.coords))
    }

    /// Stereographic projection of a hyperboloid point into the ball of the
    /// same curvature: `p = R·x_s/(R + x₀)`.
    pub fn to_poincare(&self) -> Result<ManifoldPoint> {
        match self.manifold.model {
            Model::Poincare => Ok(self.clone()),
            Model::Lorentz => {
                let r = self.manifold.radius();
                let den = r + self.coords[0];
                let coords = self.coords[1..].iter().map(|x| r * x / den).collect();
                let manifold = Manifold {
                    model: Model::Poincare,
                    ..self.manifold
                };
                ManifoldPoint::projected(manifold, coords)
            }
        }
    }

    /// Inverse of [`ManifoldPoint::to_poincare`].
    pub fn to_lorentz(&self) -> Result<ManifoldPoint> {
        match self.manifold.model {
            Model::Lorentz => Ok(self.clone()),
            Model::Poincare => {
                let k = self.manifold.k();
                let p2 = norm_sq(&self.coords);
                let den = 1.0 - k * p2;
                let mut coords = Vec::with_capacity(self.coords.len() + 1);
                coords.push(self.manifold.radius() * (1.0 + k * p2) / den);
                coords.extend(self.coords.iter().map(|p| 2.0 * p / den));
                let manifold = Manifold {
                    model: Model::Lorentz,
                    ..self.manifold
                };
                ManifoldPoint::projected(manifold, coords)
            }
        }
    }
}

impl TangentVector {
    /// Validates length and, on the hyperboloid, tangency to `base`.
    pub fn new(base: ManifoldPoint, coords: Vec<f64>) -> Result<Self> {
        let m = base.manifold;
        HdrmError::check_len(m.ambient_len(), coords.len())?;
        if m.model == Model::Lorentz {
            let scale = base.coords[0].abs().max(1.0) * (1.0 + norm_sq(&coords).sqrt());
            let r = lorentz_inner(&base.coords, &coords).abs() / scale;
            if r > CONSTRAINT_TOL {
                return Err(HdrmError::Numeric(format!(
                    "vector is not tangent to its base point (⟨x,v⟩_L = {r:.3e})"
                )));
            }
        }
        Ok(TangentVector { coords, base })
    }

    /// The Euclidean-parameter lift at the origin.
    pub fn lift(manifold: Manifold, x: &[f64]) -> Result<Self> {
        HdrmError::check_len(manifold.dim, x.len())?;
        Ok(TangentVector {
            coords: manifold.lift(x),
            base: ManifoldPoint::origin(manifold),
        })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    pub fn norm(&self) -> f64 {
        self.base.manifold.tangent_norm(&self.base.coords, &self.coords)
    }

    pub fn transport(&self, to: &ManifoldPoint) -> Result<TangentVector> {
        same_manifold(&self.base.manifold, &to.manifold)?;
        Ok(TangentVector {
            coords: self
                .base
                .manifold
                .transport(&self.base.coords, &to.coords, &self.coords),
            base: to.clone(),
        })
    }
}
