mod common;

use common::*;
use hdrm::manifold::{lorentz_inner, Manifold, ManifoldPoint, Model, TangentVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn models() -> Vec<Manifold> {
    let mut out = Vec::new();
    for kappa in [-1.0, -0.5, -4.0] {
        for dim in [2, 5] {
            out.push(Manifold::lorentz(kappa, dim).unwrap());
            out.push(Manifold::poincare(kappa, dim).unwrap());
        }
    }
    out
}

#[test]
fn inner_product_matches_extended_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = 2 + (rng.next_u32_helper() % 9) as usize;
        let x = gaussian_vec(&mut rng, n, 10.0);
        let y = gaussian_vec(&mut rng, n, 10.0);
        let mut xn = x.clone();
        xn[0] = -xn[0];
        let exact = dd_dot(&xn, &y).to_f64();
        let got = lorentz_inner(&x, &y);
        let scale: f64 = x.iter().zip(&y).map(|(a, b)| (a * b).abs()).sum();
        assert!((got - exact).abs() <= 4.0 * n as f64 * f64::EPSILON * scale);
    }
}

trait NextU32 {
    fn next_u32_helper(&mut self) -> u32;
}
impl NextU32 for ChaCha8Rng {
    fn next_u32_helper(&mut self) -> u32 {
        rand::RngCore::next_u32(self)
    }
}

#[test]
fn mobius_add_matches_extended_precision() {
    let m = Manifold::poincare(-1.5, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = Dd::from(m.k());
    let one = Dd::from(1.0);
    let two = Dd::from(2.0);
    for _ in 0..1000 {
        let x = random_point(&m, &mut rng, 4.0);
        let y = random_point(&m, &mut rng, 4.0);
        let xy = dd_dot(&x, &y);
        let x2 = dd_dot(&x, &x);
        let y2 = dd_dot(&y, &y);
        let a = one.add(two.mul(c).mul(xy)).add(c.mul(y2));
        let b = one.sub(c.mul(x2));
        let den = one.add(two.mul(c).mul(xy)).add(c.mul(c).mul(x2).mul(y2));
        let got = m.mobius_add(&x, &y);
        for i in 0..x.len() {
            let want = a.mul(Dd::from(x[i])).add(b.mul(Dd::from(y[i]))).div(den).to_f64();
            assert!((got[i] - want).abs() < 1e-13, "{} vs {}", got[i], want);
        }
    }
}

#[test]
fn gyration_matches_mobius_composition() {
    // gyr[u,v]w = ⊖(u⊕v) ⊕ (u ⊕ (v ⊕ w))
    let m = Manifold::poincare(-1.0, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let u = random_point(&m, &mut rng, 2.0);
        let v = random_point(&m, &mut rng, 2.0);
        let w: Vec<f64> = gaussian_vec(&mut rng, 3, 0.05);
        let uv = m.mobius_add(&u, &v);
        let neg_uv: Vec<f64> = uv.iter().map(|x| -x).collect();
        let oracle = m.mobius_add(&neg_uv, &m.mobius_add(&u, &m.mobius_add(&v, &w)));
        let got = m.gyration(&u, &v, &w);
        assert!(max_abs_diff(&got, &oracle) < 1e-10);
    }
}

#[test]
fn distance_examples() {
    for m in models() {
        let o = m.origin();
        assert_eq!(m.dist(&o, &o), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = m.project_tangent(&o, &gaussian_vec(&mut rng, m.ambient_len(), 1.0));
        let n = m.tangent_norm(&o, &v);
        let unit: Vec<f64> = v.iter().map(|c| c / n).collect();
        let y = m.exp(&o, &unit);
        assert!((m.dist(&o, &y) - 1.0).abs() < 1e-10, "{:?}", m);
    }
}

#[test]
fn metric_axioms_on_sampled_triples() {
    for m in models() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x = random_point(&m, &mut rng, 5.0);
            let y = random_point(&m, &mut rng, 5.0);
            let z = random_point(&m, &mut rng, 5.0);
            let dxy = m.dist(&x, &y);
            assert!(dxy >= 0.0);
            assert!((dxy - m.dist(&y, &x)).abs() <= 1e-12);
            assert!(m.dist(&x, &z) <= dxy + m.dist(&y, &z) + 1e-9);
            assert!(m.dist(&x, &x) <= 1e-9);
        }
    }
}

#[test]
fn exp_log_roundtrips() {
    for m in models() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut worst_v: f64 = 0.0;
        let mut worst_p: f64 = 0.0;
        for _ in 0..1000 {
            let x = random_point(&m, &mut rng, 1.0);
            let v = random_tangent(&m, &mut rng, &x, 5.0);
            let y = m.exp(&x, &v);
            worst_v = worst_v.max(max_abs_diff(&m.log(&x, &y), &v));
            let y2 = random_point(&m, &mut rng, 4.0);
            worst_p = worst_p.max(max_abs_diff(&m.exp(&x, &m.log(&x, &y2)), &y2));
        }
        assert!(worst_v < 1e-7, "{m:?}: log∘exp error {worst_v:e}");
        assert!(worst_p < 1e-7, "{m:?}: exp∘log error {worst_p:e}");
    }
}

#[test]
fn log_norm_equals_distance() {
    for m in models() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x = random_point(&m, &mut rng, 3.0);
            let y = random_point(&m, &mut rng, 3.0);
            let d = m.dist(&x, &y);
            let n = m.tangent_norm(&x, &m.log(&x, &y));
            assert!(rel_err(n, d, 1.0) < 1e-9, "{m:?}: {n} vs {d}");
        }
    }
}

#[test]
fn exp_travels_the_tangent_norm() {
    for m in models() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let x = random_point(&m, &mut rng, 1.0);
            let v = random_tangent(&m, &mut rng, &x, 4.0);
            let d = m.dist(&x, &m.exp(&x, &v));
            assert!((d - m.tangent_norm(&x, &v)).abs() < 1e-8);
        }
        let x = random_point(&m, &mut rng, 1.0);
        assert_eq!(m.exp(&x, &vec![0.0; m.ambient_len()]), x);
    }
}

#[test]
fn constraint_preserved_over_ten_thousand_inputs() {
    for m in [
        Manifold::lorentz(-1.0, 4).unwrap(),
        Manifold::poincare(-1.0, 4).unwrap(),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let x = random_point(&m, &mut rng, 5.0);
            m.check_point(&x).unwrap();
            let v = random_tangent(&m, &mut rng, &x, 5.0);
            m.check_point(&m.exp(&x, &v)).unwrap();
            m.check_point(&m.exp_origin(&vec_with_norm_at_most(&mut rng, 4, 5.0))).unwrap();
            if m.model == Model::Poincare {
                let y = random_point(&m, &mut rng, 2.0);
                m.check_point(&m.project(&m.mobius_add(&x, &y))).unwrap();
            }
        }
    }
}

#[test]
fn transport_is_an_isometry_and_stays_tangent() {
    for m in models() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let x = random_point(&m, &mut rng, 3.0);
            let y = random_point(&m, &mut rng, 3.0);
            let v = random_tangent(&m, &mut rng, &x, 3.0);
            let w = m.transport(&x, &y, &v);
            let (nv, nw) = (m.tangent_norm(&x, &v), m.tangent_norm(&y, &w));
            assert!((nv - nw).abs() < 1e-8 * nv.max(1.0), "{m:?}: {nv} vs {nw}");
            if m.model == Model::Lorentz {
                let scale = y[0].abs() * w.iter().map(|c| c.abs()).fold(1.0, f64::max);
                assert!(lorentz_inner(&y, &w).abs() < 1e-8 * scale);
            }
        }
    }
}

#[test]
fn lift_is_tangent_at_origin() {
    let m = Manifold::lorentz(-2.0, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let x = gaussian_vec(&mut rng, 6, 3.0);
        let v = TangentVector::lift(m, &x).unwrap();
        assert_eq!(lorentz_inner(&m.origin(), v.coords()), 0.0);
    }
    assert!(m.lift(&[0.0; 6]).iter().all(|v| *v == 0.0));
}

#[test]
fn conformal_factor_matches_finite_difference_metric() {
    let m = Manifold::poincare(-1.0, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let o = m.origin();
    for _ in 0..200 {
        let x = random_point(&m, &mut rng, 3.0);
        let dir = gaussian_vec(&mut rng, 3, 1.0);
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h = 1e-6;
        let step: Vec<f64> = dir.iter().map(|v| h * v / n).collect();
        let xh: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
        // Pullback metric relative to the origin's: (λ_x / λ_o)² = (λ_x / 2)².
        let ratio = m.dist(&x, &xh) / m.dist(&o, &step);
        let lam = m.conformal_factor(&x);
        assert!(rel_err(ratio, lam / 2.0, 1.0) < 1e-5, "{ratio} vs {}", lam / 2.0);
    }
}

/// Differential of the stereographic map `p = R·x_s/(R + x₀)` applied to `v`.
fn projection_differential(m: &Manifold, x: &[f64], v: &[f64]) -> Vec<f64> {
    let r = m.radius();
    let den = r + x[0];
    (1..x.len())
        .map(|i| r * v[i] / den - r * x[i] * v[0] / (den * den))
        .collect()
}

#[test]
fn lorentz_and_poincare_are_isometric_under_projection() {
    for kappa in [-1.0, -0.3, -3.0] {
        let l = Manifold::lorentz(kappa, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let x = ManifoldPoint::new(l, random_point(&l, &mut rng, 3.0)).unwrap();
            let y = ManifoldPoint::new(l, random_point(&l, &mut rng, 3.0)).unwrap();
            let (px, py) = (x.to_poincare().unwrap(), y.to_poincare().unwrap());
            let p = *px.manifold();
            let dl = x.dist(&y).unwrap();
            let dp = px.dist(&py).unwrap();
            assert!(rel_err(dl, dp, 1.0) < 1e-9, "{dl} vs {dp}");

            // exp commutes with the projection
            let v = random_tangent(&l, &mut rng, x.coords(), 2.0);
            let lhs = ManifoldPoint::new(l, l.exp(x.coords(), &v))
                .unwrap()
                .to_poincare()
                .unwrap();
            let rhs = p.exp(px.coords(), &projection_differential(&l, x.coords(), &v));
            assert!(max_abs_diff(lhs.coords(), &rhs) < 1e-8);

            // log commutes with the projection
            let lhs = projection_differential(&l, x.coords(), &l.log(x.coords(), y.coords()));
            let rhs = p.log(px.coords(), py.coords());
            assert!(max_abs_diff(&lhs, &rhs) < 1e-8);

            let back = px.to_lorentz().unwrap();
            assert!(max_abs_diff(back.coords(), x.coords()) < 1e-9 * x.coords()[0]);
        }
    }
}

proptest! {
    #[test]
    fn distance_is_symmetric_and_nonnegative(
        a in prop::collection::vec(-2.0f64..2.0, 3),
        b in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        for m in [Manifold::lorentz(-1.0, 3).unwrap(), Manifold::poincare(-1.0, 3).unwrap()] {
            let x = m.exp_origin(&a);
            let y = m.exp_origin(&b);
            let d = m.dist(&x, &y);
            prop_assert!(d >= 0.0);
            prop_assert!((d - m.dist(&y, &x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn exp_origin_has_tangent_norm_distance(z in prop::collection::vec(-3.0f64..3.0, 4)) {
        let m = Manifold::lorentz(-1.0, 4).unwrap();
        let e = m.exp_origin(&z);
        let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((m.dist(&m.origin(), &e) - r).abs() < 1e-9);
        let back = m.log_origin(&e);
        for (u, v) in back.iter().zip(&z) {
            prop_assert!((u - v).abs() < 1e-8);
        }
    }
}
