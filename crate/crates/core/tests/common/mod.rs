#![allow(dead_code)]

use geodreg::vecops::{add, lin2, scale};
use geodreg::Manifold;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const TEST_MANIFOLDS: [Manifold; 5] =
    [Manifold::Sphere(2), Manifold::Sphere(3), Manifold::Hyperbolic(2), Manifold::Hyperbolic(3), Manifold::Kendall(4)];

/// Largest tangent norm for which the exponential map is still injective.
pub fn injectivity_radius(m: Manifold) -> f64 {
    match m {
        Manifold::Sphere(_) => std::f64::consts::PI,
        Manifold::Kendall(_) => std::f64::consts::FRAC_PI_2,
        _ => f64::INFINITY,
    }
}

/// A tangent vector at `p` with norm drawn uniformly from `(0, max_norm)`.
pub fn tangent_with_norm_below(m: Manifold, p: &[f64], max_norm: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v = m.random_tangent(p, 1.0, rng);
    let r = m.norm(&v);
    let target = rng.random_range(0.0..max_norm);
    scale(&v, target / r)
}

/// Random base point, random velocity `w` inside the injectivity radius, and
/// random tangent vectors `u` at `p` and `e` at `Exp(p, w)`.
pub struct AdjointCase {
    pub p: Vec<f64>,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub e: Vec<f64>,
}

pub fn adjoint_case(m: Manifold, rng: &mut ChaCha8Rng) -> AdjointCase {
    let p = m.random_point(rng);
    let w = tangent_with_norm_below(m, &p, 0.8 * injectivity_radius(m).min(2.0), rng);
    let u = m.random_tangent(&p, 1.0, rng);
    let y = m.exp(&p, &w).unwrap();
    let e = m.random_tangent(&y, 1.0, rng);
    AdjointCase { p, w, u, e }
}

fn diff5(f: impl Fn(f64) -> Vec<f64>, h: f64) -> Vec<f64> {
    let a = f(2.0 * h);
    let b = f(h);
    let c = f(-h);
    let d = f(-2.0 * h);
    (0..a.len()).map(|i| (-a[i] + 8.0 * b[i] - 8.0 * c[i] + d[i]) / (12.0 * h)).collect()
}

/// Finite-difference derivative of `p -> Exp(p, w)` along `u`, with `w`
/// carried by parallel transport as the base point moves.
pub fn fd_dexp_p(m: Manifold, p: &[f64], w: &[f64], u: &[f64]) -> Vec<f64> {
    diff5(
        |t| {
            let pt = m.exp(p, &scale(u, t)).unwrap();
            let wt = m.transport(p, w, &pt).unwrap();
            m.exp(&pt, &wt).unwrap()
        },
        1e-4,
    )
}

/// Finite-difference derivative of `w -> Exp(p, w)` along `u`.
pub fn fd_dexp_v(m: Manifold, p: &[f64], w: &[f64], u: &[f64]) -> Vec<f64> {
    diff5(|t| m.exp(p, &add(w, &scale(u, t))).unwrap(), 1e-4)
}

/// Scalar derivative with a five-point stencil.
pub fn fd_scalar(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

pub fn lin(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    lin2(a, x, b, y)
}

/// Simulation truths: one slope on 2-manifolds, two on 3-manifolds.
pub fn truth(m: Manifold) -> geodreg::GeodesicModel {
    use std::f64::consts::PI;
    let d = m.ambient_dim();
    let mut p = vec![0.0; d];
    p[0] = 1.0;
    let mut v1 = vec![0.0; d];
    v1[1] = PI / 4.0;
    let mut v = vec![v1];
    if d == 4 {
        let mut v2 = vec![0.0; d];
        v2[3] = -PI / 6.0;
        v.push(v2);
    }
    geodreg::GeodesicModel::new(m, p, v).unwrap()
}

/// Noiseless responses `Exp(p, V x)` with `x ~ U[-1/2, 1/2]^k`.
pub fn noiseless(m: Manifold, model: &geodreg::GeodesicModel, n: usize, rng: &mut ChaCha8Rng) -> geodreg::Dataset {
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..model.k()).map(|_| rng.random_range(-0.5..0.5)).collect()).collect();
    let ys = xs.iter().map(|x| model.predict(m, x).unwrap()).collect();
    geodreg::Dataset::from_parts(m, xs, ys).unwrap()
}
