//! Manifold backends: exponential and logarithmic maps, distances, parallel
//! transport and the adjoint differentials of the exponential map.
//!
//! Points and tangent vectors are plain ambient-coordinate vectors; the
//! [`Manifold`] handle carries the geometry. Layouts:
//!
//! * `Sphere(n)`: unit vectors in R^{n+1}.
//! * `Hyperbolic(n)`: hyperboloid model, `-p0² + p1² + ... + pn² = -1`, `p0 > 0`.
//! * `Kendall(k)`: pre-shapes of `k` planar landmarks stored as `2k` reals
//!   `[x1, y1, x2, y2, ...]`, centred and of unit norm. A shape is a pre-shape
//!   up to rotation; operations that depend on the representative (log,
//!   transport, adjoints) use the representative they are handed, so callers
//!   should keep one representative per point throughout a fit.
//! * `Euclidean(n)`: flat R^n, used to check that the machinery reduces to
//!   ordinary least squares.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::vecops::{axpy, dot, lin2, norm, scale, sub};

/// Angular margin below π at which sphere logs are refused.
pub const SPHERE_CUT_MARGIN: f64 = 1e-6;

const TINY_NORM: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Manifold {
    Sphere(usize),
    Hyperbolic(usize),
    Kendall(usize),
    Euclidean(usize),
}

fn sinc(t: f64) -> f64 {
    if t.abs() < 1e-4 {
        let t2 = t * t;
        1.0 - t2 / 6.0 + t2 * t2 / 120.0
    } else {
        t.sin() / t
    }
}

fn sinhc(t: f64) -> f64 {
    if t.abs() < 1e-4 {
        let t2 = t * t;
        1.0 + t2 / 6.0 + t2 * t2 / 120.0
    } else {
        t.sinh() / t
    }
}

/// Minkowski inner product `-a0 b0 + a1 b1 + ...`.
pub fn minkowski(a: &[f64], b: &[f64]) -> f64 {
    -a[0] * b[0] + dot(&a[1..], &b[1..])
}

// Complex views of interleaved (re, im) coordinates.

/// Hermitian product `Σ a_k conj(b_k)` of two landmark vectors.
pub fn complex_inner(a: &[f64], b: &[f64]) -> Complex64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for (x, y) in a.chunks_exact(2).zip(b.chunks_exact(2)) {
        re += x[0] * y[0] + x[1] * y[1];
        im += x[1] * y[0] - x[0] * y[1];
    }
    Complex64::new(re, im)
}

fn complex_scale(a: &[f64], c: Complex64) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for x in a.chunks_exact(2) {
        out.push(c.re * x[0] - c.im * x[1]);
        out.push(c.re * x[1] + c.im * x[0]);
    }
    out
}

fn times_i(a: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for x in a.chunks_exact(2) {
        out.push(-x[1]);
        out.push(x[0]);
    }
    out
}

fn center(a: &mut [f64]) {
    let k = (a.len() / 2) as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for x in a.chunks_exact(2) {
        mx += x[0];
        my += x[1];
    }
    mx /= k;
    my /= k;
    for x in a.chunks_exact_mut(2) {
        x[0] -= mx;
        x[1] -= my;
    }
}

/// Centre and scale a landmark configuration to a pre-shape.
pub fn preshape(landmarks: &[[f64; 2]]) -> Result<Vec<f64>> {
    if landmarks.len() < 3 {
        return Err(Error::Domain(format!("a planar shape needs at least 3 landmarks, got {}", landmarks.len())));
    }
    let mut z: Vec<f64> = landmarks.iter().flat_map(|l| [l[0], l[1]]).collect();
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite landmark coordinate".into()));
    }
    center(&mut z);
    let r = norm(&z);
    if r < 1e-300 || r.is_nan() {
        return Err(Error::Degenerate("all landmarks coincide".into()));
    }
    Ok(scale(&z, 1.0 / r))
}

/// Landmarks of a pre-shape as `(x, y)` pairs.
pub fn landmarks(z: &[f64]) -> Vec<[f64; 2]> {
    z.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

/// Rotate `z2` so that its Hermitian product with `z1` is real and positive.
pub fn align(z1: &[f64], z2: &[f64]) -> Result<Vec<f64>> {
    if z1.len() != z2.len() {
        return Err(Error::Dimension { expected: z1.len(), got: z2.len() });
    }
    let c = complex_inner(z1, z2);
    let m = c.norm();
    if m < 1e-12 {
        return Err(Error::CutLocus("pre-shapes are orthogonal, rotation undefined".into()));
    }
    Ok(complex_scale(z2, c / m))
}

/// Poincaré-ball coordinates of a hyperboloid point.
pub fn poincare_from_hyperboloid(p: &[f64]) -> Vec<f64> {
    let d = p[0] + 1.0;
    p[1..].iter().map(|x| x / d).collect()
}

/// Hyperboloid point of a Poincaré-ball point, `‖q‖ < 1`.
pub fn hyperboloid_from_poincare(q: &[f64]) -> Result<Vec<f64>> {
    let r2 = dot(q, q);
    if !(r2 < 1.0) {
        return Err(Error::Domain(format!("Poincaré point must satisfy |q| < 1, got {}", r2.sqrt())));
    }
    let d = 1.0 - r2;
    let mut p = Vec::with_capacity(q.len() + 1);
    p.push((1.0 + r2) / d);
    p.extend(q.iter().map(|x| 2.0 * x / d));
    Ok(p)
}

/// `Σ_j x_j v_j` for tangent vectors `vs` at a common base point.
pub fn combine(vs: &[Vec<f64>], x: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (v, &xj) in vs.iter().zip(x) {
        axpy(xj, v, &mut out);
    }
    out
}

impl Manifold {
    /// Reject zero dimensions and shape spaces with fewer than three landmarks.
    pub fn validate(self) -> Result<Self> {
        match self {
            Manifold::Sphere(0) | Manifold::Hyperbolic(0) | Manifold::Euclidean(0) => {
                Err(Error::Domain("dimension must be at least 1".into()))
            }
            Manifold::Kendall(k) if k < 3 => {
                Err(Error::Domain(format!("shape space needs at least 3 landmarks, got {k}")))
            }
            m => Ok(m),
        }
    }

    /// Length of the coordinate vectors.
    pub fn ambient_dim(&self) -> usize {
        match *self {
            Manifold::Sphere(n) | Manifold::Hyperbolic(n) => n + 1,
            Manifold::Kendall(k) => 2 * k,
            Manifold::Euclidean(n) => n,
        }
    }

    /// Real dimension of the manifold.
    pub fn intrinsic_dim(&self) -> usize {
        match *self {
            Manifold::Sphere(n) | Manifold::Hyperbolic(n) | Manifold::Euclidean(n) => n,
            Manifold::Kendall(k) => 2 * k - 4,
        }
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        let d = self.ambient_dim();
        if v.len() != d {
            return Err(Error::Dimension { expected: d, got: v.len() });
        }
        Ok(())
    }

    /// A canonical base point.
    pub fn origin(&self) -> Vec<f64> {
        let d = self.ambient_dim();
        match *self {
            Manifold::Sphere(_) | Manifold::Hyperbolic(_) => {
                let mut p = vec![0.0; d];
                p[0] = 1.0;
                p
            }
            Manifold::Kendall(k) => {
                let ring: Vec<[f64; 2]> = (0..k)
                    .map(|j| {
                        let a = 2.0 * PI * j as f64 / k as f64;
                        [a.cos(), a.sin()]
                    })
                    .collect();
                preshape(&ring).expect("regular polygon is non-degenerate")
            }
            Manifold::Euclidean(_) => vec![0.0; d],
        }
    }

    /// Riemannian inner product of tangent vectors at a common base point.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Manifold::Hyperbolic(_) => minkowski(u, v),
            _ => dot(u, v),
        }
    }

    pub fn norm(&self, v: &[f64]) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    /// Verify the defining constraints of a point to within `tol`.
    pub fn check_point(&self, p: &[f64], tol: f64) -> Result<()> {
        self.check_len(p)?;
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite coordinate".into()));
        }
        let bad = match self {
            Manifold::Sphere(_) => (dot(p, p) - 1.0).abs() > tol,
            Manifold::Hyperbolic(_) => (minkowski(p, p) + 1.0).abs() > tol || p[0] <= 0.0,
            Manifold::Kendall(_) => {
                let (sx, sy) = p.chunks_exact(2).fold((0.0, 0.0), |a, c| (a.0 + c[0], a.1 + c[1]));
                sx.abs() > tol || sy.abs() > tol || (dot(p, p) - 1.0).abs() > tol
            }
            Manifold::Euclidean(_) => false,
        };
        if bad {
            return Err(Error::Domain(format!("coordinates do not lie on {self}")));
        }
        Ok(())
    }

    /// Nearest valid point (renormalisation / re-lifting).
    pub fn project_point(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p)?;
        match self {
            Manifold::Sphere(_) => {
                let r = norm(p);
                if r < 1e-300 || !r.is_finite() {
                    return Err(Error::Degenerate("cannot normalise zero vector".into()));
                }
                Ok(scale(p, 1.0 / r))
            }
            Manifold::Hyperbolic(_) => {
                let mut q = p.to_vec();
                q[0] = (1.0 + dot(&p[1..], &p[1..])).sqrt();
                Ok(q)
            }
            Manifold::Kendall(_) => preshape(&landmarks(p)),
            Manifold::Euclidean(_) => Ok(p.to_vec()),
        }
    }

    /// Orthogonal projection of an ambient vector onto the tangent space at `p`.
    pub fn project_tangent(&self, p: &[f64], v: &[f64]) -> Vec<f64> {
        match self {
            Manifold::Sphere(_) => lin2(1.0, v, -dot(p, v), p),
            Manifold::Hyperbolic(_) => lin2(1.0, v, minkowski(p, v), p),
            Manifold::Kendall(_) => {
                let mut w = v.to_vec();
                center(&mut w);
                let c = complex_inner(&w, p);
                let along = complex_scale(p, c);
                sub(&w, &along)
            }
            Manifold::Euclidean(_) => v.to_vec(),
        }
    }

    /// Orthonormal basis of the tangent space at `p`, built by projecting the
    /// ambient coordinate axes and orthogonalising.
    pub fn tangent_basis(&self, p: &[f64]) -> Vec<Vec<f64>> {
        let d = self.ambient_dim();
        let want = self.intrinsic_dim();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(want);
        for a in 0..d {
            if basis.len() == want {
                break;
            }
            let mut e = vec![0.0; d];
            e[a] = 1.0;
            let mut u = self.project_tangent(p, &e);
            // two passes of Gram-Schmidt keep the basis orthonormal to rounding
            for _ in 0..2 {
                for b in &basis {
                    let c = self.inner(&u, b);
                    axpy(-c, b, &mut u);
                }
            }
            let r = self.norm(&u);
            if r > 1e-6 {
                basis.push(scale(&u, 1.0 / r));
            }
        }
        basis
    }

    /// Project away the rounding drift out of the tangent space. The drift
    /// grows with the conditioning of the model, e.g. like cosh of the
    /// distance on the hyperboloid, so no fixed tolerance applies.
    fn retangent(&self, p: &[f64], v: Vec<f64>) -> Vec<f64> {
        if matches!(self, Manifold::Euclidean(_)) {
            return v;
        }
        self.project_tangent(p, &v)
    }

    /// Exponential map.
    pub fn exp(&self, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p)?;
        self.check_len(v)?;
        let t = self.norm(v);
        Ok(match self {
            Manifold::Sphere(_) | Manifold::Kendall(_) => {
                if t < TINY_NORM {
                    return Ok(p.to_vec());
                }
                let q = lin2(t.cos(), p, sinc(t), v);
                let r = norm(&q);
                scale(&q, 1.0 / r)
            }
            Manifold::Hyperbolic(_) => {
                if t < TINY_NORM {
                    return Ok(p.to_vec());
                }
                let mut q = lin2(t.cosh(), p, sinhc(t), v);
                q[0] = (1.0 + dot(&q[1..], &q[1..])).sqrt();
                q
            }
            Manifold::Euclidean(_) => crate::vecops::add(p, v),
        })
    }

    /// Logarithmic map: the initial velocity at `p1` of the minimising geodesic to `p2`.
    pub fn log(&self, p1: &[f64], p2: &[f64]) -> Result<Vec<f64>> {
        self.check_len(p1)?;
        self.check_len(p2)?;
        match self {
            Manifold::Sphere(_) => {
                let c = dot(p1, p2).clamp(-1.0, 1.0);
                let u = lin2(1.0, p2, -c, p1);
                let s = norm(&u);
                let theta = s.atan2(c);
                if theta > PI - SPHERE_CUT_MARGIN {
                    return Err(Error::CutLocus(format!("points are {theta:.9} apart, log undefined near antipodes")));
                }
                if s < 1e-300 {
                    return Ok(vec![0.0; p1.len()]);
                }
                Ok(self.retangent(p1, scale(&u, theta / s)))
            }
            Manifold::Hyperbolic(_) => {
                let c = (-minkowski(p1, p2)).max(1.0);
                let u = lin2(1.0, p2, -c, p1);
                // ‖u‖ = sinh θ; away from p1 the closed form avoids the
                // cancellation in the Minkowski norm of u
                let s = if c < 2.0 { minkowski(&u, &u).max(0.0).sqrt() } else { (c * c - 1.0).sqrt() };
                if s < 1e-300 {
                    return Ok(vec![0.0; p1.len()]);
                }
                let theta = if c < 2.0 { s.asinh() } else { c.acosh() };
                Ok(self.retangent(p1, scale(&u, theta / s)))
            }
            Manifold::Kendall(_) => {
                let c = complex_inner(p1, p2);
                let m = c.norm();
                if m < 1e-9 {
                    return Err(Error::CutLocus("shapes are at maximal distance, log undefined".into()));
                }
                let z2 = complex_scale(p2, c / m);
                let mr = m.min(1.0);
                let u = lin2(1.0, &z2, -mr, p1);
                let s = norm(&u);
                if s < 1e-300 {
                    return Ok(vec![0.0; p1.len()]);
                }
                let theta = s.atan2(mr);
                Ok(self.retangent(p1, scale(&u, theta / s)))
            }
            Manifold::Euclidean(_) => Ok(sub(p2, p1)),
        }
    }

    /// Geodesic distance; defined at antipodes where the log is not.
    pub fn distance(&self, p1: &[f64], p2: &[f64]) -> Result<f64> {
        self.check_len(p1)?;
        self.check_len(p2)?;
        Ok(match self {
            Manifold::Sphere(_) => {
                let c = dot(p1, p2).clamp(-1.0, 1.0);
                norm(&lin2(1.0, p2, -c, p1)).atan2(c)
            }
            Manifold::Hyperbolic(_) => {
                let c = (-minkowski(p1, p2)).max(1.0);
                if c < 2.0 {
                    let u = lin2(1.0, p2, -c, p1);
                    minkowski(&u, &u).max(0.0).sqrt().asinh()
                } else {
                    c.acosh()
                }
            }
            Manifold::Kendall(_) => {
                let c = complex_inner(p1, p2);
                let m = c.norm().min(1.0);
                if m < 1e-300 {
                    return Ok(PI / 2.0);
                }
                let z2 = complex_scale(p2, c / c.norm());
                norm(&lin2(1.0, &z2, -m, p1)).atan2(m)
            }
            Manifold::Euclidean(_) => crate::vecops::dist(p1, p2),
        })
    }

    /// Parallel transport of `v` from `T_{p1}` to `T_{p2}` along the minimising geodesic.
    pub fn transport(&self, p1: &[f64], v: &[f64], p2: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        match self {
            Manifold::Sphere(_) | Manifold::Hyperbolic(_) => {
                let w = self.log(p1, p2)?;
                let theta = self.norm(&w);
                if theta < TINY_NORM {
                    return Ok(self.retangent(p2, v.to_vec()));
                }
                let u = scale(&w, 1.0 / theta);
                let a = self.inner(&u, v);
                let mut out = v.to_vec();
                if matches!(self, Manifold::Sphere(_)) {
                    axpy(a * (theta.cos() - 1.0), &u, &mut out);
                    axpy(-a * theta.sin(), p1, &mut out);
                } else {
                    axpy(a * (theta.cosh() - 1.0), &u, &mut out);
                    axpy(a * theta.sinh(), p1, &mut out);
                }
                Ok(self.retangent(p2, out))
            }
            Manifold::Kendall(_) => {
                self.check_len(p1)?;
                self.check_len(p2)?;
                let c = complex_inner(p1, p2);
                let m = c.norm();
                if m < 1e-9 {
                    return Err(Error::CutLocus("shapes are at maximal distance, transport undefined".into()));
                }
                let phase = c / m;
                let z2 = complex_scale(p2, phase);
                let mr = m.min(1.0);
                let u = lin2(1.0, &z2, -mr, p1);
                let s = norm(&u);
                let mut out = v.to_vec();
                if s > 1e-300 {
                    // unitary rotation of span_C{p1, dir} carrying p1 to the aligned p2
                    let theta = s.atan2(mr);
                    let dir = scale(&u, 1.0 / s);
                    let a = complex_inner(v, p1);
                    let b = complex_inner(v, &dir);
                    let (ct, st) = (theta.cos(), theta.sin());
                    let na = a * ct - b * st;
                    let nb = a * st + b * ct;
                    let da = na - a;
                    let db = nb - b;
                    let d1 = complex_scale(p1, da);
                    let d2 = complex_scale(&dir, db);
                    axpy(1.0, &d1, &mut out);
                    axpy(1.0, &d2, &mut out);
                }
                let back = complex_scale(&out, phase.conj());
                Ok(self.retangent(p2, back))
            }
            Manifold::Euclidean(_) => Ok(v.to_vec()),
        }
    }

    /// Adjoints of the differentials of `(p, w) -> Exp(p, w)` with respect to
    /// the base point and the velocity, applied to `e ∈ T_{Exp(p,w)}`.
    /// Returns `(d_p Exp†(e), d_v Exp†(e))`, both in `T_p`.
    pub fn adjoint_dexp(&self, p: &[f64], w: &[f64], e: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_len(p)?;
        self.check_len(w)?;
        self.check_len(e)?;
        if matches!(self, Manifold::Euclidean(_)) {
            return Ok((e.to_vec(), e.to_vec()));
        }
        let yhat = self.exp(p, w)?;
        let et = self.transport(&yhat, e, p)?;
        let t = self.norm(w);
        if t < TINY_NORM {
            return Ok((et.clone(), et));
        }
        let dir = scale(w, 1.0 / t);
        let along = self.inner(&et, &dir);
        let tang = scale(&dir, along);
        let mut perp = sub(&et, &tang);
        let (cp, cv) = match self {
            Manifold::Sphere(_) | Manifold::Kendall(_) => (t.cos(), sinc(t)),
            Manifold::Hyperbolic(_) => (t.cosh(), sinhc(t)),
            Manifold::Euclidean(_) => unreachable!(),
        };
        let mut dp = scale(&tang, 1.0);
        let mut dv = tang;
        if matches!(self, Manifold::Kendall(_)) {
            // the direction i·w has curvature 4 and gets its own coefficients
            let idir = times_i(&dir);
            let a = dot(&perp, &idir);
            axpy(-a, &idir, &mut perp);
            axpy(a * (2.0 * t).cos(), &idir, &mut dp);
            axpy(a * sinc(2.0 * t), &idir, &mut dv);
        }
        axpy(cp, &perp, &mut dp);
        axpy(cv, &perp, &mut dv);
        Ok((dp, dv))
    }

    /// `d_p Exp(p, w)†(e)`.
    pub fn adjoint_dexp_p(&self, p: &[f64], w: &[f64], e: &[f64]) -> Result<Vec<f64>> {
        Ok(self.adjoint_dexp(p, w, e)?.0)
    }

    /// `d_v Exp(p, w)†(e)`.
    pub fn adjoint_dexp_v(&self, p: &[f64], w: &[f64], e: &[f64]) -> Result<Vec<f64>> {
        Ok(self.adjoint_dexp(p, w, e)?.1)
    }

    /// A random point: Gaussian ambient draw pushed onto the manifold.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let g: Vec<f64> = (0..self.ambient_dim()).map(|_| rng.sample(StandardNormal)).collect();
            if let Ok(p) = self.project_point(&g) {
                return p;
            }
        }
    }

    /// A tangent vector at `p` whose coordinates in an orthonormal frame are iid N(0, s²).
    pub fn random_tangent<R: Rng + ?Sized>(&self, p: &[f64], s: f64, rng: &mut R) -> Vec<f64> {
        let d = self.ambient_dim();
        match self {
            Manifold::Hyperbolic(_) => {
                // isotropic at the origin, then carried to p
                let mut g = vec![0.0; d];
                for x in g.iter_mut().skip(1) {
                    *x = s * rng.sample::<f64, _>(StandardNormal);
                }
                let o = self.origin();
                self.transport(&o, &g, p).expect("hyperbolic transport is total")
            }
            _ => {
                let g: Vec<f64> = (0..d).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect();
                self.project_tangent(p, &g)
            }
        }
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Manifold::Sphere(n) => write!(f, "sphere:{n}"),
            Manifold::Hyperbolic(n) => write!(f, "hyperbolic:{n}"),
            Manifold::Kendall(k) => write!(f, "kendall:{k}"),
            Manifold::Euclidean(n) => write!(f, "euclidean:{n}"),
        }
    }
}

impl FromStr for Manifold {
    type Err = Error;

    /// Parses `sphere:2`, `hyperbolic:3`, `kendall:50` or `euclidean:4`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, dim) = s.split_once(':').ok_or_else(|| Error::Parse(format!("expected <kind>:<dim>, got '{s}'")))?;
        let d: usize = dim.trim().parse().map_err(|_| Error::Parse(format!("bad dimension in '{s}'")))?;
        let m = match kind.trim().to_ascii_lowercase().as_str() {
            "sphere" => Manifold::Sphere(d),
            "hyperbolic" => Manifold::Hyperbolic(d),
            "kendall" | "shape" => Manifold::Kendall(d),
            "euclidean" => Manifold::Euclidean(d),
            other => return Err(Error::Parse(format!("unknown manifold kind '{other}'"))),
        };
        m.validate()
    }
}

impl serde::Serialize for Manifold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Manifold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
