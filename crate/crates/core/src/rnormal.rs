//! Riemannian normal distribution on S^n and H^n, density proportional to
//! `exp(-d(y, μ)² / 2σ²)`, sampled exactly by inverting the radial CDF.
//!
//! The radial integrals ∫₀^R sin^m(r) e^{-r²/2σ²} dr and its sinh analogue
//! have closed forms as finite sums of error functions (complex arguments for
//! the sphere). `G` and `H` below are those antiderivatives.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

use crate::error::{Error, Result};
use crate::manifold::Manifold;
use crate::specfun::{
    erf, erf_complex_scaled, inv_reg_lower_gamma, ln_gamma_unchecked, reg_lower_gamma, reg_upper_gamma, ERF_STRIP,
};
use crate::vecops::scale;

const TABLE_POINTS: usize = 257;
const QUANTILE_TOL: f64 = 1e-10;
const QUANTILE_CAP: usize = 200;

fn binomial(m: u32, j: u32) -> f64 {
    (0..j).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!("σ² must be positive and finite, got {sigma2}")));
    }
    Ok(())
}

fn g_complex(m: u32, sigma2: f64, r: f64) -> Result<Complex64> {
    let s = (sigma2 / 2.0).sqrt();
    if s * m as f64 > ERF_STRIP {
        return Err(Error::Range(format!("sphere radial law needs (n-1)σ/√2 <= {ERF_STRIP}, got {}", s * m as f64)));
    }
    let x = r / (2.0 * sigma2).sqrt();
    let mut sum = Complex64::new(0.0, 0.0);
    for j in 0..=m {
        let k = m as f64 - 2.0 * j as f64;
        // e^{-k²σ²/2} erf(x + i s k) is exactly the scaled error function
        let term = erf_complex_scaled(Complex64::new(x, s * k))?;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        sum += term * (sign * binomial(m, j));
    }
    Ok(Complex64::i().powu(m) * sum * ((PI * sigma2 / 2.0).sqrt() / 2f64.powi(m as i32)))
}

/// Antiderivative `G_{m,σ²}(R)` of `sin^m(r) e^{-r²/2σ²}` on [0, π].
pub fn g_function(m: u32, sigma2: f64, r: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    if !(0.0..=PI).contains(&r) {
        return Err(Error::Domain(format!("G is defined on [0, π], got R = {r}")));
    }
    let v = g_complex(m, sigma2, r)?;
    if v.im.abs() > 1e-9 {
        return Err(Error::Range(format!("G has imaginary residue {}", v.im)));
    }
    Ok(v.re)
}

fn erfc_pos(x: f64) -> f64 {
    reg_upper_gamma(0.5, x * x).expect("valid gamma arguments")
}

fn erfc(x: f64) -> f64 {
    if x >= 0.0 {
        erfc_pos(x)
    } else {
        2.0 - erfc_pos(-x)
    }
}

// erf(b) - erf(a) without cancellation when a and b share a sign
fn erf_diff(a: f64, b: f64) -> f64 {
    if a >= 0.0 && b >= 0.0 {
        erfc_pos(a) - erfc_pos(b)
    } else if a <= 0.0 && b <= 0.0 {
        erfc_pos(-b) - erfc_pos(-a)
    } else {
        erf(b) - erf(a)
    }
}

struct HTerms {
    coef: Vec<f64>,
    shift: Vec<f64>,
    inv: f64,
}

fn h_terms(m: u32, sigma2: f64) -> HTerms {
    let s = (sigma2 / 2.0).sqrt();
    let pre = (PI * sigma2 / 2.0).sqrt() / 2f64.powi(m as i32);
    let mut coef = Vec::new();
    let mut shift = Vec::new();
    for j in 0..=m {
        let k = m as f64 - 2.0 * j as f64;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        coef.push(pre * sign * binomial(m, j) * (k * k * sigma2 / 2.0).exp());
        shift.push(-s * k);
    }
    HTerms { coef, shift, inv: 1.0 / (2.0 * sigma2).sqrt() }
}

/// Antiderivative `H_{m,σ²}(R)` of `sinh^m(r) e^{-r²/2σ²}` on [0, ∞).
pub fn h_function(m: u32, sigma2: f64, r: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("H is defined for R >= 0, got {r}")));
    }
    let t = h_terms(m, sigma2);
    Ok(t.coef.iter().zip(&t.shift).map(|(c, a)| c * erf(r * t.inv + a)).sum())
}

/// `lim_{R→∞} H_{m,σ²}(R)`.
pub fn h_limit(m: u32, sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    Ok(h_terms(m, sigma2).coef.iter().sum())
}

/// `H(R) - H(0)`, summed term by term in a cancellation-free form.
pub fn h_increment(m: u32, sigma2: f64, r: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    let t = h_terms(m, sigma2);
    Ok(t.coef.iter().zip(&t.shift).map(|(c, a)| c * erf_diff(*a, r * t.inv + a)).sum())
}

// H(∞) - H(R)
fn h_tail(t: &HTerms, r: f64) -> f64 {
    t.coef.iter().zip(&t.shift).map(|(c, a)| c * erfc(r * t.inv + a)).sum()
}

#[derive(Clone, Debug)]
enum Radial {
    Sphere { m: u32, g0: f64, mass: f64 },
    Hyperbolic { m: u32, mass: f64, rmax: f64 },
    Flat { n: usize },
}

/// Riemannian normal law with dispersion σ on a sphere, hyperbolic space or R^n.
/// The centre is supplied at sampling time.
#[derive(Clone, Debug)]
pub struct RiemannianNormal {
    manifold: Manifold,
    sigma: f64,
    radial: Radial,
    table_r: Vec<f64>,
    table_f: Vec<f64>,
}

impl RiemannianNormal {
    pub fn new(manifold: Manifold, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("σ must be positive and finite, got {sigma}")));
        }
        let sigma2 = sigma * sigma;
        let radial = match manifold.validate()? {
            Manifold::Sphere(n) => {
                let m = (n - 1) as u32;
                let g0 = g_function(m, sigma2, 0.0)?;
                let mass = g_function(m, sigma2, PI)? - g0;
                Radial::Sphere { m, g0, mass }
            }
            Manifold::Hyperbolic(n) => {
                let m = (n - 1) as u32;
                let mass = h_tail(&h_terms(m, sigma2), 0.0);
                Radial::Hyperbolic { m, mass, rmax: (n - 1) as f64 * sigma2 + 40.0 * sigma }
            }
            Manifold::Euclidean(n) => Radial::Flat { n },
            Manifold::Kendall(_) => {
                return Err(Error::Domain(
                    "the Riemannian normal law is only available on spheres, hyperbolic and flat spaces".into(),
                ))
            }
        };
        let mut law = RiemannianNormal { manifold, sigma, radial, table_r: Vec::new(), table_f: Vec::new() };
        if !matches!(law.radial, Radial::Flat { .. }) {
            let top = law.support_max();
            law.table_r = (0..TABLE_POINTS).map(|i| top * i as f64 / (TABLE_POINTS - 1) as f64).collect();
            law.table_f = law.table_r.iter().map(|&r| law.radial_cdf(r)).collect();
            law.table_f[TABLE_POINTS - 1] = 1.0;
        }
        Ok(law)
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn support_max(&self) -> f64 {
        match self.radial {
            Radial::Sphere { .. } => PI,
            Radial::Hyperbolic { rmax, .. } => rmax,
            Radial::Flat { .. } => f64::INFINITY,
        }
    }

    fn surface_factor(n: usize) -> f64 {
        let nf = n as f64;
        2.0 * (0.5 * nf * PI.ln() - ln_gamma_unchecked(nf / 2.0)).exp()
    }

    /// Normalising constant of the density `exp(-d²/2σ²)`.
    pub fn normalizing_constant(&self) -> f64 {
        let n = self.manifold.intrinsic_dim();
        match self.radial {
            Radial::Sphere { mass, .. } | Radial::Hyperbolic { mass, .. } => Self::surface_factor(n) * mass,
            Radial::Flat { n } => (2.0 * PI * self.sigma * self.sigma).powf(n as f64 / 2.0),
        }
    }

    /// Density of the distance `d(y, μ)`.
    pub fn radial_density(&self, r: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        match self.radial {
            Radial::Sphere { m, mass, .. } => {
                if !(0.0..=PI).contains(&r) {
                    return 0.0;
                }
                r.sin().powi(m as i32) * (-r * r / (2.0 * s2)).exp() / mass
            }
            Radial::Hyperbolic { m, mass, .. } => {
                if r < 0.0 {
                    return 0.0;
                }
                // sinh^m e^{-r²/2σ²} in log space to avoid overflow
                let lsh = if r > 0.0 {
                    m as f64 * (r.sinh().ln())
                } else if m == 0 {
                    0.0
                } else {
                    return 0.0;
                };
                (lsh - r * r / (2.0 * s2)).exp() / mass
            }
            Radial::Flat { n } => {
                if r < 0.0 {
                    return 0.0;
                }
                let nf = n as f64;
                let a = nf / 2.0;
                let z = r * r / (2.0 * s2);
                // chi law with scale σ
                ((a - 1.0) * z.ln() - z - ln_gamma_unchecked(a)).exp() * r / s2
            }
        }
    }

    /// `P(d(y, μ) <= r)`.
    pub fn radial_cdf(&self, r: f64) -> f64 {
        if !(r > 0.0) {
            return 0.0;
        }
        let s2 = self.sigma * self.sigma;
        let f = match self.radial {
            Radial::Sphere { m, g0, mass } => {
                if r >= PI {
                    return 1.0;
                }
                (g_complex(m, s2, r).expect("strip checked at construction").re - g0) / mass
            }
            Radial::Hyperbolic { m, mass, .. } => {
                let t = h_terms(m, s2);
                1.0 - h_tail(&t, r) / mass
            }
            Radial::Flat { n } => reg_lower_gamma(n as f64 / 2.0, r * r / (2.0 * s2)).expect("valid gamma arguments"),
        };
        f.clamp(0.0, 1.0)
    }

    /// Inverse of [`radial_cdf`](Self::radial_cdf) on (0, 1).
    pub fn radial_quantile(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {t}")));
        }
        if let Radial::Flat { n } = self.radial {
            return Ok(self.sigma * (2.0 * inv_reg_lower_gamma(n as f64 / 2.0, t)?).sqrt());
        }
        let i = self.table_f.partition_point(|&f| f <= t).clamp(1, TABLE_POINTS - 1);
        let (mut lo, mut hi) = (self.table_r[i - 1], self.table_r[i]);
        let (flo, fhi) = (self.table_f[i - 1], self.table_f[i]);
        let mut r = if fhi > flo { lo + (hi - lo) * (t - flo) / (fhi - flo) } else { 0.5 * (lo + hi) };
        for _ in 0..QUANTILE_CAP {
            let g = self.radial_cdf(r) - t;
            if g.abs() <= QUANTILE_TOL {
                return Ok(r);
            }
            if g < 0.0 {
                lo = r;
            } else {
                hi = r;
            }
            if hi - lo <= 4.0 * f64::EPSILON * hi.max(1e-300) {
                return Ok(r);
            }
            let d = self.radial_density(r);
            let step = if d > 0.0 { r - g / d } else { f64::NAN };
            r = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        }
        Err(Error::NoConvergence { what: "radial quantile", iterations: QUANTILE_CAP })
    }

    /// Draw one point with centre `mu`.
    pub fn sample<R: Rng + ?Sized>(&self, mu: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let u = loop {
            let t: f64 = rng.random();
            if t > 0.0 {
                break t;
            }
        };
        let r = self.radial_quantile(u)?;
        let dir = unit_tangent(self.manifold, mu, rng);
        self.manifold.exp(mu, &scale(&dir, r))
    }
}

/// Uniformly distributed unit tangent vector at `p`.
pub fn unit_tangent<R: Rng + ?Sized>(m: Manifold, p: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let g = m.random_tangent(p, 1.0, rng);
        let r = m.norm(&g);
        if r > 1e-12 {
            return scale(&g, 1.0 / r);
        }
    }
}

/// Largest tangent norm accepted by the tangent-space samplers before redrawing.
fn wrap_limit(m: Manifold) -> f64 {
    match m {
        Manifold::Sphere(_) => PI,
        Manifold::Kendall(_) => PI / 2.0,
        _ => f64::INFINITY,
    }
}

/// `Exp(μ, scale·Z·sqrt(ν/χ²_ν))` with `Z` standard normal in `T_μ`: a
/// multivariate t in the tangent space. Draws that would wrap past the cut
/// locus of a compact space are redrawn.
pub fn sample_tangent_t<R: Rng + ?Sized>(
    m: Manifold,
    mu: &[f64],
    scale_: f64,
    nu: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(nu > 0.0) || !(scale_ > 0.0) {
        return Err(Error::Domain(format!("tangent t needs ν > 0 and scale > 0, got ν={nu}, scale={scale_}")));
    }
    let chi = ChiSquared::new(nu).map_err(|e| Error::Domain(e.to_string()))?;
    let limit = wrap_limit(m);
    loop {
        let z = m.random_tangent(mu, 1.0, rng);
        let w: f64 = chi.sample(rng);
        let v = scale(&z, scale_ * (nu / w).sqrt());
        if m.norm(&v) < limit {
            return m.exp(mu, &v);
        }
    }
}

/// `Exp(μ, σZ)` with `Z` standard normal in `T_μ`, redrawn past the cut locus.
pub fn sample_tangent_normal<R: Rng + ?Sized>(m: Manifold, mu: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    let limit = wrap_limit(m);
    loop {
        let v = m.random_tangent(mu, sigma, rng);
        if m.norm(&v) < limit {
            return m.exp(mu, &v);
        }
    }
}

/// Error laws used by the simulation harness.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// No noise.
    None,
    /// Riemannian normal with dispersion `sigma`.
    Normal { sigma: f64 },
    /// Tangent-space multivariate t with covariance scale `scale²·I` and `nu` degrees of freedom.
    TangentT { scale: f64, nu: f64 },
    /// Two-component Riemannian normal mixture.
    Contaminated { sigma_main: f64, sigma_out: f64, p_out: f64 },
    /// Tangent-space Gaussian; the only option on shape space.
    TangentNormal { sigma: f64 },
}

impl NoiseSpec {
    /// Mixture used in the simulation study: σ = π/24 w.p. 0.9, σ = π/6 w.p. 0.1.
    pub fn default_contaminated() -> Self {
        NoiseSpec::Contaminated { sigma_main: PI / 24.0, sigma_out: PI / 6.0, p_out: 0.1 }
    }

    /// Short label used in result tables.
    pub fn label(&self) -> &'static str {
        match self {
            NoiseSpec::None => "none",
            NoiseSpec::Normal { .. } => "N",
            NoiseSpec::TangentT { .. } => "T",
            NoiseSpec::Contaminated { .. } => "C",
            NoiseSpec::TangentNormal { .. } => "TN",
        }
    }
}

/// A [`NoiseSpec`] with its radial tables built for one manifold.
#[derive(Clone, Debug)]
pub enum Noise {
    None,
    Normal(RiemannianNormal),
    TangentT { manifold: Manifold, scale: f64, nu: f64 },
    Contaminated { main: RiemannianNormal, out: RiemannianNormal, p_out: f64 },
    TangentNormal { manifold: Manifold, sigma: f64 },
}

impl Noise {
    pub fn new(m: Manifold, spec: NoiseSpec) -> Result<Self> {
        Ok(match spec {
            NoiseSpec::None => Noise::None,
            NoiseSpec::Normal { sigma } => Noise::Normal(RiemannianNormal::new(m, sigma)?),
            NoiseSpec::TangentT { scale, nu } => {
                if !(nu > 0.0 && scale > 0.0) {
                    return Err(Error::Domain("tangent t needs ν > 0 and scale > 0".into()));
                }
                Noise::TangentT { manifold: m, scale, nu }
            }
            NoiseSpec::Contaminated { sigma_main, sigma_out, p_out } => {
                if !(0.0..=1.0).contains(&p_out) {
                    return Err(Error::Domain(format!("mixing probability must lie in [0, 1], got {p_out}")));
                }
                Noise::Contaminated {
                    main: RiemannianNormal::new(m, sigma_main)?,
                    out: RiemannianNormal::new(m, sigma_out)?,
                    p_out,
                }
            }
            NoiseSpec::TangentNormal { sigma } => {
                if !(sigma > 0.0) {
                    return Err(Error::Domain("σ must be positive".into()));
                }
                Noise::TangentNormal { manifold: m, sigma }
            }
        })
    }

    /// Perturb `mu`.
    pub fn sample<R: Rng + ?Sized>(&self, mu: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Noise::None => Ok(mu.to_vec()),
            Noise::Normal(law) => law.sample(mu, rng),
            Noise::TangentT { manifold, scale, nu } => sample_tangent_t(*manifold, mu, *scale, *nu, rng),
            Noise::Contaminated { main, out, p_out } => {
                if rng.random::<f64>() < *p_out {
                    out.sample(mu, rng)
                } else {
                    main.sample(mu, rng)
                }
            }
            Noise::TangentNormal { manifold, sigma } => sample_tangent_normal(*manifold, mu, *sigma, rng),
        }
    }
}

/// Draw from the two-component mixture directly.
pub fn sample_contaminated<R: Rng + ?Sized>(
    m: Manifold,
    mu: &[f64],
    sigma_main: f64,
    sigma_out: f64,
    p_out: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Noise::new(m, NoiseSpec::Contaminated { sigma_main, sigma_out, p_out })?.sample(mu, rng)
}
