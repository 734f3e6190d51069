//! Tuning constants for robust fitting on an `n`-dimensional manifold.
//!
//! Under tangent-space normal errors the efficiencies of the Huber and Tukey
//! estimators relative to least squares have closed forms in terms of
//! incomplete gamma functions. The cutoffs that reach a target efficiency
//! (0.95 by default) are found by safeguarded Newton iteration, and the
//! residual scale is estimated as MAD / ξ(n).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::specfun::{inv_reg_lower_gamma, ln_gamma_unchecked, reg_lower_gamma, reg_upper_gamma};

pub const DEFAULT_EFFICIENCY: f64 = 0.95;

const NEWTON_CAP: usize = 200;
const NEWTON_TOL: f64 = 1e-8;

fn check_dim(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    Ok(n as f64)
}

fn check_cutoff(c: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Domain(format!("cutoff must be positive and finite, got {c}")));
    }
    Ok(())
}

/// Median of the norm of a standard normal vector in R^n.
pub fn xi(n: usize) -> Result<f64> {
    let nf = check_dim(n)?;
    Ok((2.0 * inv_reg_lower_gamma(nf / 2.0, 0.5)?).sqrt())
}

// γ(s, z) and Γ(s, z) divided by Γ(n/2 + 1), which keeps large n finite.
struct Scaled {
    ln_g: f64,
    z: f64,
}

impl Scaled {
    fn new(n: f64, c: f64) -> Self {
        Scaled { ln_g: ln_gamma_unchecked(n / 2.0 + 1.0), z: 0.5 * c * c }
    }

    fn lower(&self, s: f64) -> f64 {
        reg_lower_gamma(s, self.z).expect("valid gamma arguments") * (ln_gamma_unchecked(s) - self.ln_g).exp()
    }

    fn upper(&self, s: f64) -> f64 {
        reg_upper_gamma(s, self.z).expect("valid gamma arguments") * (ln_gamma_unchecked(s) - self.ln_g).exp()
    }
}

// Huber terms H1..H4 divided by Γ(n/2 + 1). H3 = dH1/dc, H4 = dH2/dc.
fn huber_scaled(c: f64, n: f64) -> [f64; 4] {
    let g = Scaled::new(n, c);
    let z = g.z;
    let k = 2f64.powf(-1.5) * (n - 1.0);
    let tail = if n > 1.0 { g.upper((n - 1.0) / 2.0) } else { 0.0 };
    let h1 = 0.5 * n * g.lower(n / 2.0) + k * c * tail;
    let h2 = g.lower(n / 2.0 + 1.0) + z * g.upper(n / 2.0);
    let edge = (-(n / 2.0) * std::f64::consts::LN_2 + (n - 1.0) * c.ln() - z - g.ln_g).exp();
    let h3 = edge + k * tail;
    let h4 = c * g.upper(n / 2.0);
    [h1, h2, h3, h4]
}

// Tukey terms T1..T4 divided by Γ(n/2 + 1). T3 = dT1/dc, T4 = dT2/dc.
fn tukey_scaled(c: f64, n: f64) -> [f64; 4] {
    let g = Scaled::new(n, c);
    let l = |j: f64| g.lower((n + j) / 2.0);
    let (l0, l2, l4, l6, l8, l10) = (l(0.0), l(2.0), l(4.0), l(6.0), l(8.0), l(10.0));
    let ci = 1.0 / c;
    let ci2 = ci * ci;
    let t1 = 2.0 * (n + 4.0) * ci2 * ci2 * l4 - 2.0 * (n + 2.0) * ci2 * l2 + 0.5 * n * l0;
    let t2 = l2 - 8.0 * ci2 * l4 + 24.0 * ci2 * ci2 * l6 - 32.0 * ci2.powi(3) * l8 + 16.0 * ci2.powi(4) * l10;
    let t3 = -8.0 * (n + 4.0) * ci2 * ci2 * ci * l4 + 4.0 * (n + 2.0) * ci2 * ci * l2;
    let t4 = 16.0 * ci2 * ci * l4 - 96.0 * ci2 * ci2 * ci * l6 + 192.0 * ci2.powi(3) * ci * l8
        - 128.0 * ci2.powi(4) * ci * l10;
    [t1, t2, t3, t4]
}

fn unscale(terms: [f64; 4], n: f64) -> [f64; 4] {
    let g = ln_gamma_unchecked(n / 2.0 + 1.0).exp();
    terms.map(|t| t * g)
}

/// `[H1, H2, H3, H4]`: H1 = Γ(n/2+1)·E[J_ψ]₁₁ and H2 = Γ(n/2+1)·E[ψψᵀ]₁₁ for the
/// Huber ψ under standard normal errors, H3 and H4 their c-derivatives.
pub fn huber_terms(c: f64, n: usize) -> Result<[f64; 4]> {
    let nf = check_dim(n)?;
    check_cutoff(c)?;
    Ok(unscale(huber_scaled(c, nf), nf))
}

/// `[T1, T2, T3, T4]`, the Tukey-biweight analogues of [`huber_terms`].
pub fn tukey_terms(c: f64, n: usize) -> Result<[f64; 4]> {
    let nf = check_dim(n)?;
    check_cutoff(c)?;
    Ok(unscale(tukey_scaled(c, nf), nf))
}

fn ratio_and_slope(t: [f64; 4]) -> (f64, f64) {
    let [a1, a2, a3, a4] = t;
    (a1 * a1 / a2, (2.0 * a1 * a3 * a2 - a1 * a1 * a4) / (a2 * a2))
}

/// Efficiency of the Huber estimator relative to least squares.
pub fn are_huber(c: f64, n: usize) -> Result<f64> {
    let nf = check_dim(n)?;
    check_cutoff(c)?;
    Ok(ratio_and_slope(huber_scaled(c, nf)).0)
}

/// d/dc of [`are_huber`].
pub fn are_huber_derivative(c: f64, n: usize) -> Result<f64> {
    let nf = check_dim(n)?;
    check_cutoff(c)?;
    Ok(ratio_and_slope(huber_scaled(c, nf)).1)
}

/// Efficiency of the Tukey-biweight estimator relative to least squares.
pub fn are_tukey(c: f64, n: usize) -> Result<f64> {
    let nf = check_dim(n)?;
    check_cutoff(c)?;
    Ok(ratio_and_slope(tukey_scaled(c, nf)).0)
}

/// d/dc of [`are_tukey`].
pub fn are_tukey_derivative(c: f64, n: usize) -> Result<f64> {
    let nf = check_dim(n)?;
    check_cutoff(c)?;
    Ok(ratio_and_slope(tukey_scaled(c, nf)).1)
}

/// Efficiency of the L1 estimator, the c → 0 limit of the Huber efficiency.
pub fn are_l1(n: usize) -> Result<f64> {
    let nf = check_dim(n)?;
    let lg = ln_gamma_unchecked;
    Ok((2.0 * lg((nf + 1.0) / 2.0) - lg(nf / 2.0) - lg(nf / 2.0 + 1.0)).exp())
}

/// Efficiency terms as a function of the cutoff and the dimension.
type Terms = fn(f64, f64) -> [f64; 4];

/// Cutoff at which the Huber or Tukey estimator reaches efficiency `target`.
pub fn solve_cutoff(kind: LossKind, n: usize, target: f64) -> Result<f64> {
    let nf = check_dim(n)?;
    let (lo_eff, eval): (f64, Terms) = match kind {
        LossKind::Huber => (are_l1(n)?, huber_scaled),
        LossKind::Tukey => (0.0, tukey_scaled),
        _ => return Err(Error::Domain(format!("{kind} loss has no cutoff"))),
    };
    if !(target > lo_eff && target < 1.0) {
        return Err(Error::Unattainable { target, lo: lo_eff, hi: 1.0 });
    }
    let f = |c: f64| {
        let (a, da) = ratio_and_slope(eval(c, nf));
        (a - target, da)
    };
    let x0 = xi(n)? * if kind == LossKind::Huber { 2.0 } else { 4.0 };

    // bracket the root; efficiency increases with c
    let (mut lo, mut hi) = (x0, x0);
    let mut grow = 0;
    while f(lo).0 > 0.0 {
        lo *= 0.5;
        grow += 1;
        if grow > 80 {
            return Err(Error::NoConvergence { what: "cutoff bracketing", iterations: grow });
        }
    }
    while f(hi).0 < 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 80 || !hi.is_finite() {
            return Err(Error::NoConvergence { what: "cutoff bracketing", iterations: grow });
        }
    }

    let mut c = x0.clamp(lo, hi);
    for _ in 0..NEWTON_CAP {
        let (g, dg) = f(c);
        if g.abs() <= NEWTON_TOL {
            return Ok(c);
        }
        if g < 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let step = c - g / dg;
        c = if dg > 0.0 && step > lo && step < hi { step } else { 0.5 * (lo + hi) };
    }
    Err(Error::NoConvergence { what: "cutoff Newton iteration", iterations: NEWTON_CAP })
}

/// ξ, both cutoffs and the L1 efficiency for one dimension.
#[derive(Clone, Debug, Serialize)]
pub struct TuningConstants {
    pub n: usize,
    pub target: f64,
    pub xi: f64,
    /// `None` when the target is below the L1 efficiency and so out of reach.
    pub c_huber: Option<f64>,
    pub c_tukey: f64,
    pub are_l1: f64,
}

pub fn tune(n: usize, target: f64) -> Result<TuningConstants> {
    let c_huber = match solve_cutoff(LossKind::Huber, n, target) {
        Ok(c) => Some(c),
        Err(Error::Unattainable { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(TuningConstants {
        n,
        target,
        xi: xi(n)?,
        c_huber,
        c_tukey: solve_cutoff(LossKind::Tukey, n, target)?,
        are_l1: are_l1(n)?,
    })
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;

    #[test]
    fn table_one_spot_checks() {
        assert!((xi(1).unwrap() - 0.67449).abs() < 1e-5);
        assert!((xi(2).unwrap() - 1.17741).abs() < 1e-5);
        assert!((are_huber(1.345, 1).unwrap() - 0.95).abs() < 1e-4);
        assert!((are_huber(1.86934, 6).unwrap() - 0.95).abs() < 1e-4);
        assert!((are_tukey(4.68506, 1).unwrap() - 0.95).abs() < 1e-4);
        assert!((are_tukey(5.49025, 3).unwrap() - 0.95).abs() < 1e-4);
        assert!((solve_cutoff(LossKind::Huber, 4, 0.95).unwrap() - 1.73107).abs() < 1e-4);
        assert!((solve_cutoff(LossKind::Tukey, 2, 0.95).unwrap() - 5.12299).abs() < 1e-4);
        assert!((are_l1(1).unwrap() - 0.63662).abs() < 1e-5);
    }

    #[test]
    fn limits() {
        assert!((are_huber(50.0, 3).unwrap() - 1.0).abs() < 1e-6);
        assert!((are_tukey(100.0, 3).unwrap() - 1.0).abs() < 1e-6);
        for n in 1..=10 {
            assert!((are_huber(1e-4, n).unwrap() - are_l1(n).unwrap()).abs() < 1e-3);
        }
    }

    #[test]
    fn huber_out_of_reach_in_high_dimension() {
        assert!(are_l1(10).unwrap() > 0.95);
        assert!(matches!(solve_cutoff(LossKind::Huber, 10, 0.95), Err(Error::Unattainable { .. })));
        let t = tune(10, 0.95).unwrap();
        assert!(t.c_huber.is_none());
        assert!(solve_cutoff(LossKind::Huber, 10, 0.99).is_ok());
        assert!(solve_cutoff(LossKind::L1, 3, 0.95).is_err());
        assert!(solve_cutoff(LossKind::Tukey, 3, 1.0).is_err());
    }

    #[test]
    fn solved_cutoffs_hit_target() {
        for n in [1, 2, 3, 7, 20, 96] {
            let ct = solve_cutoff(LossKind::Tukey, n, 0.95).unwrap();
            assert!((are_tukey(ct, n).unwrap() - 0.95).abs() <= 1e-8);
            if n < 10 {
                let ch = solve_cutoff(LossKind::Huber, n, 0.95).unwrap();
                assert!((are_huber(ch, n).unwrap() - 0.95).abs() <= 1e-8);
            }
        }
        for target in [0.7, 0.8, 0.9, 0.99] {
            let ct = solve_cutoff(LossKind::Tukey, 3, target).unwrap();
            assert!((are_tukey(ct, 3).unwrap() - target).abs() <= 1e-8);
        }
    }

    #[test]
    fn input_validation() {
        assert!(xi(0).is_err());
        assert!(are_huber(0.0, 2).is_err());
        assert!(are_tukey(-1.0, 2).is_err());
        assert!(are_l1(0).is_err());
    }
}
