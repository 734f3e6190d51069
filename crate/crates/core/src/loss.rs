//! M-type losses on residual norms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residuals below this are treated as zero by the L1 weight.
pub const L1_WEIGHT_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L2,
    L1,
    Huber,
    Tukey,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::L2, LossKind::L1, LossKind::Huber, LossKind::Tukey];

    /// Whether the loss needs a cutoff.
    pub fn is_tuned(self) -> bool {
        matches!(self, LossKind::Huber | LossKind::Tukey)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L2 => "l2",
            LossKind::L1 => "l1",
            LossKind::Huber => "huber",
            LossKind::Tukey => "tukey",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(LossKind::L2),
            "l1" => Ok(LossKind::L1),
            "huber" => Ok(LossKind::Huber),
            "tukey" | "biweight" => Ok(LossKind::Tukey),
            _ => Err(Error::Parse(format!("unknown loss '{s}'"))),
        }
    }
}

/// A loss together with its current cutoff.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    cutoff: Option<f64>,
}

impl LossSpec {
    pub fn l2() -> Self {
        LossSpec { kind: LossKind::L2, cutoff: None }
    }

    pub fn l1() -> Self {
        LossSpec { kind: LossKind::L1, cutoff: None }
    }

    pub fn huber(c: f64) -> Result<Self> {
        Self::new(LossKind::Huber, Some(c))
    }

    pub fn tukey(c: f64) -> Result<Self> {
        Self::new(LossKind::Tukey, Some(c))
    }

    pub fn new(kind: LossKind, cutoff: Option<f64>) -> Result<Self> {
        match (kind.is_tuned(), cutoff) {
            (true, Some(c)) if c > 0.0 && c.is_finite() => Ok(LossSpec { kind, cutoff }),
            (true, _) => Err(Error::Domain(format!("{kind} loss needs a positive finite cutoff"))),
            (false, None) => Ok(LossSpec { kind, cutoff: None }),
            (false, Some(_)) => Err(Error::Domain(format!("{kind} loss takes no cutoff"))),
        }
    }

    pub fn cutoff(&self) -> Option<f64> {
        self.cutoff
    }

    fn c(&self) -> f64 {
        self.cutoff.expect("tuned loss always carries a cutoff")
    }

    /// ρ(t) for t ≥ 0.
    pub fn rho(&self, t: f64) -> f64 {
        match self.kind {
            LossKind::L2 => 0.5 * t * t,
            LossKind::L1 => t,
            LossKind::Huber => {
                let c = self.c();
                if t < c {
                    0.5 * t * t
                } else {
                    c * (t - 0.5 * c)
                }
            }
            LossKind::Tukey => {
                let c = self.c();
                let c26 = c * c / 6.0;
                if t < c {
                    let q = 1.0 - (t / c).powi(2);
                    c26 * (1.0 - q * q * q)
                } else {
                    c26
                }
            }
        }
    }

    /// ρ'(t) for t ≥ 0.
    pub fn psi(&self, t: f64) -> f64 {
        match self.kind {
            LossKind::L2 => t,
            LossKind::L1 => 1.0,
            LossKind::Huber => t.min(self.c()),
            LossKind::Tukey => {
                let c = self.c();
                if t < c {
                    let q = 1.0 - (t / c).powi(2);
                    t * q * q
                } else {
                    0.0
                }
            }
        }
    }

    /// ρ'(r)/r with its limit at r = 0; the L1 weight is capped at 1/[`L1_WEIGHT_FLOOR`].
    pub fn weight(&self, r: f64) -> f64 {
        match self.kind {
            LossKind::L2 => 1.0,
            LossKind::L1 => 1.0 / r.max(L1_WEIGHT_FLOOR),
            LossKind::Huber => {
                let c = self.c();
                if r < c {
                    1.0
                } else {
                    c / r
                }
            }
            LossKind::Tukey => {
                let c = self.c();
                if r < c {
                    let q = 1.0 - (r / c).powi(2);
                    q * q
                } else {
                    0.0
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_examples() {
        assert_eq!(LossSpec::l2().rho(2.0), 2.0);
        assert_eq!(LossSpec::l1().rho(2.5), 2.5);
        let c = 1.345;
        let h = LossSpec::huber(c).unwrap();
        assert!((h.rho(c) - 0.5 * c * c).abs() < 1e-15);
        assert!((h.rho(c - 1e-12) - h.rho(c)).abs() < 1e-11);
        let c = 4.685;
        let t = LossSpec::tukey(c).unwrap();
        assert_eq!(t.rho(c), c * c / 6.0);
        assert_eq!(t.rho(10.0 * c), c * c / 6.0);
        assert!((t.rho(c * (1.0 - 1e-12)) - c * c / 6.0).abs() < 1e-10);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(LossSpec::l2().weight(3.7), 1.0);
        assert_eq!(LossSpec::huber(2.0).unwrap().weight(4.0), 0.5);
        assert_eq!(LossSpec::tukey(2.0).unwrap().weight(1.0), 9.0 / 16.0);
        assert_eq!(LossSpec::tukey(2.0).unwrap().weight(2.0), 0.0);
        assert_eq!(LossSpec::l1().weight(0.0), 1e10);
        assert_eq!(LossSpec::huber(2.0).unwrap().weight(0.0), 1.0);
        assert_eq!(LossSpec::tukey(2.0).unwrap().weight(0.0), 1.0);
    }

    #[test]
    fn cutoff_validation() {
        assert!(LossSpec::huber(0.0).is_err());
        assert!(LossSpec::tukey(f64::NAN).is_err());
        assert!(LossSpec::new(LossKind::L2, Some(1.0)).is_err());
        assert!(LossSpec::new(LossKind::Huber, None).is_err());
        assert_eq!("TUKEY".parse::<LossKind>().unwrap(), LossKind::Tukey);
        assert!("hampel".parse::<LossKind>().is_err());
    }

    fn specs() -> Vec<LossSpec> {
        vec![LossSpec::l2(), LossSpec::l1(), LossSpec::huber(1.3).unwrap(), LossSpec::tukey(2.7).unwrap()]
    }

    #[test]
    fn weight_times_r_is_derivative() {
        for s in specs() {
            for i in 0..60 {
                let r = 10f64.powf(-4.0 + i as f64 * 0.1);
                assert!((s.weight(r) * r - s.psi(r)).abs() <= 1e-12 * (1.0 + s.psi(r)));
                // ψ against a central difference of ρ, away from the kinks
                let c = s.cutoff().unwrap_or(f64::INFINITY);
                if (r - c).abs() > 1e-3 {
                    let h = 1e-6 * r.max(1e-3);
                    let lo = (r - h).max(0.0);
                    let fd = (s.rho(r + h) - s.rho(lo)) / (r + h - lo);
                    assert!((fd - s.psi(r)).abs() < 1e-6, "{:?} r={r}", s.kind);
                }
            }
        }
    }

    #[test]
    fn rho_nondecreasing_and_saturation() {
        for s in specs() {
            let mut prev = 0.0;
            for i in 0..2000 {
                let t = i as f64 * 0.005;
                let v = s.rho(t);
                assert!(v >= prev);
                prev = v;
            }
        }
        let h = LossSpec::huber(1.3).unwrap();
        let t = LossSpec::tukey(2.7).unwrap();
        for r in [1.3, 2.0, 10.0, 1e6] {
            assert!((h.weight(r) * r - 1.3).abs() < 1e-12);
        }
        for r in [2.7, 3.0, 1e6] {
            assert_eq!(t.weight(r), 0.0);
        }
    }
}
