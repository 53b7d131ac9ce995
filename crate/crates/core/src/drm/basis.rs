use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Basis `q(y)` of the log density ratio. The first component is always 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// `(1, y)`
    Linear,
    /// `(1, y, y²)`: normal populations.
    Normal2,
    /// `(1, log y, y)`: gamma populations, `y > 0`.
    Gamma2,
    /// `(1, log |y|, y, y²)`, `y ≠ 0`.
    General3,
}

impl Basis {
    pub const ALL: [Basis; 4] = [Basis::Linear, Basis::Normal2, Basis::Gamma2, Basis::General3];

    pub fn dim(self) -> usize {
        match self {
            Basis::Linear => 2,
            Basis::Normal2 | Basis::Gamma2 => 3,
            Basis::General3 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Basis::Linear => "linear",
            Basis::Normal2 => "normal2",
            Basis::Gamma2 => "gamma2",
            Basis::General3 => "general3",
        }
    }

    /// Writes `q(y)` into `out[..dim]`.
    pub fn eval_into<T: Real>(self, y: T, out: &mut [T]) -> Result<()> {
        let domain_error = || Error::BasisDomain { basis: self, value: y.as_f64() };
        out[0] = T::one();
        match self {
            Basis::Linear => out[1] = y,
            Basis::Normal2 => {
                out[1] = y;
                out[2] = y * y;
            }
            Basis::Gamma2 => {
                if !(y > T::zero()) {
                    return Err(domain_error());
                }
                out[1] = y.ln();
                out[2] = y;
            }
            Basis::General3 => {
                if y == T::zero() {
                    return Err(domain_error());
                }
                out[1] = y.abs().ln();
                out[2] = y;
                out[3] = y * y;
            }
        }
        Ok(())
    }

    pub fn eval<T: Real>(self, y: T) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.dim()];
        self.eval_into(y, &mut out)?;
        Ok(out)
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Basis::ALL.into_iter().find(|b| b.name().eq_ignore_ascii_case(s.trim())).ok_or_else(|| {
            Error::InvalidConfig(format!("unknown basis {s:?} (expected linear, normal2, gamma2 or general3)"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_and_domains() {
        assert_eq!(Basis::Normal2.eval(2.0).unwrap(), vec![1.0, 2.0, 4.0]);
        assert_eq!(Basis::Gamma2.eval(1.0f64).unwrap(), vec![1.0, 0.0, 1.0]);
        assert_eq!(Basis::General3.eval(-1.0f64).unwrap(), vec![1.0, 0.0, -1.0, 1.0]);
        assert!(matches!(Basis::Gamma2.eval(0.0f64), Err(Error::BasisDomain { .. })));
        assert!(Basis::Gamma2.eval(-3.0f64).is_err());
        assert!(Basis::General3.eval(0.0f64).is_err());
        for b in Basis::ALL {
            assert_eq!(b.eval(1.5f64).unwrap().len(), b.dim());
            assert_eq!(b.eval(1.5f64).unwrap()[0], 1.0);
            assert_eq!(b.name().parse::<Basis>().unwrap(), b);
        }
        assert!("cubic".parse::<Basis>().is_err());
    }
}
