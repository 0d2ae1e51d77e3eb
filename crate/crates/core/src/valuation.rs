//! Parametric valuation families.
//!
//! Every family is strictly concave, strictly increasing and twice
//! differentiable on its domain, with closed-form derivative inverses so
//! best responses and oracle inner solves stay exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `a * ln(x)`, defined for `x > 0`.
    ScaledLog,
    /// `a * ln(1 + x)`, defined for `x >= 0`.
    ShiftedLog,
    /// `a * x^alpha` with `alpha` in (0, 1), defined for `x >= 0`.
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValuationSpec {
    pub family: Family,
    pub a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValuationError {
    #[error("{family:?} valuation is not defined at x = {x}")]
    Domain { family: Family, x: f64 },
    #[error("price must be positive, got {0}")]
    NonPositivePrice(f64),
    #[error("invalid valuation parameters: {0}")]
    Parameters(String),
}

/// Value of the valuation at zero rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueAtZero {
    Finite(f64),
    /// `a * ln(x)` diverges at zero; individual-rationality comparisons
    /// against it hold vacuously.
    NegativeInfinity,
}

/// A validated valuation function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Valuation {
    family: Family,
    a: f64,
    alpha: f64,
}

impl Valuation {
    pub fn new(spec: &ValuationSpec) -> Result<Self, ValuationError> {
        if !(spec.a.is_finite() && spec.a > 0.0) {
            return Err(ValuationError::Parameters(format!(
                "scale a must be positive and finite, got {}",
                spec.a
            )));
        }
        let alpha = match (spec.family, spec.alpha) {
            (Family::Power, Some(alpha)) if alpha > 0.0 && alpha < 1.0 => alpha,
            (Family::Power, Some(alpha)) => {
                return Err(ValuationError::Parameters(format!(
                    "power exponent must lie in (0, 1), got {alpha}"
                )))
            }
            (Family::Power, None) => {
                return Err(ValuationError::Parameters(
                    "power family requires alpha".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(ValuationError::Parameters(format!(
                    "{:?} family takes no alpha",
                    spec.family
                )))
            }
            (_, None) => 0.0,
        };
        Ok(Self {
            family: spec.family,
            a: spec.a,
            alpha,
        })
    }

    pub fn scaled_log(a: f64) -> Self {
        Self {
            family: Family::ScaledLog,
            a,
            alpha: 0.0,
        }
    }

    pub fn shifted_log(a: f64) -> Self {
        Self {
            family: Family::ShiftedLog,
            a,
            alpha: 0.0,
        }
    }

    pub fn power(a: f64, alpha: f64) -> Self {
        Self {
            family: Family::Power,
            a,
            alpha,
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn scale(&self) -> f64 {
        self.a
    }

    pub fn spec(&self) -> ValuationSpec {
        ValuationSpec {
            family: self.family,
            a: self.a,
            alpha: (self.family == Family::Power).then_some(self.alpha),
        }
    }

    fn check_domain(&self, x: f64, strict: bool) -> Result<(), ValuationError> {
        let ok = if strict { x > 0.0 } else { x >= 0.0 };
        if ok && x.is_finite() {
            Ok(())
        } else {
            Err(ValuationError::Domain {
                family: self.family,
                x,
            })
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, ValuationError> {
        match self.family {
            Family::ScaledLog => {
                self.check_domain(x, true)?;
                Ok(self.a * x.ln())
            }
            Family::ShiftedLog => {
                self.check_domain(x, false)?;
                Ok(self.a * x.ln_1p())
            }
            Family::Power => {
                self.check_domain(x, false)?;
                Ok(self.a * x.powf(self.alpha))
            }
        }
    }

    /// Like [`Valuation::eval`] but maps the scaled-log pole at zero to −∞.
    pub fn eval_extended(&self, x: f64) -> Result<f64, ValuationError> {
        if x == 0.0 && self.family == Family::ScaledLog {
            return Ok(f64::NEG_INFINITY);
        }
        self.eval(x)
    }

    pub fn grad(&self, x: f64) -> Result<f64, ValuationError> {
        match self.family {
            Family::ScaledLog => {
                self.check_domain(x, true)?;
                Ok(self.a / x)
            }
            Family::ShiftedLog => {
                self.check_domain(x, false)?;
                Ok(self.a / (1.0 + x))
            }
            Family::Power => {
                self.check_domain(x, true)?;
                Ok(self.a * self.alpha * x.powf(self.alpha - 1.0))
            }
        }
    }

    /// Marginal value at zero; `+∞` for the families with a vertical tangent.
    pub fn grad_at_zero(&self) -> f64 {
        match self.family {
            Family::ShiftedLog => self.a,
            Family::ScaledLog | Family::Power => f64::INFINITY,
        }
    }

    pub fn curvature(&self, x: f64) -> Result<f64, ValuationError> {
        match self.family {
            Family::ScaledLog => {
                self.check_domain(x, true)?;
                Ok(-self.a / (x * x))
            }
            Family::ShiftedLog => {
                self.check_domain(x, false)?;
                Ok(-self.a / ((1.0 + x) * (1.0 + x)))
            }
            Family::Power => {
                self.check_domain(x, true)?;
                Ok(self.a * self.alpha * (self.alpha - 1.0) * x.powf(self.alpha - 2.0))
            }
        }
    }

    /// The rate `x >= 0` at which marginal value equals `price`, clamped at
    /// zero when even the first unit is worth less than `price`.
    pub fn grad_inverse(&self, price: f64) -> Result<f64, ValuationError> {
        if !(price > 0.0) {
            return Err(ValuationError::NonPositivePrice(price));
        }
        Ok(match self.family {
            Family::ScaledLog => self.a / price,
            Family::ShiftedLog => (self.a / price - 1.0).max(0.0),
            Family::Power => (price / (self.a * self.alpha)).powf(1.0 / (self.alpha - 1.0)),
        })
    }

    pub fn value_at_zero(&self) -> ValueAtZero {
        match self.family {
            Family::ScaledLog => ValueAtZero::NegativeInfinity,
            Family::ShiftedLog | Family::Power => ValueAtZero::Finite(0.0),
        }
    }

    /// Whether `x` lies in the (closed or open) domain of the valuation.
    pub fn in_domain(&self, x: f64) -> bool {
        match self.family {
            Family::ScaledLog => x > 0.0 && x.is_finite(),
            Family::ShiftedLog | Family::Power => x >= 0.0 && x.is_finite(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_log_gradient_matches_worked_example() {
        let v = Valuation::scaled_log(3.0);
        assert!((v.grad(0.5).unwrap() - 6.0).abs() < 1e-15);
    }

    #[test]
    fn shifted_log_gradient_at_zero() {
        let v = Valuation::shifted_log(1.0);
        assert_eq!(v.grad(0.0).unwrap(), 1.0);
        assert_eq!(v.grad_at_zero(), 1.0);
    }

    #[test]
    fn power_inverse_quarter() {
        // 0.5 * x^(-1/2) = 1 by bisection, independent of the closed form.
        let v = Valuation::power(1.0, 0.5);
        let (mut lo, mut hi) = (1e-6_f64, 10.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 0.5 * mid.powf(-0.5) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 0.25).abs() < 1e-12);
        assert!((v.grad_inverse(1.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(Valuation::scaled_log(1.0).eval(0.0).is_err());
        assert!(Valuation::scaled_log(1.0).grad(-1.0).is_err());
        assert!(Valuation::shifted_log(1.0).eval(-1e-3).is_err());
        assert!(Valuation::power(1.0, 0.5).grad(0.0).is_err());
        assert!(Valuation::power(1.0, 0.5).eval(0.0).is_ok());
        assert!(Valuation::scaled_log(1.0).grad_inverse(0.0).is_err());
    }

    #[test]
    fn value_at_zero_flags_log_pole() {
        assert_eq!(
            Valuation::scaled_log(2.0).value_at_zero(),
            ValueAtZero::NegativeInfinity
        );
        assert_eq!(
            Valuation::shifted_log(2.0).value_at_zero(),
            ValueAtZero::Finite(0.0)
        );
        assert_eq!(
            Valuation::scaled_log(2.0).eval_extended(0.0).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn shifted_log_inverse_clamps_expensive_prices() {
        let v = Valuation::shifted_log(1.0);
        assert_eq!(v.grad_inverse(2.0).unwrap(), 0.0);
    }

    #[test]
    fn parameter_validation() {
        let bad = ValuationSpec {
            family: Family::Power,
            a: 1.0,
            alpha: Some(1.5),
        };
        assert!(Valuation::new(&bad).is_err());
        let missing = ValuationSpec {
            family: Family::Power,
            a: 1.0,
            alpha: None,
        };
        assert!(Valuation::new(&missing).is_err());
        let stray = ValuationSpec {
            family: Family::ScaledLog,
            a: 1.0,
            alpha: Some(0.5),
        };
        assert!(Valuation::new(&stray).is_err());
        let neg = ValuationSpec {
            family: Family::ScaledLog,
            a: -1.0,
            alpha: None,
        };
        assert!(Valuation::new(&neg).is_err());
    }
}
