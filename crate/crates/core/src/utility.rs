//! Expected utilities of waiting customers.

use alloc::format;
use alloc::vec::Vec;

use crate::age_posterior::AgePosterior;
use crate::distributions::ServiceModel;
use crate::numerics::Grid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarketParams {
    pub lambda: f64,
    #[cfg_attr(feature = "serde", serde(rename = "V"))]
    pub v: f64,
    #[cfg_attr(feature = "serde", serde(rename = "C"))]
    pub c: f64,
}

impl MarketParams {
    pub fn new(lambda: f64, v: f64, c: f64) -> Result<Self> {
        let p = Self { lambda, v, c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (x, name) in [(self.lambda, "lambda"), (self.v, "V"), (self.c, "C")] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {x}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CustomerType {
    TypeI,
    TypeII,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilityCurve {
    pub n: usize,
    pub kind: CustomerType,
    pub values: Grid,
}

/// `G_n(t) = V - C (m_X(t) + (n-1) x̄)`; `V` for `n = 0`.
pub fn g_value(params: &MarketParams, model: &ServiceModel, n: usize, t: f64) -> Result<f64> {
    if n == 0 {
        return Ok(params.v);
    }
    if model.survival(t) <= 0.0 {
        return Err(Error::BeyondSupport);
    }
    let m = model.mrl(t)?;
    Ok(params.v - params.c * (m + (n - 1) as f64 * model.mean()))
}

/// Utility of a type-I customer with `n` ahead whose service has age `t`.
pub fn u_type1(params: &MarketParams, model: &ServiceModel, n: usize, t: f64) -> Result<f64> {
    Ok(g_value(params, model, n, t)?.max(0.0))
}

/// Unclamped type-II utility: `V - C (E[m_X(A + t)] + (n-1) x̄)` under the posterior.
pub fn type2_margin(params: &MarketParams, model: &ServiceModel, n: usize, posterior: &AgePosterior) -> Result<f64> {
    let r = posterior.expected_residual(model)?;
    Ok(params.v - params.c * (r + n.saturating_sub(1) as f64 * model.mean()))
}

/// Utility of a type-II customer who found `n` on arrival and has waited
/// `posterior.t` without seeing a completion.
pub fn u_type2(params: &MarketParams, model: &ServiceModel, n: usize, posterior: &AgePosterior) -> Result<f64> {
    Ok(type2_margin(params, model, n, posterior)?.max(0.0))
}

/// Forward-difference residual of `G'_n(t) = C - h(t) (U_{n-1}(0) - G_n(t))`.
pub fn ode_residual(params: &MarketParams, model: &ServiceModel, n: usize, t: f64, dt: f64) -> Result<f64> {
    let n = n.max(1);
    let g0 = g_value(params, model, n, t)?;
    let g1 = g_value(params, model, n, t + dt)?;
    let u_prev = u_type1(params, model, n - 1, 0.0)?;
    let rhs = params.c - model.hazard(t)? * (u_prev - g0);
    Ok(((g1 - g0) / dt - rhs).abs())
}

pub fn type1_curve(params: &MarketParams, model: &ServiceModel, n: usize, lo: f64, hi: f64, points: usize) -> Result<UtilityCurve> {
    let mut values = Grid::new(lo, hi, points)?;
    let ts: Vec<f64> = values.points().collect();
    for (v, t) in values.values.iter_mut().zip(ts) {
        *v = u_type1(params, model, n, t)?;
    }
    Ok(UtilityCurve { n, kind: CustomerType::TypeI, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn setup() -> (MarketParams, ServiceModel) {
        (
            MarketParams::new(3.0, 4.85, 1.0).unwrap(),
            ServiceModel::hyperexponential(vec![0.95, 0.05], vec![1.0, 0.2]).unwrap(),
        )
    }

    #[test]
    fn g_at_zero_and_root() {
        let (p, m) = setup();
        assert!((g_value(&p, &m, 1, 0.0).unwrap() - 3.65).abs() < 1e-12);
        let t1 = libm::log(3.85 * 0.95 / (0.15 * 0.05)) / 0.8;
        assert!(g_value(&p, &m, 1, t1).unwrap().abs() < 1e-3);
        assert_eq!(g_value(&p, &m, 0, 12.0).unwrap(), 4.85);
    }

    #[test]
    fn type1_clamps() {
        let (p, m) = setup();
        assert_eq!(u_type1(&p, &m, 1, 20.0).unwrap(), 0.0);
        assert_eq!(u_type1(&p, &m, 0, 3.0).unwrap(), 4.85);
        assert!((u_type1(&p, &m, 1, 0.0).unwrap() - 3.65).abs() < 1e-12);
    }

    #[test]
    fn ode_residual_small() {
        let (p, m) = setup();
        assert!(ode_residual(&p, &m, 1, 2.0, 1e-5).unwrap() <= 1e-3);
        assert!(ode_residual(&p, &m, 3, 5.0, 1e-5).unwrap() <= 1e-3);
        let e = ServiceModel::exponential(1.0).unwrap();
        assert!(ode_residual(&p, &e, 2, 4.0, 1e-4).unwrap() <= 1e-3);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(MarketParams::new(0.0, 1.0, 1.0).is_err());
        assert!(MarketParams::new(1.0, -1.0, 1.0).is_err());
        assert!(MarketParams::new(1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn type1_curve_nonincreasing() {
        let (p, m) = setup();
        let c = type1_curve(&p, &m, 1, 0.0, 20.0, 101).unwrap();
        assert!(c.values.values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }
}
