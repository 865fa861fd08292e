//! High-probability upper bounds on the squared kernel norm of the
//! regression function.
//!
//! Both bounds add a Hoeffding correction and the leakage constant `δ₀` to
//! an estimate of the mean squared function value at the leading inputs:
//! the original bound takes the worst corner of the coordinate box around
//! the value ellipsoid, the refined bound the exact maximum of
//! `(1/d)‖z‖²` over the ellipsoid itself (through its dual program).

use nalgebra::DVector;

use crate::ellipsoid::{Ellipsoid, Space};
use crate::error::{Error, Result};
use crate::lmi::SchurProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskBudget {
    /// Hoeffding risk.
    pub alpha: f64,
    /// Ellipsoid risk `q/m`.
    pub beta: f64,
    /// Leakage outside the unit interval.
    pub delta0: f64,
}

impl RiskBudget {
    pub fn new(alpha: f64, beta: f64, delta0: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0,1), got {alpha}")));
        }
        if !(beta >= 0.0 && alpha + beta < 1.0) {
            return Err(Error::InvalidParameter(format!("need beta >= 0 and alpha + beta < 1, got {beta}")));
        }
        if !(delta0 >= 0.0 && delta0.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta0 must be nonnegative, got {delta0}")));
        }
        Ok(Self { alpha, beta, delta0 })
    }

    /// Target probability `1 − α − β`.
    pub fn confidence(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Original,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBound {
    pub tau: f64,
    pub method: Method,
    /// `ξ*` for the refined bound, the box mean for the original one.
    pub xi_or_mean: f64,
    pub hoeffding_term: f64,
    pub delta0: f64,
}

/// `sqrt(ln(α) / (−2d))`.
pub fn hoeffding_term(alpha: f64, d: usize) -> f64 {
    (alpha.ln() / (-2.0 * d as f64)).max(0.0).sqrt()
}

fn assemble(estimate: f64, method: Method, budget: &RiskBudget, d: usize) -> NormBound {
    let h = hoeffding_term(budget.alpha, d);
    NormBound {
        tau: estimate + h + budget.delta0,
        method,
        xi_or_mean: estimate,
        hoeffding_term: h,
        delta0: budget.delta0,
    }
}

/// `[ν_k, μ_k]`: range of the `k`-th coordinate over the ellipsoid.
pub fn pointwise_intervals(ve: &Ellipsoid) -> Result<Vec<(f64, f64)>> {
    let d = ve.dim();
    if d == 0 {
        return Err(Error::InvalidParameter("empty ellipsoid".into()));
    }
    (0..d)
        .map(|k| {
            let mut radius = 0.0;
            for (j, &s) in ve.semi_axes.iter().enumerate() {
                let w = ve.axes[(k, j)];
                if s.is_infinite() {
                    if w.abs() > 1e-10 {
                        return Err(Error::UnboundedDirection);
                    }
                    continue;
                }
                radius += (w * s).powi(2);
            }
            let r = radius.sqrt();
            Ok((ve.center[k] - r, ve.center[k] + r))
        })
        .collect()
}

/// `τ = (1/d) Σ max(ν_k², μ_k²) + sqrt(ln α / (−2d)) + δ₀`.
pub fn tau_original(intervals: &[(f64, f64)], budget: &RiskBudget, d: usize) -> Result<NormBound> {
    if intervals.len() != d || d == 0 {
        return Err(Error::DimensionMismatch { expected: d, found: intervals.len() });
    }
    let mean = intervals.iter().map(|&(lo, hi)| (lo * lo).max(hi * hi)).sum::<f64>() / d as f64;
    Ok(assemble(mean, Method::Original, budget, d))
}

/// `τ₀ = ξ* + sqrt(ln α / (−2d)) + δ₀`.
pub fn tau_refined(xi: f64, budget: &RiskBudget, d: usize) -> Result<NormBound> {
    if !(xi >= 0.0) {
        return Err(Error::InvalidParameter(format!("xi must be nonnegative, got {xi}")));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("d must be positive".into()));
    }
    Ok(assemble(xi, Method::Refined, budget, d))
}

/// Data of the dual program for `max (1/d)‖z‖²` over the ellipsoid in its
/// own axes, plus the constant contributed by collapsed axes.
fn dual_program(ve: &Ellipsoid, d: usize) -> Result<(SchurProblem, f64)> {
    let kappa = 1.0 / d as f64;
    let coords: DVector<f64> = ve.axes.tr_mul(&ve.center);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let mut c = -1.0;
    let mut pinned = 0.0;
    for (j, &s) in ve.semi_axes.iter().enumerate() {
        let cj = coords[j];
        if s.is_infinite() {
            return Err(Error::InfeasibleDual);
        }
        if s == 0.0 {
            // the coordinate is fixed; in the limit a_j → ∞ its terms reduce to κ c_j²
            pinned += kappa * cj * cj;
            continue;
        }
        let aj = 1.0 / (s * s);
        a.push(aj);
        b.push(-cj * aj);
        c += cj * cj * aj;
    }
    Ok((SchurProblem { a, b, c, kappa }, pinned))
}

/// `ξ* = max{(1/d)‖z‖² : z ∈ 𝒵}`, obtained as the optimal value of the
/// dual semidefinite program in the multiplier `ϱ`.
pub fn xi_star(ve: &Ellipsoid, d: usize) -> Result<f64> {
    if ve.space != Space::FunctionValueSpace {
        return Err(Error::InvalidParameter("expected a function-value ellipsoid".into()));
    }
    if d != ve.dim() {
        return Err(Error::DimensionMismatch { expected: ve.dim(), found: d });
    }
    let (problem, pinned) = dual_program(ve, d)?;
    if problem.a.is_empty() {
        return Ok(pinned);
    }
    match problem.minimize()? {
        Some(sol) => Ok((sol.value + pinned).max(0.0)),
        None => Err(Error::InfeasibleDual),
    }
}

/// Dual objective at a given multiplier, `+∞` where infeasible; its
/// minimum over `ϱ` is `ξ*`. Exposed for cross-checks against dense grids.
pub fn dual_objective(ve: &Ellipsoid, d: usize, rho: f64) -> Result<f64> {
    let (problem, pinned) = dual_program(ve, d)?;
    Ok(pinned + problem.value_at(rho))
}
