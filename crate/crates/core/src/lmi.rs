//! Two-variable linear matrix inequalities of the form
//!
//! ```text
//!     minimize  g   subject to   λ ≥ 0,   [ λA − κI   λb ]
//!                                          [ λbᵀ     g + λc ]  ⪰ 0
//! ```
//!
//! For fixed `λ` the Schur complement gives the smallest feasible `g` as
//! `g(λ) = λ² bᵀ(λA − κI)† b − λc` whenever `λA − κI ⪰ 0` and `b` lies in
//! its range. `g` is convex on the feasible half-line `λ ≥ κ / a_min`, so
//! the problem reduces to a one-dimensional convex minimization. Working in
//! the eigenbasis of `A` makes each evaluation `O(d)`.

use crate::error::{Error, Result};
use crate::linalg::golden_section_min;

/// Relative width of the final golden-section bracket in `ln(λ − λ_lo)`.
pub const SEARCH_TOL: f64 = 1e-11;

/// Components of `b` smaller than this fraction of `‖b‖` count as lying in
/// the range of a singular `λA − κI`.
pub const RANGE_TOL: f64 = 1e-8;

const MAX_EXPANSIONS: usize = 90;
const EXPANSION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct SchurProblem {
    /// Eigenvalues of `A`.
    pub a: Vec<f64>,
    /// `b` expressed in the eigenbasis of `A`.
    pub b: Vec<f64>,
    pub c: f64,
    /// Positive scale of the identity block.
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchurSolution {
    pub lambda: f64,
    pub value: f64,
}

impl SchurProblem {
    fn a_min(&self) -> f64 {
        self.a.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Left end of the feasible multiplier interval, or `None` when
    /// `λA − κI` is never positive semidefinite.
    pub fn lambda_min(&self) -> Option<f64> {
        let a_min = self.a_min();
        (a_min > 0.0 && a_min.is_finite()).then(|| self.kappa / a_min)
    }

    /// `g(λ_lo + offset)`; `+∞` where the Schur complement is undefined.
    pub fn value_at_offset(&self, offset: f64) -> f64 {
        let Some(lo) = self.lambda_min() else {
            return f64::INFINITY;
        };
        let a_min = self.a_min();
        let b_scale = self.b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lambda = lo + offset;
        let mut quad = 0.0;
        for (&aj, &bj) in self.a.iter().zip(self.b.iter()) {
            // λ a_j − κ, split so that the boundary term is exact
            let den = offset * aj + self.kappa * (aj - a_min) / a_min;
            if den > 0.0 {
                quad += bj * bj / den;
            } else if bj.abs() > RANGE_TOL * b_scale {
                return f64::INFINITY;
            }
        }
        lambda * lambda * quad - lambda * self.c
    }

    pub fn value_at(&self, lambda: f64) -> f64 {
        match self.lambda_min() {
            Some(lo) if lambda >= lo => self.value_at_offset(lambda - lo),
            _ => f64::INFINITY,
        }
    }

    /// Minimizes `g` over the feasible multipliers. `Ok(None)` means no
    /// multiplier is feasible, i.e. the optimal value is `+∞`.
    pub fn minimize(&self) -> Result<Option<SchurSolution>> {
        let Some(lo) = self.lambda_min() else {
            return Ok(None);
        };
        let mut best = SchurSolution { lambda: lo, value: self.value_at_offset(0.0) };

        // expand until g starts increasing
        let mut hi = lo.max(f64::MIN_POSITIVE);
        let mut prev = self.value_at_offset(hi);
        let mut bracketed = false;
        for _ in 0..MAX_EXPANSIONS {
            let next_off = 2.0 * hi;
            let next = self.value_at_offset(next_off);
            if prev < best.value {
                best = SchurSolution { lambda: lo + hi, value: prev };
            }
            if next >= prev || (next - prev).abs() <= 1e-15 * prev.abs() {
                hi = next_off;
                bracketed = true;
                break;
            }
            hi = next_off;
            prev = next;
            if hi > EXPANSION_LIMIT * lo.max(1.0) {
                break;
            }
        }
        if !bracketed {
            return Err(Error::SolverDiverged("multiplier interval could not be bracketed"));
        }

        let s_lo = (lo.max(1.0) * 1e-18).ln();
        let s_hi = hi.ln();
        let (s, v) = golden_section_min(
            |s| self.value_at_offset(s.exp()),
            s_lo,
            s_hi,
            SEARCH_TOL * (s_hi - s_lo).abs().max(1.0),
            400,
        );
        if v < best.value {
            best = SchurSolution { lambda: lo + s.exp(), value: v };
        }
        if !best.value.is_finite() {
            return Err(Error::SolverDiverged("no finite value on the feasible interval"));
        }
        Ok(Some(best))
    }
}
