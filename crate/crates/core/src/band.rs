//! Per-query confidence intervals and their assembly into a band.
//!
//! For a query `x₀` the admissible values `z₀` are those for which some
//! completion `z = (z₁, …, z_d)` in the constraint set satisfies
//! `(z₀, z)ᵀ K₀⁻¹ (z₀, z) ≤ τ`, with `K₀` the Gram matrix bordered by the
//! query. Writing `a = K_d⁻¹k` and `s = κ₀ − kᵀa` this quadratic is
//! `zᵀK_d⁻¹z + (z₀ − aᵀz)²/s`, so
//!
//! ```text
//!     v(z₀) = min_{z ∈ C} zᵀK_d⁻¹z + (z₀ − aᵀz)²/s − τ
//! ```
//!
//! is convex in `z₀` and the interval is its zero sublevel set. Each
//! endpoint is bracketed between a feasible interior point and the a priori
//! bound `B`, then located by bisection with safeguarded Newton steps taken
//! from the infeasible side; the returned endpoint is always the infeasible
//! (outer) end of the final bracket.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ellipsoid::Ellipsoid;
use crate::error::{Error, Result};
use crate::kernel::{kernel_column, GramPack, KernelParams, DUPLICATE_TOL};
use crate::linalg::{symmetrize, SpdFactor};
use crate::normbound::{pointwise_intervals, Method, NormBound};
use crate::quadratic::{box_qp, BallQp};

pub const DEFAULT_GRID: usize = 512;
/// Offset applied to query points that coincide with a data input.
pub const GRID_NUDGE: f64 = 1e-9;
/// Relative width of the final endpoint bracket.
pub const ENDPOINT_TOL: f64 = 1e-9;
const MAX_ENDPOINT_STEPS: usize = 300;
const SCHUR_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// `ν_k ≤ z_k ≤ μ_k`.
    Box(Vec<(f64, f64)>),
    /// `z ∈ 𝒵`.
    EllipsoidZ(Ellipsoid),
}

impl Constraint {
    pub fn dim(&self) -> usize {
        match self {
            Constraint::Box(b) => b.len(),
            Constraint::EllipsoidZ(e) => e.dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointStatus {
    Feasible,
    Infeasible,
    Clipped,
}

impl PointStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PointStatus::Feasible => "feasible",
            PointStatus::Infeasible => "infeasible",
            PointStatus::Clipped => "clipped",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub status: PointStatus,
}

impl Interval {
    fn infeasible() -> Self {
        Self { lo: f64::NAN, hi: f64::NAN, status: PointStatus::Infeasible }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64, tol: f64) -> bool {
        self.status != PointStatus::Infeasible && y >= self.lo - tol && y <= self.hi + tol
    }
}

#[derive(Debug, Clone)]
pub struct QueryProblem {
    pub x0: f64,
    /// Bordered Gram matrix; index 0 is the query.
    pub k0: DMatrix<f64>,
    pub tau: NormBound,
    pub constraint: Constraint,
}

/// `(d+1) × (d+1)` Gram matrix of `(x₀, x₁, …, x_d)` with the jitter on
/// its diagonal.
pub fn extended_gram(leading: &[f64], x0: f64, params: &KernelParams) -> Result<DMatrix<f64>> {
    if let Some(k) = leading.iter().position(|&x| (x - x0).abs() <= DUPLICATE_TOL) {
        return Err(Error::DuplicateInputs { first: 0, second: k + 1 });
    }
    let mut all = Vec::with_capacity(leading.len() + 1);
    all.push(x0);
    all.extend_from_slice(leading);
    let mut k0 = crate::kernel::raw_gram(&all, params);
    for i in 0..all.len() {
        k0[(i, i)] += params.jitter_abs();
    }
    Ok(k0)
}

/// `size` equispaced points on `[0, 1]`, each moved by [`GRID_NUDGE`] away
/// from any input it collides with.
pub fn default_grid(size: usize, avoid: &[f64]) -> Vec<f64> {
    let step = 1.0 / (size.max(2) - 1) as f64;
    (0..size.max(2)).map(|j| nudge(j as f64 * step, avoid)).collect()
}

fn nudge(x: f64, avoid: &[f64]) -> f64 {
    let mut x = x;
    for _ in 0..4 {
        match avoid.iter().find(|&&a| (a - x).abs() <= DUPLICATE_TOL) {
            Some(&a) => x = if a + GRID_NUDGE <= 1.0 { a + GRID_NUDGE } else { a - GRID_NUDGE },
            None => break,
        }
    }
    x
}

/// Band-level data shared by every query.
enum Prepared {
    Empty,
    Box {
        lo: DVector<f64>,
        hi: DVector<f64>,
        /// `K_d⁻¹`, used only for Newton steps of the inner problem.
        kinv: DMatrix<f64>,
    },
    Ellipsoid {
        center: DVector<f64>,
        generator: DMatrix<f64>,
        /// `W E` and `W c` with `WᵀW = K_d⁻¹`.
        fmat: DMatrix<f64>,
        fvec: DVector<f64>,
    },
}

/// Interval solver for one `(K_d, τ, C)` triple; queries only supply the
/// border `(k, κ₀)`.
pub struct IntervalSolver {
    factor: Option<SpdFactor>,
    tau: f64,
    prepared: Prepared,
    /// Minimizer of `zᵀK_d⁻¹z` over the constraint set, and its value.
    z_min: DVector<f64>,
    n_min: f64,
    /// Largest coordinate magnitude over the constraint set.
    reach: f64,
}

#[derive(Debug, Clone, Copy)]
struct Probe {
    value: f64,
    slope: f64,
}

impl IntervalSolver {
    pub fn new(k_d: &DMatrix<f64>, tau: f64, constraint: &Constraint) -> Result<Self> {
        let d = k_d.nrows();
        if constraint.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: constraint.dim() });
        }
        if !(tau >= 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be nonnegative, got {tau}")));
        }
        if d == 0 {
            return Ok(Self {
                factor: None,
                tau,
                prepared: Prepared::Empty,
                z_min: DVector::zeros(0),
                n_min: 0.0,
                reach: 0.0,
            });
        }
        let floor = 1e-12 * k_d.diagonal().amax();
        let factor = SpdFactor::new(k_d, floor).ok_or(Error::SingularGram)?;
        match constraint {
            Constraint::Box(bounds) => {
                if bounds.iter().any(|&(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
                    return Err(Error::InvalidParameter("box bounds must be finite with lower <= upper".into()));
                }
                let lo = DVector::from_iterator(d, bounds.iter().map(|b| b.0));
                let hi = DVector::from_iterator(d, bounds.iter().map(|b| b.1));
                let kinv = symmetrize(&factor.solve_matrix(&DMatrix::identity(d, d)));
                let start = DVector::zeros(d);
                let z_min = box_qp(&(&kinv * 2.0), &DVector::zeros(d), &lo, &hi, &start).z;
                let n_min = factor.inv_quad(&z_min);
                let reach = lo.amax().max(hi.amax());
                Ok(Self { factor: Some(factor), tau, prepared: Prepared::Box { lo, hi, kinv }, z_min, n_min, reach })
            }
            Constraint::EllipsoidZ(e) => {
                if !e.is_bounded() {
                    return Err(Error::UnboundedDirection);
                }
                let generator = e.generator();
                let fmat = factor.whiten_matrix(&generator);
                let fvec = factor.whiten(&e.center);
                let ball = BallQp::new(&fmat.tr_mul(&fmat));
                let (omega, _) = ball.solve(&fmat.tr_mul(&fvec));
                let z_min = &e.center + &generator * &omega;
                let n_min = (&fvec + &fmat * &omega).norm_squared();
                let reach = pointwise_intervals(e)?.iter().fold(0.0f64, |m, &(l, h)| m.max(l.abs()).max(h.abs()));
                Ok(Self {
                    factor: Some(factor),
                    tau,
                    prepared: Prepared::Ellipsoid { center: e.center.clone(), generator, fmat, fvec },
                    z_min,
                    n_min,
                    reach,
                })
            }
        }
    }

    /// Interval for a query with kernel column `k` against the leading
    /// inputs and diagonal entry `κ₀`.
    pub fn interval(&self, k: &DVector<f64>, kappa0: f64) -> Interval {
        let bound = (self.tau * kappa0).max(0.0).sqrt() + self.reach;
        let tol = ENDPOINT_TOL * bound.max(1.0);
        let Some(factor) = &self.factor else {
            let r = (self.tau * kappa0).max(0.0).sqrt();
            return Interval { lo: -r, hi: r, status: PointStatus::Feasible };
        };
        if self.n_min > self.tau {
            return Interval::infeasible();
        }
        let a = factor.solve(k);
        let s = (kappa0 - factor.inv_quad(k)).max(SCHUR_FLOOR * kappa0);
        let inside = a.dot(&self.z_min);
        let tau = self.tau;

        let (hi, lo, clipped) = match &self.prepared {
            Prepared::Empty => unreachable!("handled above"),
            Prepared::Box { lo, hi, kinv } => {
                let q = (kinv + &a * a.transpose() / s) * 2.0;
                let mut warm = self.z_min.clone();
                let mut probe = |z0: f64| {
                    let g = &a * (-2.0 * z0 / s);
                    let sol = box_qp(&q, &g, lo, hi, &warm);
                    warm = sol.z;
                    let gap = z0 - a.dot(&warm);
                    Probe { value: factor.inv_quad(&warm) + gap * gap / s - tau, slope: 2.0 * gap / s }
                };
                let (up, c1) = endpoint(&mut probe, inside, 1.0, bound, tol);
                let (down, c2) = endpoint(&mut probe, inside, -1.0, bound, tol);
                (up, down, c1 || c2)
            }
            Prepared::Ellipsoid { center, generator, fmat, fvec } => {
                let p = generator.tr_mul(&a);
                let hess = fmat.tr_mul(fmat) + &p * p.transpose() / s;
                let ball = BallQp::new(&hess);
                let h0 = ball.rotate(&fmat.tr_mul(fvec));
                let p_rot = ball.rotate(&p);
                let shift = a.dot(center);
                let mut probe = |z0: f64| {
                    let beta = z0 - shift;
                    let sol = ball.solve_rotated(&(&h0 - &p_rot * (beta / s)));
                    let omega = ball.unrotate(&sol.w_rot);
                    let gap = beta - p.dot(&omega);
                    let value = (fvec + fmat * &omega).norm_squared() + gap * gap / s - tau;
                    Probe { value, slope: 2.0 * gap / s }
                };
                let (up, c1) = endpoint(&mut probe, inside, 1.0, bound, tol);
                let (down, c2) = endpoint(&mut probe, inside, -1.0, bound, tol);
                (up, down, c1 || c2)
            }
        };
        Interval { lo, hi, status: if clipped { PointStatus::Clipped } else { PointStatus::Feasible } }
    }

    /// `v(z₀) ≤ 0` for a query; exposed so callers can spot-check points
    /// inside a computed interval.
    pub fn is_feasible(&self, k: &DVector<f64>, kappa0: f64, z0: f64) -> bool {
        let Some(factor) = &self.factor else {
            return z0 * z0 / kappa0 <= self.tau;
        };
        let a = factor.solve(k);
        let s = (kappa0 - factor.inv_quad(k)).max(SCHUR_FLOOR * kappa0);
        match &self.prepared {
            Prepared::Empty => unreachable!(),
            Prepared::Box { lo, hi, kinv } => {
                let q = (kinv + &a * a.transpose() / s) * 2.0;
                let sol = box_qp(&q, &(&a * (-2.0 * z0 / s)), lo, hi, &self.z_min);
                let gap = z0 - a.dot(&sol.z);
                factor.inv_quad(&sol.z) + gap * gap / s <= self.tau
            }
            Prepared::Ellipsoid { center, generator, fmat, fvec } => {
                let p = generator.tr_mul(&a);
                let ball = BallQp::new(&(fmat.tr_mul(fmat) + &p * p.transpose() / s));
                let beta = z0 - a.dot(center);
                let (omega, _) = ball.solve(&(fmat.tr_mul(fvec) - &p * (beta / s)));
                let gap = beta - p.dot(&omega);
                (fvec + fmat * &omega).norm_squared() + gap * gap / s <= self.tau
            }
        }
    }
}

/// Walks from the feasible `inside` in direction `dir` to the boundary of
/// the sublevel set, staying within `|z₀| ≤ bound`. Returns the outer end
/// of the final bracket and whether the bound itself was feasible.
fn endpoint(probe: &mut impl FnMut(f64) -> Probe, inside: f64, dir: f64, bound: f64, tol: f64) -> (f64, bool) {
    let at = |t: f64| inside + dir * t;
    let span = (bound - dir * inside).max(0.0);
    let mut outer = probe(at(span));
    if outer.value <= 0.0 {
        return (at(span), true);
    }
    let (mut a, mut b) = (0.0, span);
    let mut slow = 0;
    for _ in 0..MAX_ENDPOINT_STEPS {
        let width = b - a;
        if width <= tol {
            break;
        }
        let slope = dir * outer.slope;
        let newton = b - outer.value / slope;
        let mut cand = if slope > 0.0 && newton.is_finite() && newton > a && newton < b && slow < 3 {
            newton
        } else {
            slow = 0;
            0.5 * (a + b)
        };
        if b - cand < 0.25 * tol {
            cand = b - 0.5 * tol;
        }
        let p = probe(at(cand));
        if p.value <= 0.0 {
            a = cand;
        } else {
            b = cand;
            outer = p;
        }
        slow = if b - a > 0.5 * width { slow + 1 } else { 0 };
    }
    (at(b), false)
}

fn split_extended(k0: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let n = k0.nrows();
    if n == 0 || k0.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n.max(1), found: k0.ncols() });
    }
    let d = n - 1;
    Ok((k0.view((1, 1), (d, d)).into_owned(), k0.view((1, 0), (d, 1)).column(0).into_owned(), k0[(0, 0)]))
}

/// Interval from any pairing of bound and constraint (used for ablations).
pub fn solve_query(qp: &QueryProblem) -> Result<Interval> {
    let (k_d, k, kappa0) = split_extended(&qp.k0)?;
    Ok(IntervalSolver::new(&k_d, qp.tau.tau, &qp.constraint)?.interval(&k, kappa0))
}

/// Interval with the norm bound `τ` and the coordinate box.
pub fn interval_original(qp: &QueryProblem) -> Result<Interval> {
    if qp.tau.method != Method::Original || !matches!(qp.constraint, Constraint::Box(_)) {
        return Err(Error::InvalidParameter("original intervals pair tau with the coordinate box".into()));
    }
    solve_query(qp)
}

/// Interval with the refined bound `τ₀` and the value ellipsoid.
pub fn interval_refined(qp: &QueryProblem) -> Result<Interval> {
    if qp.tau.method != Method::Refined || !matches!(qp.constraint, Constraint::EllipsoidZ(_)) {
        return Err(Error::InvalidParameter("refined intervals pair tau0 with the value ellipsoid".into()));
    }
    solve_query(qp)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub status: Vec<PointStatus>,
}

/// Intervals at every grid point, computed in parallel.
pub fn build_band(grid: &[f64], gp: &GramPack, tau: &NormBound, constraint: &Constraint) -> Result<Band> {
    let params = gp.params;
    let leading = gp.leading_inputs();
    let solver = IntervalSolver::new(&gp.k2(), tau.tau, constraint)?;
    let kappa0 = params.diagonal() + params.jitter_abs();
    let points: Vec<(f64, Interval)> = grid
        .par_iter()
        .map(|&x| {
            let x0 = nudge(x, leading);
            let k = kernel_column(x0, leading, &params);
            (x0, solver.interval(&k, kappa0))
        })
        .collect();
    Ok(Band {
        grid: points.iter().map(|p| p.0).collect(),
        lower: points.iter().map(|p| p.1.lo).collect(),
        upper: points.iter().map(|p| p.1.hi).collect(),
        status: points.iter().map(|p| p.1.status).collect(),
    })
}

impl Band {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn all_feasible(&self) -> bool {
        self.status.iter().all(|s| *s != PointStatus::Infeasible)
    }

    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.lower.iter().zip(self.upper.iter()).map(|(l, u)| u - l)
    }

    /// Mean width over the non-infeasible points.
    pub fn mean_width(&self) -> f64 {
        let (sum, count) = self
            .widths()
            .zip(self.status.iter())
            .filter(|(_, s)| **s != PointStatus::Infeasible)
            .fold((0.0, 0usize), |(s, c), (w, _)| (s + w, c + 1));
        if count == 0 {
            f64::NAN
        } else {
            sum / count as f64
        }
    }

    pub fn max_width(&self) -> f64 {
        self.widths().fold(f64::NAN, f64::max)
    }

    /// Whether `f(x)` lies within the band at every grid point.
    pub fn contains_graph(&self, f: impl Fn(f64) -> f64) -> bool {
        (0..self.len()).all(|j| {
            let y = f(self.grid[j]);
            self.status[j] != PointStatus::Infeasible && y >= self.lower[j] && y <= self.upper[j]
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,lower,upper,status\n");
        for j in 0..self.len() {
            let _ = writeln!(out, "{},{},{},{}", self.grid[j], self.lower[j], self.upper[j], self.status[j].as_str());
        }
        out
    }
}
