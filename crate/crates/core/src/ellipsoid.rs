//! Ellipsoidal outer approximation of the rank-test confidence region and
//! its image in function-value space.
//!
//! An [`Ellipsoid`] is stored by its principal axes and semi-axis lengths
//! rather than by its shape matrix: `{center + P diag(σ) ω : ‖ω‖ ≤ 1}`.
//! The shape matrix `H = P diag(σ⁻²) Pᵀ` is available on demand. Carrying
//! the axes keeps push-forwards through ill-conditioned Gram matrices
//! accurate, since no inverse of `H` ever has to be formed.

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{SpdFactor, SymEigen};
use crate::lmi::{SchurProblem, SEARCH_TOL};
use crate::perturbation::EvaluationContext;

/// Eigenvalues of a shape matrix at or below this fraction of the largest
/// one are treated as zero (an unbounded axis).
const FLAT_TOL: f64 = 1e-14;

/// Most negative eigenvalue accepted (and clamped) in a shape matrix.
const PSD_TOL: f64 = 1e-8;

/// Components along unbounded axes below this fraction of `‖c‖` are
/// ignored by the support function.
const UNBOUNDED_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    ParameterSpace,
    FunctionValueSpace,
}

/// `{u : (u − center)ᵀ H (u − center) ≤ 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: DVector<f64>,
    /// Orthonormal principal axes, one per column.
    pub axes: DMatrix<f64>,
    /// Semi-axis lengths; `+∞` marks an unbounded direction, `0` a
    /// collapsed one.
    pub semi_axes: DVector<f64>,
    pub space: Space,
}

impl Ellipsoid {
    pub fn from_shape(center: DVector<f64>, shape: &DMatrix<f64>, space: Space) -> Result<Self> {
        let d = center.len();
        if shape.shape() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, found: shape.nrows() });
        }
        let eig = SymEigen::new(shape);
        let top = eig.max().max(0.0);
        if eig.min() < -PSD_TOL * top.max(1.0) {
            return Err(Error::NotPositiveSemidefinite(eig.min()));
        }
        let semi_axes = DVector::from_iterator(
            d,
            eig.values.iter().map(|&v| if v <= FLAT_TOL * top { f64::INFINITY } else { 1.0 / v.sqrt() }),
        );
        Ok(Self { center, axes: eig.vectors, semi_axes, space })
    }

    /// The image of the unit ball under `ω ↦ center + generator · ω`.
    pub fn from_generator(center: DVector<f64>, generator: &DMatrix<f64>, space: Space) -> Result<Self> {
        let d = center.len();
        if generator.nrows() != d {
            return Err(Error::DimensionMismatch { expected: d, found: generator.nrows() });
        }
        if generator.iter().any(|v| !v.is_finite()) {
            return Err(Error::UnboundedDirection);
        }
        let svd = SVD::new(generator.clone(), true, false);
        let u = svd.u.expect("requested U");
        let k = u.ncols();
        let mut axes = DMatrix::zeros(d, d);
        let mut semi_axes = DVector::zeros(d);
        axes.columns_mut(0, k).copy_from(&u);
        semi_axes.rows_mut(0, k).copy_from(&svd.singular_values);
        if k < d {
            // fewer generator columns than dimensions: complete the basis with
            // collapsed axes
            let complement = SVD::new(DMatrix::identity(d, d) - &u * u.transpose(), true, false);
            let cu = complement.u.expect("requested U");
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| complement.singular_values[b].total_cmp(&complement.singular_values[a]));
            for (slot, &src) in order.iter().take(d - k).enumerate() {
                axes.set_column(k + slot, &cu.column(src));
            }
        }
        Ok(Self { center, axes, semi_axes, space })
    }

    pub fn unit_ball(d: usize, space: Space) -> Self {
        Self {
            center: DVector::zeros(d),
            axes: DMatrix::identity(d, d),
            semi_axes: DVector::from_element(d, 1.0),
            space,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn is_bounded(&self) -> bool {
        self.semi_axes.iter().all(|s| s.is_finite())
    }

    /// `H = P diag(σ⁻²) Pᵀ`.
    pub fn shape(&self) -> Result<DMatrix<f64>> {
        if self.semi_axes.iter().any(|&s| s == 0.0) {
            return Err(Error::CollapsedEllipsoid);
        }
        let mut left = self.axes.clone();
        for (j, mut col) in left.column_iter_mut().enumerate() {
            col /= self.semi_axes[j] * self.semi_axes[j];
        }
        Ok(crate::linalg::symmetrize(&(left * self.axes.transpose())))
    }

    /// `P diag(σ)`; only meaningful for bounded ellipsoids.
    pub fn generator(&self) -> DMatrix<f64> {
        let mut g = self.axes.clone();
        for (j, mut col) in g.column_iter_mut().enumerate() {
            col *= self.semi_axes[j];
        }
        g
    }

    /// `(u − center)ᵀ H (u − center)`; `+∞` off a collapsed axis.
    pub fn quadratic_form(&self, u: &DVector<f64>) -> f64 {
        let coords = self.axes.tr_mul(&(u - &self.center));
        let scale = (u - &self.center).norm().max(self.center.norm()).max(1.0);
        let mut total = 0.0;
        for (&c, &s) in coords.iter().zip(self.semi_axes.iter()) {
            if s.is_infinite() {
                continue;
            }
            if s == 0.0 {
                if c.abs() > 1e-12 * scale {
                    return f64::INFINITY;
                }
                continue;
            }
            total += (c / s).powi(2);
        }
        total
    }

    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        self.quadratic_form(u) <= 1.0 + tol
    }

    /// `sqrt(cᵀ H⁻¹ c)`: half the width of the ellipsoid along `c`.
    pub fn support_radius(&self, c: &DVector<f64>) -> Result<f64> {
        let coords = self.axes.tr_mul(c);
        let scale = c.norm();
        let mut total = 0.0;
        for (&w, &s) in coords.iter().zip(self.semi_axes.iter()) {
            if s.is_infinite() {
                if w.abs() > UNBOUNDED_TOL * scale {
                    return Err(Error::UnboundedDirection);
                }
                continue;
            }
            total += (w * s).powi(2);
        }
        Ok(total.sqrt())
    }
}

/// `(min, max)` of `cᵀu` over the ellipsoid.
pub fn linear_minmax_over_ellipsoid(c: &DVector<f64>, e: &Ellipsoid) -> Result<(f64, f64)> {
    if c.len() != e.dim() {
        return Err(Error::DimensionMismatch { expected: e.dim(), found: c.len() });
    }
    let mid = c.dot(&e.center);
    let r = e.support_radius(c)?;
    Ok((mid - r, mid + r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpCertificate {
    /// `γ₁ … γ_{m−1}`; `+∞` where the region is unbounded.
    pub gamma_values: Vec<f64>,
    pub gamma_star: f64,
    pub solver_tolerance: f64,
    pub infeasible_flags: Vec<bool>,
}

/// `q`-th largest entry, with `+∞` entries ranking highest.
pub fn qth_largest(values: &[f64], q: usize) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted[q - 1]
}

/// Data of the `i`-th radius program in the right singular basis of `M`.
///
/// With `x = R_n^{1/2}(θ − θ̂)` and `M = R_n^{-1/2} Q_i R_n^{-1/2}`, the
/// program data are `A = I − MᵀM`, `b = Mᵀw`, `c = −‖w‖²` where
/// `w = R_n^{-1/2}(ψ_i − Q_i θ̂)`. In the thin-SVD basis of `Φ` these are
/// `M ≅ Uᵀ G_i U` and `w ≅ Uᵀ G_i r̂ / √n′` up to the rotation `V`, which
/// changes neither the spectrum nor the optimal value.
pub fn radius_program(ctx: &EvaluationContext, i: usize) -> SchurProblem {
    assert!(i >= 1 && i < ctx.m, "radius programs are indexed 1..m");
    let g = &ctx.group_elements[i - 1];
    let u = ctx.basis();
    // M is not symmetric for permutations; the SVD diagonalizes MᵀM either way
    let m = u.tr_mul(&g.apply_rows(u));
    let w = u.tr_mul(&g.apply(ctx.residual())) / (ctx.n_prime() as f64).sqrt();
    let svd = m.svd(true, false);
    let w_rot = svd.u.as_ref().expect("left vectors requested").tr_mul(&w);
    SchurProblem {
        a: svd.singular_values.iter().map(|s| 1.0 - s * s).collect(),
        b: svd.singular_values.iter().zip(w_rot.iter()).map(|(s, wr)| s * wr).collect(),
        c: -w.norm_squared(),
        kappa: 1.0,
    }
}

/// `γ_i = max{Z₀(θ)/n′ : Z₀(θ) ≤ Z_i(θ)}`, computed through its dual
/// semidefinite program. Returns `+∞` when the set is unbounded.
pub fn gamma_i(ctx: &EvaluationContext, i: usize) -> Result<f64> {
    Ok(radius_program(ctx, i).minimize()?.map_or(f64::INFINITY, |s| s.value.max(0.0)))
}

/// Outer ellipsoid `{θ : (θ − θ̂)ᵀ R_n (θ − θ̂) ≤ γ*}` of the rank-test
/// region, normalized to `H = R_n / γ*`.
pub fn outer_ellipsoid(ctx: &EvaluationContext) -> Result<(Ellipsoid, SdpCertificate)> {
    let gamma_values = (1..ctx.m).into_par_iter().map(|i| gamma_i(ctx, i)).collect::<Result<Vec<_>>>()?;
    let gamma_star = qth_largest(&gamma_values, ctx.q);
    if !(gamma_star.is_finite() && gamma_star > 0.0) {
        return Err(Error::DegenerateRadius(gamma_star));
    }
    let scale = (ctx.n_prime() as f64 * gamma_star).sqrt();
    let semi_axes = ctx.singular_values().map(|s| scale / s);
    let ellipsoid = Ellipsoid {
        center: ctx.theta_hat.clone(),
        axes: ctx.right_vectors().clone(),
        semi_axes,
        space: Space::ParameterSpace,
    };
    let certificate = SdpCertificate {
        infeasible_flags: gamma_values.iter().map(|g| g.is_infinite()).collect(),
        gamma_values,
        gamma_star,
        solver_tolerance: SEARCH_TOL,
    };
    Ok((ellipsoid, certificate))
}

/// Image of a parameter ellipsoid under `θ ↦ K₂ θ`: center `K₂ θ̂`, shape
/// `K₂⁻¹ H K₂⁻¹`.
pub fn to_value_ellipsoid(e: &Ellipsoid, k2: &DMatrix<f64>) -> Result<Ellipsoid> {
    if e.space != Space::ParameterSpace {
        return Err(Error::InvalidParameter("expected a parameter-space ellipsoid".into()));
    }
    let d = e.dim();
    if k2.shape() != (d, d) {
        return Err(Error::DimensionMismatch { expected: d, found: k2.nrows() });
    }
    if SpdFactor::new(k2, 0.0).is_none() {
        return Err(Error::SingularGram);
    }
    if !e.is_bounded() {
        return Err(Error::UnboundedDirection);
    }
    Ellipsoid::from_generator(k2 * &e.center, &(k2 * e.generator()), Space::FunctionValueSpace)
}
