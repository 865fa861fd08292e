//! Perturbed evaluation functions and the rank test behind the
//! finite-sample confidence regions.
//!
//! The regression `v ≈ Φθ` is tested at a candidate `θ` by comparing the
//! unperturbed statistic `Z₀(θ)` with `m − 1` replicas `Z_i(θ)` in which
//! the residual vector is transformed by random elements `G_i` of a matrix
//! group under which the noise is distributionally invariant. Only the
//! first `restriction` residual coordinates are transformed; the rest are
//! left alone.
//!
//! Internally every statistic is evaluated through a thin SVD
//! `Φ = U S Vᵀ`: since `Ψ^{1/2} Φᵀ = V Uᵀ`, we have
//! `Z_i(θ) = ‖Uᵀ G_i (v − Φθ)‖²`, which stays accurate even when `ΦᵀΦ`
//! is too ill-conditioned to invert in double precision.

use nalgebra::{DMatrix, DVector, SVD};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::GramPack;
use crate::linalg::{psd_sqrt, SpdFactor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKind {
    /// Diagonal ±1 matrices; valid for symmetric noise.
    SignChange,
    /// Permutation matrices; valid for exchangeable noise.
    Permutation,
}

impl GroupKind {
    pub fn name(&self) -> &'static str {
        match self {
            GroupKind::SignChange => "signchange",
            GroupKind::Permutation => "permutation",
        }
    }
}

impl std::str::FromStr for GroupKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "signchange" | "sign" | "sign-change" => Ok(GroupKind::SignChange),
            "permutation" | "perm" => Ok(GroupKind::Permutation),
            other => Err(Error::InvalidParameter(format!("unknown group '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PerturbationGroup {
    pub kind: GroupKind,
    /// Number of leading coordinates acted on.
    pub restriction: usize,
}

impl PerturbationGroup {
    pub fn new(kind: GroupKind, restriction: usize) -> Self {
        Self { kind, restriction }
    }
}

/// Signed permutation acting on the leading coordinates, identity after.
///
/// As a matrix, row `i < d` has the single entry `signs[i]` in column
/// `perm[i]`; so `(G x)_i = signs[i] · x[perm[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    perm: Vec<usize>,
    signs: Vec<f64>,
}

impl GroupElement {
    pub fn identity(d: usize) -> Self {
        Self { perm: (0..d).collect(), signs: vec![1.0; d] }
    }

    pub fn restriction(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p) && self.signs.iter().all(|&s| s == 1.0)
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = x.clone();
        for (i, (&p, &s)) in self.perm.iter().zip(self.signs.iter()).enumerate() {
            out[i] = s * x[p];
        }
        out
    }

    /// Applies the element to every column of `x`.
    pub fn apply_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (i, (&p, &s)) in self.perm.iter().zip(self.signs.iter()).enumerate() {
            for j in 0..x.ncols() {
                out[(i, j)] = s * x[(p, j)];
            }
        }
        out
    }

    pub fn to_matrix(&self, n: usize) -> DMatrix<f64> {
        let mut g = DMatrix::identity(n, n);
        for (i, (&p, &s)) in self.perm.iter().zip(self.signs.iter()).enumerate() {
            g[(i, i)] = 0.0;
            g[(i, p)] = s;
        }
        g
    }

    /// The element `self · other`.
    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        assert_eq!(self.restriction(), other.restriction());
        let perm = self.perm.iter().map(|&p| other.perm[p]).collect();
        let signs = self.perm.iter().zip(self.signs.iter()).map(|(&p, &s)| s * other.signs[p]).collect();
        GroupElement { perm, signs }
    }
}

/// Draws a uniformly random element of the group.
pub fn sample_group_element<R: Rng + ?Sized>(
    group: &PerturbationGroup,
    n_prime: usize,
    rng: &mut R,
) -> Result<GroupElement> {
    let d = group.restriction;
    if d > n_prime {
        return Err(Error::InvalidParameter(format!("group restriction {d} exceeds dimension {n_prime}")));
    }
    let mut g = GroupElement::identity(d);
    match group.kind {
        GroupKind::SignChange => {
            for s in g.signs.iter_mut() {
                *s = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
        }
        GroupKind::Permutation => g.perm.shuffle(rng),
    }
    Ok(g)
}

/// Least-squares data `(Φ, v)` of the kernel regression
/// `‖y − K₁θ‖² + λ θᵀK₂θ`.
#[derive(Debug, Clone)]
pub struct KgpRegression {
    pub phi: DMatrix<f64>,
    pub v: DVector<f64>,
}

pub fn build_kgp_regression(gp: &GramPack, lambda_reg: f64, y: &DVector<f64>) -> Result<KgpRegression> {
    if lambda_reg < 0.0 || lambda_reg.is_nan() {
        return Err(Error::NegativeLambda(lambda_reg));
    }
    let n = gp.n();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    let k1 = gp.k1();
    if lambda_reg == 0.0 {
        return Ok(KgpRegression { phi: k1, v: y.clone() });
    }
    let d = gp.d;
    let root = psd_sqrt(&gp.k2(), gp.params.eigen_floor()) * lambda_reg.sqrt();
    let mut phi = DMatrix::zeros(n + d, d);
    phi.view_mut((0, 0), (n, d)).copy_from(&k1);
    phi.view_mut((n, 0), (d, d)).copy_from(&root);
    let mut v = DVector::zeros(n + d);
    v.rows_mut(0, n).copy_from(y);
    Ok(KgpRegression { phi, v })
}

/// Coefficients whose induced function values match `f*` at the first
/// `d` inputs: `K₂ θ̃ = (f*(x₁), …, f*(x_d))`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealVector {
    pub theta_tilde: DVector<f64>,
}

impl IdealVector {
    pub fn from_values(gp: &GramPack, values: &DVector<f64>) -> Result<Self> {
        if values.len() != gp.d {
            return Err(Error::DimensionMismatch { expected: gp.d, found: values.len() });
        }
        let factor = gp.params.factor(&gp.k2())?;
        Ok(Self { theta_tilde: factor.solve(values) })
    }
}

/// Normalized rank `position / m` of `Z₀` among all `m` statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rank {
    /// 1-based position of `Z₀` in increasing (tie-broken) order.
    pub position: usize,
    pub m: usize,
}

impl Rank {
    pub fn value(&self) -> f64 {
        self.position as f64 / self.m as f64
    }

    /// Whether the rank test accepts at confidence `1 − q/m`.
    pub fn accepts(&self, q: usize) -> bool {
        self.position + q <= self.m
    }
}

/// Everything needed to evaluate `Z_i(θ)` and to run the rank test.
#[derive(Debug, Clone)]
pub struct EvaluationContext {
    pub phi: DMatrix<f64>,
    pub v: DVector<f64>,
    /// `(ΦᵀΦ)⁻¹`.
    pub psi: DMatrix<f64>,
    /// `ΦᵀΦ / n′`.
    pub rn: DMatrix<f64>,
    pub theta_hat: DVector<f64>,
    pub m: usize,
    pub q: usize,
    pub group: PerturbationGroup,
    /// `G₁ … G_{m−1}`; `G₀` is the identity and is not stored.
    pub group_elements: Vec<GroupElement>,
    basis: DMatrix<f64>,
    singular_values: DVector<f64>,
    right: DMatrix<f64>,
    residual: DVector<f64>,
}

impl EvaluationContext {
    /// Builds the context and samples the `m − 1` group elements once.
    pub fn new<R: Rng + ?Sized>(
        phi: DMatrix<f64>,
        v: DVector<f64>,
        m: usize,
        q: usize,
        group: PerturbationGroup,
        rng: &mut R,
    ) -> Result<Self> {
        let (n_prime, d) = phi.shape();
        if v.len() != n_prime {
            return Err(Error::DimensionMismatch { expected: n_prime, found: v.len() });
        }
        if d == 0 || d > n_prime {
            return Err(Error::InvalidParameter(format!("regressor matrix must have 1..={n_prime} columns, got {d}")));
        }
        if m < 2 || q == 0 || q >= m {
            return Err(Error::InvalidParameter(format!("need m >= 2 and 0 < q < m, got m={m}, q={q}")));
        }
        let group_elements = (1..m).map(|_| sample_group_element(&group, n_prime, rng)).collect::<Result<Vec<_>>>()?;

        let svd = SVD::new(phi.clone(), true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        let s = svd.singular_values;
        let s_max = s.iter().copied().fold(0.0, f64::max);
        if !(s_max > 0.0) || s.iter().any(|&x| !(x > 1e-14 * s_max)) {
            return Err(Error::InvalidParameter("regressor matrix is rank deficient".into()));
        }
        let right = vt.transpose();
        let coords = u.transpose() * &v;
        let theta_hat = &right * DVector::from_iterator(d, coords.iter().zip(s.iter()).map(|(c, s)| c / s));
        let residual = &v - &phi * &theta_hat;

        let scaled = |power: i32| {
            let mut left = right.clone();
            for (j, mut col) in left.column_iter_mut().enumerate() {
                col *= s[j].powi(power);
            }
            &left * right.transpose()
        };
        let psi = scaled(-2);
        let rn = scaled(2) / n_prime as f64;

        Ok(Self {
            phi,
            v,
            psi,
            rn,
            theta_hat,
            m,
            q,
            group,
            group_elements,
            basis: u,
            singular_values: s,
            right,
            residual,
        })
    }

    pub fn n_prime(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    /// Target confidence `1 − q/m`.
    pub fn confidence(&self) -> f64 {
        1.0 - self.q as f64 / self.m as f64
    }

    /// Orthonormal basis `U` of the column space of `Φ`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    /// Right singular vectors `V`.
    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right
    }

    /// `v − Φθ̂`.
    pub fn residual(&self) -> &DVector<f64> {
        &self.residual
    }

    /// `G_i`, with index 0 the identity.
    pub fn element(&self, i: usize) -> GroupElement {
        if i == 0 {
            GroupElement::identity(self.group.restriction)
        } else {
            self.group_elements[i - 1].clone()
        }
    }

    fn project(&self, i: usize, r: &DVector<f64>) -> f64 {
        let g = if i == 0 { r.clone() } else { self.group_elements[i - 1].apply(r) };
        self.basis.tr_mul(&g).norm_squared()
    }

    pub fn evaluation_function(&self, i: usize, theta: &DVector<f64>) -> f64 {
        assert!(i < self.m, "index {i} out of range for m = {}", self.m);
        let r = &self.v - &self.phi * theta;
        self.project(i, &r)
    }

    /// `(Z₀(θ), …, Z_{m−1}(θ))`.
    pub fn evaluation_values(&self, theta: &DVector<f64>) -> Vec<f64> {
        let r = &self.v - &self.phi * theta;
        (0..self.m).map(|i| self.project(i, &r)).collect()
    }

    /// Rank of `Z₀(θ)` with ties broken by a fresh uniformly random total
    /// order on the indices.
    pub fn normalized_rank<R: Rng + ?Sized>(&self, theta: &DVector<f64>, rng: &mut R) -> Rank {
        let values = self.evaluation_values(theta);
        let mut priority: Vec<usize> = (0..self.m).collect();
        priority.shuffle(rng);
        rank_with_priority(&values, &priority)
    }

    pub fn sps_membership<R: Rng + ?Sized>(&self, theta: &DVector<f64>, rng: &mut R) -> bool {
        self.normalized_rank(theta, rng).accepts(self.q)
    }
}

/// Rank of `values[0]`: one plus the number of `i ≥ 1` with
/// `values[i] ≺ values[0]`, where ties go to the lower priority.
pub fn rank_with_priority(values: &[f64], priority: &[usize]) -> Rank {
    let z0 = values[0];
    let below =
        values.iter().enumerate().skip(1).filter(|&(i, &z)| z < z0 || (z == z0 && priority[i] < priority[0])).count();
    Rank { position: 1 + below, m: values.len() }
}

/// Literal `‖Ψ^{1/2} Φᵀ G (v − Φθ)‖²` with dense matrices; kept for
/// cross-checking on well-conditioned problems.
pub fn dense_evaluation(phi: &DMatrix<f64>, v: &DVector<f64>, g: &DMatrix<f64>, theta: &DVector<f64>) -> Option<f64> {
    let gram = phi.tr_mul(phi);
    let psi = SpdFactor::new(&gram, 0.0)?.solve_matrix(&DMatrix::identity(gram.nrows(), gram.ncols()));
    let root = psd_sqrt(&psi, 0.0);
    Some((root * phi.transpose() * g * (v - phi * theta)).norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gram, KernelParams};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn chi2_pvalue(counts: &[usize]) -> f64 {
        let total: usize = counts.iter().sum();
        let expected = total as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn small_context(rng: &mut ChaCha8Rng, kind: GroupKind, m: usize, q: usize) -> EvaluationContext {
        let phi = random_matrix(rng, 12, 3);
        let v = random_matrix(rng, 12, 1).column(0).into_owned();
        EvaluationContext::new(phi, v, m, q, PerturbationGroup::new(kind, 12), rng).unwrap()
    }

    #[test]
    fn zero_lambda_keeps_k1_and_y() {
        let params = KernelParams::new(30.0).unwrap();
        let gp = gram(&[0.1, 0.4, 0.7, 0.9], &params).unwrap().with_d(2).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let reg = build_kgp_regression(&gp, 0.0, &y).unwrap();
        assert_eq!(reg.phi, gp.k1());
        assert_eq!(reg.v, y);
        assert_eq!(build_kgp_regression(&gp, -1.0, &y).unwrap_err(), Error::NegativeLambda(-1.0));
    }

    #[test]
    fn identity_k2_gives_identity_bottom_block() {
        // spacing π/η makes the sinc Gram exactly (η/π)·I; η = π scales it to I
        let params = KernelParams::with_jitter(std::f64::consts::PI, 0.0).unwrap();
        let gp = gram(&[0.0, 1.0, 2.0], &params).unwrap().with_d(2).unwrap();
        assert!((gp.k2() - DMatrix::identity(2, 2)).amax() < 1e-12);
        let y = DVector::from_vec(vec![0.5, -0.5, 1.0]);
        let reg = build_kgp_regression(&gp, 1.0, &y).unwrap();
        assert_eq!(reg.phi.shape(), (5, 2));
        assert!((reg.phi.view((3, 0), (2, 2)) - DMatrix::identity(2, 2)).amax() < 1e-10);
        assert_eq!(reg.v.rows(3, 2).amax(), 0.0);
    }

    #[test]
    fn square_root_block_reproduces_scaled_k2() {
        let params = KernelParams::with_jitter(4.0, 0.0).unwrap();
        let gp = gram(&[0.0, 0.35, 0.8, 1.3], &params).unwrap().with_d(3).unwrap();
        let y = DVector::zeros(4);
        let reg = build_kgp_regression(&gp, 2.0, &y).unwrap();
        let bottom = reg.phi.view((4, 0), (3, 3)).into_owned();
        assert!((bottom.transpose() * &bottom - gp.k2() * 2.0).amax() < 1e-8);
    }

    #[test]
    fn single_coordinate_permutation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = PerturbationGroup::new(GroupKind::Permutation, 1);
        for _ in 0..20 {
            assert!(sample_group_element(&g, 5, &mut rng).unwrap().is_identity());
        }
    }

    #[test]
    fn sign_changes_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = PerturbationGroup::new(GroupKind::SignChange, 2);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let e = sample_group_element(&g, 4, &mut rng).unwrap();
            let idx = (e.signs()[0] < 0.0) as usize * 2 + (e.signs()[1] < 0.0) as usize;
            counts[idx] += 1;
        }
        assert!(chi2_pvalue(&counts) > 0.001, "{counts:?}");
    }

    #[test]
    fn element_structure_and_closure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [GroupKind::SignChange, GroupKind::Permutation] {
            let g = PerturbationGroup::new(kind, 4);
            let a = sample_group_element(&g, 7, &mut rng).unwrap();
            let b = sample_group_element(&g, 7, &mut rng).unwrap();
            for e in [&a, &b] {
                let m = e.to_matrix(7);
                assert!((m.transpose() * &m - DMatrix::identity(7, 7)).amax() == 0.0);
                assert!((m.view((4, 4), (3, 3)) - DMatrix::identity(3, 3)).amax() == 0.0);
                if kind == GroupKind::Permutation {
                    assert!(m.iter().all(|&x| x >= 0.0));
                } else {
                    for i in 0..4 {
                        for j in 0..4 {
                            assert!(i == j || m[(i, j)] == 0.0);
                        }
                    }
                }
            }
            let ab = a.compose(&b);
            assert_eq!(ab.to_matrix(7), a.to_matrix(7) * b.to_matrix(7));
            let x = DVector::from_fn(7, |i, _| i as f64 + 0.5);
            assert_eq!(ab.apply(&x), a.apply(&b.apply(&x)));
        }
        assert!(GroupElement::identity(3).is_identity());
    }

    #[test]
    fn context_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ctx = small_context(&mut rng, GroupKind::Permutation, 5, 1);
        assert!(ctx.element(0).is_identity());
        assert_eq!(ctx.group_elements.len(), 4);
    }

    #[test]
    fn context_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ctx = small_context(&mut rng, GroupKind::SignChange, 10, 2);
        let gram = ctx.phi.tr_mul(&ctx.phi);
        assert!((&ctx.psi * &gram - DMatrix::identity(3, 3)).amax() < 1e-8);
        assert!((&ctx.rn * ctx.n_prime() as f64 - &gram).amax() < 1e-10);
        let grad = ctx.phi.tr_mul(&(&ctx.v - &ctx.phi * &ctx.theta_hat));
        assert!(grad.norm() < 1e-8 * ctx.v.norm().max(1.0));
        assert!((ctx.confidence() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn z0_vanishes_at_least_squares_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ctx = small_context(&mut rng, GroupKind::SignChange, 10, 2);
        assert!(ctx.evaluation_function(0, &ctx.theta_hat) < 1e-10);
    }

    #[test]
    fn noiseless_data_zero_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let phi = random_matrix(&mut rng, 10, 2);
        let theta = DVector::from_vec(vec![0.3, -1.2]);
        let v = &phi * &theta;
        let ctx =
            EvaluationContext::new(phi, v, 8, 1, PerturbationGroup::new(GroupKind::Permutation, 10), &mut rng).unwrap();
        for z in ctx.evaluation_values(&theta) {
            assert!(z < 1e-20);
        }
    }

    #[test]
    fn matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in [GroupKind::SignChange, GroupKind::Permutation] {
            let ctx = small_context(&mut rng, kind, 6, 1);
            let theta = DVector::from_vec(vec![0.1, 0.5, -0.7]);
            for i in 0..ctx.m {
                let g = ctx.element(i).to_matrix(ctx.n_prime());
                let dense = dense_evaluation(&ctx.phi, &ctx.v, &g, &theta).unwrap();
                let fast = ctx.evaluation_function(i, &theta);
                assert!((dense - fast).abs() < 1e-10 * dense.max(1.0), "{dense} vs {fast}");
                assert!(fast >= 0.0);
            }
        }
    }

    #[test]
    fn rank_arithmetic() {
        assert_eq!(rank_with_priority(&[1.0, 2.0], &[0, 1]).value(), 0.5);
        assert_eq!(rank_with_priority(&[5.0, 2.0, 3.0, 1.0], &[0, 1, 2, 3]).value(), 1.0);
        // q = m − 1 accepts only the minimum
        let r = rank_with_priority(&[1.0, 2.0, 3.0], &[2, 0, 1]);
        assert!(r.accepts(2));
        assert!(!rank_with_priority(&[2.5, 2.0, 3.0], &[2, 0, 1]).accepts(2));
    }

    #[test]
    fn ties_are_broken_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phi = random_matrix(&mut rng, 10, 2);
        let theta = DVector::from_vec(vec![1.0, 2.0]);
        let v = &phi * &theta;
        let m = 6;
        let ctx =
            EvaluationContext::new(phi, v, m, 1, PerturbationGroup::new(GroupKind::SignChange, 10), &mut rng).unwrap();
        let mut counts = vec![0usize; m];
        for _ in 0..12_000 {
            counts[ctx.normalized_rank(&theta, &mut rng).position - 1] += 1;
        }
        assert!(chi2_pvalue(&counts) > 0.001, "{counts:?}");
    }

    #[test]
    fn invariant_residual_gives_equal_statistics() {
        // residual constant on the permuted block is a fixed point of every G_i
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let phi = random_matrix(&mut rng, 8, 2);
        let theta = DVector::from_vec(vec![0.2, 0.1]);
        let mut v = &phi * &theta;
        for i in 0..5 {
            v[i] += 0.7;
        }
        v[6] -= 0.4;
        let ctx =
            EvaluationContext::new(phi, v, 7, 1, PerturbationGroup::new(GroupKind::Permutation, 5), &mut rng).unwrap();
        let z = ctx.evaluation_values(&theta);
        for zi in &z[1..] {
            assert_eq!(*zi, z[0]);
        }
    }

    #[test]
    fn membership_monotone_in_confidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ctx = small_context(&mut rng, GroupKind::SignChange, 20, 1);
        for _ in 0..200 {
            let theta = &ctx.theta_hat + random_matrix(&mut rng, 3, 1).column(0).into_owned();
            let rank = ctx.normalized_rank(&theta, &mut rng);
            for q1 in 1..20 {
                for q2 in 1..=q1 {
                    // p2 = 1 − q2/m ≥ p1 = 1 − q1/m
                    if rank.accepts(q1) {
                        assert!(rank.accepts(q2));
                    }
                }
            }
        }
    }

    #[test]
    fn far_parameters_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let theta_star = DVector::from_vec(vec![1.0, -1.0]);
        let mut rejected = 0;
        for _ in 0..200 {
            let phi = random_matrix(&mut rng, 30, 2);
            let noise = random_matrix(&mut rng, 30, 1).column(0).into_owned() * 0.3;
            let v = &phi * &theta_star + noise;
            let ctx =
                EvaluationContext::new(phi, v, 20, 1, PerturbationGroup::new(GroupKind::SignChange, 30), &mut rng)
                    .unwrap();
            let far = &ctx.theta_hat + DVector::from_vec(vec![25.0, 25.0]);
            if !ctx.sps_membership(&far, &mut rng) {
                rejected += 1;
            }
        }
        assert!(rejected >= 195, "{rejected}");
    }

    #[test]
    fn exact_coverage_small_campaign() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let theta_star = DVector::from_vec(vec![0.5, 2.0]);
        let trials = 2000;
        let mut accepted = 0;
        for _ in 0..trials {
            let phi = random_matrix(&mut rng, 15, 2);
            let noise = random_matrix(&mut rng, 15, 1).column(0).into_owned();
            let v = &phi * &theta_star + noise;
            let ctx =
                EvaluationContext::new(phi, v, 10, 3, PerturbationGroup::new(GroupKind::SignChange, 15), &mut rng)
                    .unwrap();
            accepted += ctx.sps_membership(&theta_star, &mut rng) as usize;
        }
        let freq = accepted as f64 / trials as f64;
        let sd = (0.7f64 * 0.3 / trials as f64).sqrt();
        assert!((freq - 0.7).abs() < 4.0 * sd, "{freq}");
    }

    #[test]
    fn ideal_vector_reproduces_values() {
        let params = KernelParams::with_jitter(6.0, 0.0).unwrap();
        let gp = gram(&[0.0, 0.4, 0.9, 0.95], &params).unwrap().with_d(3).unwrap();
        let values = DVector::from_vec(vec![0.2, -0.3, 0.5]);
        let ideal = IdealVector::from_values(&gp, &values).unwrap();
        let k1theta = gp.k1() * &ideal.theta_tilde;
        assert!((k1theta.rows(0, 3) - values).amax() < 1e-10);
    }

    proptest! {
        #[test]
        fn elements_are_orthogonal_and_ranks_in_range(
            seed in any::<u64>(),
            n in 1usize..12,
            perm in any::<bool>(),
            values in proptest::collection::vec(-1.0f64..1.0, 2..30),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kind = if perm { GroupKind::Permutation } else { GroupKind::SignChange };
            let g = sample_group_element(&PerturbationGroup::new(kind, n), n, &mut rng).unwrap();
            let x = DVector::from_fn(n, |i, _| (i as f64 * 1.3).sin());
            prop_assert!((g.apply(&x).norm() - x.norm()).abs() < 1e-12);
            let priority: Vec<usize> = (0..values.len()).rev().collect();
            let rank = rank_with_priority(&values, &priority);
            prop_assert!(rank.position >= 1 && rank.position <= values.len());
            for q in 1..values.len() {
                prop_assert_eq!(rank.accepts(q), rank.position + q <= values.len());
            }
        }
    }
}
