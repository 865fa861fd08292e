//! Paley-Wiener (sinc) kernel, Gram matrices and minimum-norm interpolation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

/// Below this value of `|η (z - s)|` the kernel is evaluated through its
/// diagonal limit `η/π`.
pub const DIAGONAL_SWITCH: f64 = 1e-7;

/// Two inputs closer than this are treated as the same point.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// Relative floor for clamped eigenvalues, in units of `η/π`.
pub const EIGEN_FLOOR: f64 = 1e-12;

pub const DEFAULT_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    /// Angular band limit.
    pub eta: f64,
    /// Diagonal regularization as a multiple of `η/π`.
    pub jitter: f64,
}

impl KernelParams {
    pub fn new(eta: f64) -> Result<Self> {
        Self::with_jitter(eta, DEFAULT_JITTER)
    }

    pub fn with_jitter(eta: f64, jitter: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(Error::InvalidParameter(format!("jitter must be nonnegative, got {jitter}")));
        }
        Ok(Self { eta, jitter })
    }

    /// `k(s, s) = η/π`.
    pub fn diagonal(&self) -> f64 {
        self.eta / PI
    }

    /// Absolute amount added to Gram diagonals.
    pub fn jitter_abs(&self) -> f64 {
        self.jitter * self.diagonal()
    }

    /// Absolute eigenvalue floor for the clamped fallback factorization.
    pub fn eigen_floor(&self) -> f64 {
        EIGEN_FLOOR * self.diagonal()
    }

    pub fn eval(&self, z: f64, s: f64) -> f64 {
        pw_kernel(z, s, self)
    }

    pub fn factor(&self, m: &DMatrix<f64>) -> Result<SpdFactor> {
        SpdFactor::new(m, self.eigen_floor()).ok_or(Error::SingularGram)
    }
}

/// `sin(η(z−s)) / (π(z−s))`, with value `η/π` on the diagonal.
pub fn pw_kernel(z: f64, s: f64, params: &KernelParams) -> f64 {
    // |z - s| keeps the function exactly symmetric in its arguments.
    let h = (z - s).abs();
    if params.eta * h < DIAGONAL_SWITCH {
        params.diagonal()
    } else {
        (params.eta * h).sin() / (PI * h)
    }
}

/// Vector `(k(x, x_1), …, k(x, x_n))`.
pub fn kernel_column(x: f64, inputs: &[f64], params: &KernelParams) -> DVector<f64> {
    DVector::from_iterator(inputs.len(), inputs.iter().map(|&xi| pw_kernel(x, xi, params)))
}

/// Un-jittered Gram matrix.
pub fn raw_gram(inputs: &[f64], params: &KernelParams) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = pw_kernel(inputs[i], inputs[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

pub fn check_distinct(inputs: &[f64]) -> Result<()> {
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.sort_by(|&a, &b| inputs[a].total_cmp(&inputs[b]));
    for w in order.windows(2) {
        if (inputs[w[1]] - inputs[w[0]]).abs() <= DUPLICATE_TOL {
            let (first, second) = (w[0].min(w[1]), w[0].max(w[1]));
            return Err(Error::DuplicateInputs { first, second });
        }
    }
    Ok(())
}

/// Gram matrix of the inputs with the jitter on its diagonal, plus the
/// split into the blocks used by the kernel regression.
#[derive(Debug, Clone)]
pub struct GramPack {
    /// `n × n`, jittered.
    pub k: DMatrix<f64>,
    pub inputs: Vec<f64>,
    /// Number of leading inputs whose function values are targeted.
    pub d: usize,
    pub params: KernelParams,
}

/// Builds the jittered Gram matrix. `d` defaults to `n`; set it with
/// [`GramPack::with_d`].
pub fn gram(inputs: &[f64], params: &KernelParams) -> Result<GramPack> {
    if inputs.is_empty() {
        return Err(Error::InvalidParameter("no inputs".into()));
    }
    check_distinct(inputs)?;
    let mut k = raw_gram(inputs, params);
    let j = params.jitter_abs();
    for i in 0..inputs.len() {
        k[(i, i)] += j;
    }
    Ok(GramPack { k, inputs: inputs.to_vec(), d: inputs.len(), params: *params })
}

impl GramPack {
    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    pub fn with_d(mut self, d: usize) -> Result<Self> {
        if d == 0 || d > self.n() {
            return Err(Error::InvalidParameter(format!("d must lie in 1..={}, got {d}", self.n())));
        }
        self.d = d;
        Ok(self)
    }

    /// `K` with its last `n − d` columns removed.
    pub fn k1(&self) -> DMatrix<f64> {
        self.k.columns(0, self.d).into_owned()
    }

    /// Leading `d × d` block of `K`.
    pub fn k2(&self) -> DMatrix<f64> {
        self.k.view((0, 0), (self.d, self.d)).into_owned()
    }

    pub fn leading_inputs(&self) -> &[f64] {
        &self.inputs[..self.d]
    }
}

/// `f̄(x) = Σ α_k k(x, x_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolant {
    pub coefficients: DVector<f64>,
    pub centers: Vec<f64>,
    pub params: KernelParams,
}

impl Interpolant {
    pub fn eval(&self, x: f64) -> f64 {
        eval_interpolant(self, x)
    }

    /// `αᵀ K α` with the exact (un-jittered) kernel.
    pub fn squared_norm(&self) -> f64 {
        let k = raw_gram(&self.centers, &self.params);
        let a = &self.coefficients;
        a.dot(&(k * a)).max(0.0)
    }
}

pub fn eval_interpolant(f: &Interpolant, x: f64) -> f64 {
    f.centers.iter().zip(f.coefficients.iter()).map(|(&c, &a)| a * pw_kernel(x, c, &f.params)).sum()
}

const REFINE_STEPS: usize = 50;

/// Minimum-norm element of the RKHS through `(inputs[k], values[k])`.
pub fn min_norm_interpolant(inputs: &[f64], values: &[f64], params: &KernelParams) -> Result<Interpolant> {
    if inputs.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: inputs.len(), found: values.len() });
    }
    let gp = gram(inputs, params)?;
    let factor = params.factor(&gp.k)?;
    let z = DVector::from_column_slice(values);
    let mut coefficients = factor.solve(&z);
    if !coefficients.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularGram);
    }
    // The jittered factor only preconditions: refine against the raw Gram
    // so the interpolant goes through the data. Stops once the residual
    // stops shrinking, which on badly conditioned inputs leaves the
    // jittered solution nearly untouched.
    if params.jitter > 0.0 {
        let raw = raw_gram(inputs, params);
        let mut residual = &z - &raw * &coefficients;
        for _ in 0..REFINE_STEPS {
            let candidate = &coefficients + factor.solve(&residual);
            let next = &z - &raw * &candidate;
            if !(next.norm() < residual.norm()) {
                break;
            }
            coefficients = candidate;
            residual = next;
        }
    }
    Ok(Interpolant { coefficients, centers: inputs.to_vec(), params: *params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(eta: f64) -> KernelParams {
        KernelParams::with_jitter(eta, 0.0).unwrap()
    }

    #[test]
    fn jittered_interpolant_still_interpolates() {
        let params = KernelParams::new(30.0).unwrap();
        let x: Vec<f64> = (0..12).map(|k| k as f64 * 0.11 + 0.01 * (k % 3) as f64).collect();
        let z: Vec<f64> = (0..12).map(|k| (k as f64 * 0.7).cos()).collect();
        let f = min_norm_interpolant(&x, &z, &params).unwrap();
        for (xk, zk) in x.iter().zip(z.iter()) {
            assert!((f.eval(*xk) - zk).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_value() {
        assert!((pw_kernel(0.7, 0.7, &p(30.0)) - 30.0 / PI).abs() < 1e-15);
        assert!((30.0 / PI - 9.549_296_585_513_72).abs() < 1e-12);
    }

    #[test]
    fn first_zero_of_sinc() {
        assert!(pw_kernel(0.0, PI / 30.0, &p(30.0)).abs() < 1e-14);
    }

    #[test]
    fn off_diagonal_value() {
        // sin(3) / (0.1 π), evaluated with mpmath at 30 digits.
        let expected = 0.449_198_937_037_919_6;
        assert!((pw_kernel(0.0, 0.1, &p(30.0)) - expected).abs() < 1e-12);
    }

    #[test]
    fn continuity_at_diagonal() {
        let k = p(30.0);
        assert!((pw_kernel(0.3 + 1e-12, 0.3, &k) - k.diagonal()).abs() < 1e-6);
        // just above the switch-over the closed form is used
        let h = 2.0 * DIAGONAL_SWITCH / 30.0;
        assert!((pw_kernel(h, 0.0, &k) - k.diagonal()).abs() < 1e-9);
    }

    #[test]
    fn single_point_gram() {
        let g = gram(&[0.5], &p(30.0)).unwrap();
        assert_eq!(g.k.shape(), (1, 1));
        assert!((g.k[(0, 0)] - 30.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn two_point_gram() {
        let g = gram(&[0.0, 0.1], &p(30.0)).unwrap();
        let off = 0.449_198_937_037_919_6;
        assert!((g.k[(0, 1)] - off).abs() < 1e-12);
        assert_eq!(g.k[(0, 1)], g.k[(1, 0)]);
        assert!((g.k[(1, 1)] - 9.549_296_585_513_72).abs() < 1e-12);
    }

    #[test]
    fn duplicate_inputs_rejected() {
        assert_eq!(gram(&[0.0, 0.0], &p(30.0)).unwrap_err(), Error::DuplicateInputs { first: 0, second: 1 });
        assert!(matches!(
            gram(&[0.3, 0.9, 0.3 + 1e-13], &p(30.0)),
            Err(Error::DuplicateInputs { first: 0, second: 2 })
        ));
    }

    #[test]
    fn jitter_lands_on_diagonal() {
        let params = KernelParams::new(30.0).unwrap();
        let g = gram(&[0.0, 0.4], &params).unwrap();
        let expected = params.diagonal() * (1.0 + DEFAULT_JITTER);
        assert!((g.k[(0, 0)] - expected).abs() < 1e-15 * expected);
        assert!(params.jitter_abs() <= 1e-6 * params.diagonal());
    }

    #[test]
    fn blocks_follow_d() {
        let g = gram(&[0.0, 0.2, 0.5, 0.9], &p(10.0)).unwrap().with_d(2).unwrap();
        assert_eq!(g.k1().shape(), (4, 2));
        assert_eq!(g.k2(), g.k.view((0, 0), (2, 2)).into_owned());
        assert!(gram(&[0.0], &p(10.0)).unwrap().with_d(2).is_err());
        assert!(gram(&[0.0], &p(10.0)).unwrap().with_d(0).is_err());
    }

    #[test]
    fn zero_values_give_zero_interpolant() {
        let f = min_norm_interpolant(&[0.0, 0.3, 0.8], &[0.0; 3], &p(30.0)).unwrap();
        assert!(f.coefficients.iter().all(|&a| a == 0.0));
        assert_eq!(f.squared_norm(), 0.0);
        assert_eq!(f.eval(0.123), 0.0);
    }

    #[test]
    fn two_point_interpolation() {
        let params = p(30.0);
        let f = min_norm_interpolant(&[0.0, 0.1], &[1.0, 0.0], &params).unwrap();
        // direct 2x2 solve
        let a = 30.0 / PI;
        let b = pw_kernel(0.0, 0.1, &params);
        let det = a * a - b * b;
        let alpha = [a / det, -b / det];
        assert!((f.coefficients[0] - alpha[0]).abs() < 1e-12);
        assert!((f.coefficients[1] - alpha[1]).abs() < 1e-12);
        assert!((f.eval(0.0) - 1.0).abs() < 1e-10);
        assert!(f.eval(0.1).abs() < 1e-10);
    }

    #[test]
    fn eval_matches_term_by_term_sum() {
        let params = p(30.0);
        let f = Interpolant {
            coefficients: DVector::from_vec(vec![0.4, -1.3, 0.25]),
            centers: vec![0.11, 0.52, 0.87],
            params,
        };
        for &x in &[-0.3, 0.0, 0.11, 0.6, 1.4] {
            let mut s = 0.0;
            for k in 0..3 {
                let h = x - f.centers[k];
                let kv = if h == 0.0 { 30.0 / PI } else { (30.0 * h).sin() / (PI * h) };
                s += f.coefficients[k] * kv;
            }
            assert!((f.eval(x) - s).abs() < 1e-12);
        }
    }

    #[test]
    fn no_interpolating_span_element_has_smaller_norm() {
        // K is invertible, so within span{k(·, x_j)} the interpolant is
        // unique; compare against interpolating elements of spans enlarged
        // by one random extra center.
        let params = p(12.0);
        let inputs = [0.05, 0.31, 0.62, 0.93];
        let values = [0.4, -0.2, 0.9, 0.1];
        let best = min_norm_interpolant(&inputs, &values, &params).unwrap().squared_norm();
        let mut rng_state = 7u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..500 {
            // extra center with random coefficient; fix the remaining
            // coefficients so the data are still interpolated
            let extra = 1.2 * next() - 0.1;
            if inputs.iter().any(|&x| (x - extra).abs() < 1e-3) {
                continue;
            }
            let c_extra = 4.0 * next() - 2.0;
            let k = raw_gram(&inputs, &params);
            let kcol = kernel_column(extra, &inputs, &params);
            let rhs = DVector::from_column_slice(&values) - &kcol * c_extra;
            let alpha = k.clone().lu().solve(&rhs).unwrap();
            let mut all = inputs.to_vec();
            all.push(extra);
            let mut coeffs: Vec<f64> = alpha.iter().copied().collect();
            coeffs.push(c_extra);
            let g = Interpolant { coefficients: DVector::from_vec(coeffs), centers: all, params };
            for (x, v) in inputs.iter().zip(values.iter()) {
                assert!((g.eval(*x) - v).abs() < 1e-8);
            }
            assert!(g.squared_norm() >= best - 1e-10);
        }
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric(z in -5.0f64..5.0, s in -5.0f64..5.0, eta in 0.1f64..100.0) {
            let k = p(eta);
            prop_assert_eq!(pw_kernel(z, s, &k), pw_kernel(s, z, &k));
        }

        #[test]
        fn gram_is_psd(xs in proptest::collection::vec(0.0f64..1.0, 1..=8), eta in 1.0f64..60.0) {
            prop_assume!(check_distinct(&xs).is_ok());
            let k = raw_gram(&xs, &p(eta));
            let min = crate::linalg::SymEigen::new(&k).min();
            prop_assert!(min >= -1e-8, "min eigenvalue {}", min);
        }
    }
}
