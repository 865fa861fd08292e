//! Convex quadratic minimization over a box and over the unit ball.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::linalg::SymEigen;

const MULTIPLIER_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 20_000;

#[derive(Debug, Clone)]
pub struct BoxQpSolution {
    pub z: DVector<f64>,
    pub value: f64,
    /// Frank–Wolfe lower bound on the optimal value.
    pub lower_bound: f64,
    /// Active-set pivots taken.
    pub iterations: usize,
    /// The pivot budget ran out and coordinate descent finished the job.
    pub fell_back: bool,
}

fn objective(q: &DMatrix<f64>, g: &DVector<f64>, z: &DVector<f64>) -> f64 {
    0.5 * z.dot(&(q * z)) + g.dot(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Minimizes `½ zᵀQz + gᵀz` over `lo ≤ z ≤ hi` for positive-definite `Q`.
///
/// Primal active-set method: every pivot solves the free block exactly, so
/// the iteration count does not depend on the conditioning of `Q`, which
/// for inverse kernel matrices is routinely 1e8 or worse.
pub fn box_qp(
    q: &DMatrix<f64>,
    g: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    start: &DVector<f64>,
) -> BoxQpSolution {
    let n = g.len();
    let mut z = DVector::from_fn(n, |i, _| start[i].clamp(lo[i], hi[i]));
    let mut state: Vec<Bound> = (0..n)
        .map(|i| {
            if z[i] <= lo[i] {
                Bound::Lower
            } else if z[i] >= hi[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();
    let max_pivots = 20 * n + 100;
    let mut iterations = 0;
    let mut fell_back = false;
    let mut stationary = false;

    loop {
        if iterations >= max_pivots {
            fell_back = true;
            coordinate_descent(q, g, lo, hi, &mut z);
            break;
        }
        iterations += 1;
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        if !stationary && !free.is_empty() {
            let qff = DMatrix::from_fn(free.len(), free.len(), |a, b| q[(free[a], free[b])]);
            let mut rhs = DVector::from_fn(free.len(), |a, _| -g[free[a]]);
            for (a, &i) in free.iter().enumerate() {
                for j in (0..n).filter(|&j| state[j] != Bound::Free) {
                    rhs[a] -= q[(i, j)] * z[j];
                }
            }
            let Some(target) = solve_spd(qff, &rhs) else {
                fell_back = true;
                coordinate_descent(q, g, lo, hi, &mut z);
                break;
            };
            let mut alpha = 1.0;
            let mut blocking = None;
            for (a, &i) in free.iter().enumerate() {
                let p = target[a] - z[i];
                let room = if p < 0.0 {
                    (lo[i] - z[i]) / p
                } else if p > 0.0 {
                    (hi[i] - z[i]) / p
                } else {
                    f64::INFINITY
                };
                if room < alpha {
                    alpha = room.max(0.0);
                    blocking = Some((i, if p < 0.0 { Bound::Lower } else { Bound::Upper }));
                }
            }
            for (a, &i) in free.iter().enumerate() {
                z[i] = (z[i] + alpha * (target[a] - z[i])).clamp(lo[i], hi[i]);
            }
            match blocking {
                Some((i, side)) => {
                    z[i] = if side == Bound::Lower { lo[i] } else { hi[i] };
                    state[i] = side;
                }
                None => stationary = true,
            }
            continue;
        }
        // stationary on the current face: release the worst wrong-signed multiplier
        let grad = q * &z + g;
        let tol = MULTIPLIER_TOL * (1.0 + g.amax() + (q * &z).amax());
        let mut worst = None;
        let mut worst_violation = tol;
        for i in 0..n {
            let violation = match state[i] {
                Bound::Lower => -grad[i],
                Bound::Upper => grad[i],
                Bound::Free => continue,
            };
            if violation > worst_violation {
                worst_violation = violation;
                worst = Some(i);
            }
        }
        match worst {
            Some(i) => {
                state[i] = Bound::Free;
                stationary = false;
            }
            None => break,
        }
    }

    let value = objective(q, g, &z);
    let grad = q * &z + g;
    let mut lower_bound = value;
    for i in 0..n {
        lower_bound += (grad[i] * (lo[i] - z[i])).min(grad[i] * (hi[i] - z[i]));
    }
    BoxQpSolution { z, value, lower_bound: lower_bound.min(value), iterations, fell_back }
}

fn solve_spd(m: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    match Cholesky::new(m.clone()) {
        Some(ch) => Some(ch.solve(rhs)),
        None => crate::linalg::SpdFactor::new(&m, 0.0).map(|f| f.solve(rhs)),
    }
}

fn coordinate_descent(q: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>, z: &mut DVector<f64>) {
    let n = z.len();
    let mut grad = q * &*z + g;
    for _ in 0..MAX_SWEEPS {
        let mut moved = 0.0f64;
        for i in 0..n {
            let next = (z[i] - grad[i] / q[(i, i)]).clamp(lo[i], hi[i]);
            let delta = next - z[i];
            if delta != 0.0 {
                z[i] = next;
                grad.axpy(delta, &q.column(i), 1.0);
                moved = moved.max(delta.abs() * q[(i, i)]);
            }
        }
        if moved <= 1e-14 * (1.0 + grad.amax()) {
            break;
        }
    }
}

/// `min ωᵀHω + 2hᵀω` over `‖ω‖ ≤ 1` for positive-semidefinite `H`.
#[derive(Debug, Clone)]
pub struct BallQp {
    eig: SymEigen,
}

#[derive(Debug, Clone)]
pub struct BallQpSolution {
    /// Minimizer in the eigenbasis of `H`.
    pub w_rot: DVector<f64>,
    pub value: f64,
    /// Multiplier of the ball constraint.
    pub multiplier: f64,
}

impl BallQp {
    pub fn new(h: &DMatrix<f64>) -> Self {
        let mut eig = SymEigen::new(h);
        eig.values.iter_mut().for_each(|v| *v = v.max(0.0));
        Self { eig }
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eig.values
    }

    /// Coordinates of `v` in the eigenbasis.
    pub fn rotate(&self, v: &DVector<f64>) -> DVector<f64> {
        self.eig.vectors.tr_mul(v)
    }

    pub fn unrotate(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.eig.vectors * v
    }

    /// Solves with the linear term already rotated into the eigenbasis.
    pub fn solve_rotated(&self, h: &DVector<f64>) -> BallQpSolution {
        let d = &self.eig.values;
        let n = d.len();
        let d_max = d.iter().copied().fold(0.0, f64::max);
        let h_norm = h.norm();
        let value_of = |w: &DVector<f64>| -> f64 { (0..n).map(|j| d[j] * w[j] * w[j] + 2.0 * h[j] * w[j]).sum() };
        if h_norm == 0.0 {
            return BallQpSolution { w_rot: DVector::zeros(n), value: 0.0, multiplier: 0.0 };
        }

        // interior stationary point, ignoring flat directions the linear term does not reach
        let flat = 1e-14 * d_max.max(f64::MIN_POSITIVE);
        let mut interior = Some(DVector::zeros(n));
        if let Some(w) = interior.as_mut() {
            for j in 0..n {
                if d[j] > flat {
                    w[j] = -h[j] / d[j];
                } else if h[j].abs() > 1e-12 * h_norm {
                    interior = None;
                    break;
                }
            }
        }
        if let Some(w) = interior {
            if w.norm_squared() <= 1.0 {
                let value = value_of(&w);
                return BallQpSolution { w_rot: w, value, multiplier: 0.0 };
            }
        }

        // boundary: Σ h_j² / (d_j + μ)² = 1 with μ > 0; at μ = ‖h‖ the sum is ≤ 1
        let norm_sq = |mu: f64| (0..n).map(|j| (h[j] / (d[j] + mu)).powi(2)).sum::<f64>();
        let (mut lo, mut hi) = (0.0f64, h_norm);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if norm_sq(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = hi;
        let w = DVector::from_fn(n, |j, _| -h[j] / (d[j] + mu));
        let value = value_of(&w);
        BallQpSolution { w_rot: w, value, multiplier: mu }
    }

    pub fn solve(&self, h: &DVector<f64>) -> (DVector<f64>, f64) {
        let s = self.solve_rotated(&self.rotate(h));
        (self.unrotate(&s.w_rot), s.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(rng: &mut ChaCha8Rng, n: usize, ridge: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(n, n) * ridge
    }

    #[test]
    fn box_qp_interior_matches_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_pd(&mut rng, 4, 1.0);
        let g = DVector::from_fn(4, |_, _| rng.random::<f64>() - 0.5);
        let exact = -q.clone().cholesky().unwrap().solve(&g);
        let wide = DVector::from_element(4, 1e6);
        let s = box_qp(&q, &g, &-&wide, &wide, &DVector::zeros(4));
        assert!((&s.z - &exact).amax() < 1e-10);
        assert!(s.value - s.lower_bound < 1e-9);
    }

    #[test]
    fn box_qp_matches_coordinate_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let q = random_pd(&mut rng, 6, 0.05);
            let g = DVector::from_fn(6, |_, _| 4.0 * (rng.random::<f64>() - 0.5));
            let lo = DVector::from_fn(6, |_, _| -rng.random::<f64>());
            let hi = DVector::from_fn(6, |_, _| rng.random::<f64>());
            let s = box_qp(&q, &g, &lo, &hi, &DVector::zeros(6));
            let mut z = DVector::zeros(6);
            coordinate_descent(&q, &g, &lo, &hi, &mut z);
            assert!((s.value - objective(&q, &g, &z)).abs() < 1e-9, "{} vs {}", s.value, objective(&q, &g, &z));
            assert!(s.lower_bound <= s.value && s.value - s.lower_bound < 1e-7);
        }
    }

    // exact minimum by enumerating every face of the box
    fn face_enumeration(q: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
        let n = g.len();
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(n as u32) {
            let mut z = DVector::zeros(n);
            let mut free = Vec::new();
            let mut c = code;
            for i in 0..n {
                match c % 3 {
                    0 => free.push(i),
                    1 => z[i] = lo[i],
                    _ => z[i] = hi[i],
                }
                c /= 3;
            }
            if !free.is_empty() {
                let qff = DMatrix::from_fn(free.len(), free.len(), |a, b| q[(free[a], free[b])]);
                let rhs = DVector::from_fn(free.len(), |a, _| {
                    -g[free[a]] - (0..n).map(|j| q[(free[a], j)] * z[j]).sum::<f64>()
                });
                let y = qff.lu().solve(&rhs).unwrap();
                for (a, &i) in free.iter().enumerate() {
                    z[i] = y[a];
                }
            }
            if (0..n).all(|i| z[i] >= lo[i] - 1e-12 && z[i] <= hi[i] + 1e-12) {
                best = best.min(objective(q, g, &z));
            }
        }
        best
    }

    #[test]
    fn box_qp_matches_face_enumeration_when_ill_conditioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..40 {
            let n = 6;
            // graded spectrum from 1 down to 1e-9
            let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let basis = a.qr().q();
            let spectrum = DVector::from_fn(n, |i, _| 10f64.powf(-(i as f64) * 9.0 / (n - 1) as f64));
            let q = &basis * DMatrix::from_diagonal(&spectrum) * basis.transpose();
            let q = (&q + q.transpose()) * 0.5;
            let g = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
            let lo = DVector::from_fn(n, |_, _| -rng.random::<f64>() * 3.0);
            let hi = DVector::from_fn(n, |_, _| rng.random::<f64>() * 3.0);
            let exact = face_enumeration(&q, &g, &lo, &hi);
            let s = box_qp(&q, &g, &lo, &hi, &DVector::zeros(n));
            assert!(!s.fell_back, "trial {trial}");
            assert!((s.value - exact).abs() <= 1e-9 * (1.0 + exact.abs()), "trial {trial}: {} vs {exact}", s.value);
        }
    }

    #[test]
    fn box_qp_all_active() {
        let q = DMatrix::identity(2, 2);
        let g = DVector::from_vec(vec![-10.0, 10.0]);
        let s = box_qp(
            &q,
            &g,
            &DVector::from_vec(vec![-1.0, -1.0]),
            &DVector::from_vec(vec![1.0, 1.0]),
            &DVector::zeros(2),
        );
        assert_eq!(s.z, DVector::from_vec(vec![1.0, -1.0]));
    }

    #[test]
    fn ball_qp_interior_and_boundary() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let qp = BallQp::new(&h);
        let (w, v) = qp.solve(&DVector::from_vec(vec![-0.2, 0.1]));
        assert!((w[0] - 0.1).abs() < 1e-14 && (w[1] + 0.1).abs() < 1e-14);
        assert!((v - (2.0 * 0.01 + 0.01 - 0.04 - 0.02)).abs() < 1e-14);
        let (w, _) = qp.solve(&DVector::from_vec(vec![-20.0, 0.0]));
        assert!((w[0] - 1.0).abs() < 1e-12 && w[1].abs() < 1e-12);
    }

    #[test]
    fn ball_qp_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let h = random_pd(&mut rng, 3, 0.0);
            let lin = DVector::from_fn(3, |_, _| 2.0 * (rng.random::<f64>() - 0.5));
            let (w, v) = BallQp::new(&h).solve(&lin);
            assert!(w.norm() <= 1.0 + 1e-12);
            for _ in 0..2000 {
                let mut t = DVector::from_fn(3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                if t.norm() > 1.0 {
                    t /= t.norm();
                }
                assert!(t.dot(&(&h * &t)) + 2.0 * lin.dot(&t) >= v - 1e-12);
            }
        }
    }

    #[test]
    fn ball_qp_with_zero_matrix() {
        let qp = BallQp::new(&DMatrix::zeros(2, 2));
        let (w, v) = qp.solve(&DVector::from_vec(vec![3.0, 4.0]));
        assert!((w[0] + 0.6).abs() < 1e-12 && (w[1] + 0.8).abs() < 1e-12);
        assert!((v + 10.0).abs() < 1e-12);
        let (w, v) = qp.solve(&DVector::zeros(2));
        assert_eq!(w.norm(), 0.0);
        assert_eq!(v, 0.0);
    }

    proptest! {
        #[test]
        fn box_qp_is_optimal(seed in any::<u64>(), n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_pd(&mut rng, n, 1e-3);
            let g = DVector::from_fn(n, |_, _| 4.0 * (rng.random::<f64>() - 0.5));
            let lo = DVector::from_fn(n, |_, _| -rng.random::<f64>());
            let hi = DVector::from_fn(n, |i, _| lo[i] + 2.0 * rng.random::<f64>());
            let s = box_qp(&q, &g, &lo, &hi, &DVector::zeros(n));
            let scale = 1.0 + s.value.abs();
            prop_assert!(s.value - s.lower_bound <= 1e-8 * scale);
            for _ in 0..50 {
                let z = DVector::from_fn(n, |i, _| lo[i] + (hi[i] - lo[i]) * rng.random::<f64>());
                prop_assert!(s.value <= objective(&q, &g, &z) + 1e-10 * scale);
            }
        }

        #[test]
        fn ball_qp_beats_ball_points(seed in any::<u64>(), n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_pd(&mut rng, n, 0.0);
            let lin = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
            let (w, value) = BallQp::new(&h).solve(&lin);
            prop_assert!(w.norm() <= 1.0 + 1e-9);
            for _ in 0..50 {
                let p = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
                let p = &p / p.norm().max(1.0);
                prop_assert!(value <= p.dot(&(&h * &p)) + 2.0 * lin.dot(&p) + 1e-10);
            }
        }
    }
}
