//! Small dense linear-algebra helpers shared by every module.
//!
//! One numeric policy is used throughout: symmetric positive-definite
//! systems are factored with Cholesky, and when that fails the matrix is
//! eigendecomposed with eigenvalues clamped from below to a floor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Eigendecomposition of a symmetric matrix with eigenvalues in ascending
/// order and matching eigenvector columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let sym = symmetrize(m);
        let eig = SymmetricEigen::new(sym);
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { values, vectors }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rebuilds `V f(Λ) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DVector::from_iterator(self.values.len(), self.values.iter().map(|&v| f(v)));
        let mut left = self.vectors.clone();
        for (j, mut col) in left.column_iter_mut().enumerate() {
            col *= scaled[j];
        }
        symmetrize(&(left * self.vectors.transpose()))
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Principal square root of a symmetric PSD matrix; eigenvalues below
/// `floor` are clamped to it.
pub fn psd_sqrt(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    SymEigen::new(m).map(|v| v.max(floor).sqrt())
}

/// Inverse principal square root with the same clamping policy.
pub fn psd_inv_sqrt(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    SymEigen::new(m).map(|v| 1.0 / v.max(floor).sqrt())
}

/// Factorization of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub enum SpdFactor {
    Cholesky(Cholesky<f64, Dyn>),
    /// Clamped eigendecomposition fallback.
    Eigen(SymEigen),
}

impl SpdFactor {
    /// Cholesky first; on failure, eigendecomposition with eigenvalues
    /// clamped to `floor`. A non-positive floor disables the fallback.
    pub fn new(m: &DMatrix<f64>, floor: f64) -> Option<Self> {
        let sym = symmetrize(m);
        if let Some(chol) = Cholesky::new(sym.clone()) {
            let diag_ok = chol.l_dirty().diagonal().iter().all(|v| v.is_finite() && *v > 0.0);
            if diag_ok {
                return Some(SpdFactor::Cholesky(chol));
            }
        }
        if floor <= 0.0 {
            return None;
        }
        let mut eig = SymEigen::new(&sym);
        if !eig.values.iter().all(|v| v.is_finite()) {
            return None;
        }
        eig.values.iter_mut().for_each(|v| *v = v.max(floor));
        Some(SpdFactor::Eigen(eig))
    }

    pub fn dim(&self) -> usize {
        match self {
            SpdFactor::Cholesky(c) => c.l_dirty().nrows(),
            SpdFactor::Eigen(e) => e.values.len(),
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdFactor::Cholesky(c) => c.solve(b),
            SpdFactor::Eigen(e) => {
                let mut t = e.vectors.transpose() * b;
                for (ti, &v) in t.iter_mut().zip(e.values.iter()) {
                    *ti /= v;
                }
                &e.vectors * t
            }
        }
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SpdFactor::Cholesky(c) => c.solve(b),
            SpdFactor::Eigen(e) => {
                let mut t = e.vectors.transpose() * b;
                for (i, mut row) in t.row_iter_mut().enumerate() {
                    row /= e.values[i];
                }
                &e.vectors * t
            }
        }
    }

    /// Returns `W b` for a factor `W` with `WᵀW = M⁻¹`, so that
    /// `‖W b‖² = bᵀ M⁻¹ b`.
    pub fn whiten(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdFactor::Cholesky(c) => {
                c.l_dirty().lower_triangle().solve_lower_triangular(b).expect("Cholesky factor has a positive diagonal")
            }
            SpdFactor::Eigen(e) => {
                let mut t = e.vectors.transpose() * b;
                for (ti, &v) in t.iter_mut().zip(e.values.iter()) {
                    *ti /= v.sqrt();
                }
                t
            }
        }
    }

    pub fn whiten_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            out.set_column(j, &self.whiten(&b.column(j).into_owned()));
        }
        out
    }

    /// `bᵀ M⁻¹ b`.
    pub fn inv_quad(&self, b: &DVector<f64>) -> f64 {
        self.whiten(b).norm_squared()
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for the minimum of a unimodal `f` on `[a, b]`.
/// Stops once the bracket is narrower than `tol` or after `max_iter`
/// shrinks. Returns the best point seen together with its value.
pub fn golden_section_min(
    mut f: impl FnMut(f64) -> f64,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for _ in 0..max_iter {
        if (b - a).abs() <= tol {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
            if f1 < best.1 {
                best = (x1, f1);
            }
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
            if f2 < best.1 {
                best = (x2, f2);
            }
        }
    }
    best
}
