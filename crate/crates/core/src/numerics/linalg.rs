//! Dense solvers: Cholesky-backed ridge regression and a dominant-eigenvalue
//! magnitude estimate by power iteration.

use super::matrix::{axpy, dot, norm, Matrix, SparseRows};
use super::NumericsError;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factorises a symmetric positive-definite matrix.
    ///
    /// `pivot_floor` is a known lower bound on the smallest eigenvalue of `a`
    /// (zero when none is known). Every pivot of an exact factorisation is at
    /// least that large, so a pivot that rounding pushes below it is raised
    /// back to it instead of failing.
    pub fn factor(a: &Matrix, pivot_floor: f64) -> Result<Self, NumericsError> {
        if !a.is_square() {
            return Err(NumericsError::NonSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
        let tiny = scale * f64::EPSILON * n as f64;
        for j in 0..n {
            let lj = l.row(j)[..j].to_vec();
            let mut d = a[(j, j)] - dot(&lj, &lj);
            if pivot_floor > 0.0 {
                d = d.max(pivot_floor);
            } else if !(d > tiny) {
                return Err(NumericsError::SingularSystem);
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &lj);
                l[(i, j)] = s / d;
            }
        }
        if !l.is_finite() {
            return Err(NumericsError::NonFinite);
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn factor_l(&self) -> &Matrix {
        &self.l
    }

    /// Solves `L y = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let r = self.l.row(i);
            let s = b[i] - dot(&r[..i], &b[..i]);
            b[i] = s / r[i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_in_place(&self, y: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let xi = y[i] / self.l[(i, i)];
            y[i] = xi;
            // subtract column i of Lᵀ (row i of L) from the remaining entries
            let r = self.l.row(i);
            for k in 0..i {
                y[k] -= r[k] * xi;
            }
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.forward_in_place(b);
        self.backward_in_place(b);
    }

    /// `A⁻¹`, symmetrised.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        // Invert L column by column, then A⁻¹ = L⁻ᵀ L⁻¹.
        let mut linv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            for i in j..n {
                let r = self.l.row(i);
                let s = e[i] - dot(&r[j..i], &e[j..i]);
                e[i] = s / r[i];
            }
            for i in j..n {
                linv[(i, j)] = e[i];
            }
        }
        // (L⁻ᵀ L⁻¹)[i][k] = sum_m linv[m][i] linv[m][k], m >= max(i,k)
        let mut inv = Matrix::zeros(n, n);
        for m in 0..n {
            let r = linv.row(m);
            for i in 0..=m {
                let ri = r[i];
                if ri == 0.0 {
                    continue;
                }
                let row = inv.row_mut(i);
                for k in i..=m {
                    row[k] += ri * r[k];
                }
            }
        }
        for i in 0..n {
            for k in 0..i {
                inv[(i, k)] = inv[(k, i)];
            }
        }
        inv
    }

    /// `bᵀ A⁻¹ b = ‖L⁻¹ b‖²`, never negative.
    pub fn inv_quad_form(&self, b: &[f64]) -> f64 {
        let mut y = b.to_vec();
        self.forward_in_place(&mut y);
        dot(&y, &y)
    }
}

/// A ridge fit together with the quantities needed for prediction intervals.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    /// p×q coefficient matrix.
    pub coef: Matrix,
    /// Factor of `XᵀX + λI`.
    pub factor: Cholesky,
    pub lambda: f64,
}

impl RidgeFit {
    /// `(XᵀX + λI)⁻¹`
    pub fn gram_inv(&self) -> Matrix {
        self.factor.inverse()
    }

    /// Trace of the hat matrix `X (XᵀX+λI)⁻¹ Xᵀ`, i.e. `p − λ·tr((XᵀX+λI)⁻¹)`.
    pub fn effective_params(&self, gram_inv: &Matrix) -> f64 {
        gram_inv.rows() as f64 - self.lambda * gram_inv.trace()
    }
}

/// `argmin ‖XB − Y‖² + λ‖B‖²` via the normal equations.
pub fn ridge_solve(x: &Matrix, y: &Matrix, lambda: f64) -> Result<Matrix, NumericsError> {
    ridge_fit(x, y, lambda).map(|f| f.coef)
}

pub fn ridge_fit(x: &Matrix, y: &Matrix, lambda: f64) -> Result<RidgeFit, NumericsError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(NumericsError::InvalidArgument(format!(
            "ridge parameter must be finite and >= 0, got {lambda}"
        )));
    }
    if x.rows() == 0 {
        return Err(NumericsError::InvalidArgument(
            "design matrix has no rows".into(),
        ));
    }
    if x.rows() != y.rows() {
        return Err(NumericsError::DimensionMismatch {
            expected: x.rows(),
            found: y.rows(),
        });
    }
    let mut gram = x.gram();
    for i in 0..gram.rows() {
        gram[(i, i)] += lambda;
    }
    if !gram.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let factor = Cholesky::factor(&gram, lambda)?;
    let xty = x.t_matmul(y)?;
    let (p, q) = (x.cols(), y.cols());
    let mut coef = Matrix::zeros(p, q);
    let mut col = vec![0.0; p];
    for j in 0..q {
        for i in 0..p {
            col[i] = xty[(i, j)];
        }
        factor.solve_in_place(&mut col);
        for i in 0..p {
            coef[(i, j)] = col[i];
        }
    }
    Ok(RidgeFit {
        coef,
        factor,
        lambda,
    })
}

enum Operator<'a> {
    Dense(&'a Matrix),
    Sparse(SparseRows),
}

impl Operator<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Operator::Dense(m) => {
                for (o, r) in out.iter_mut().zip(m.row_iter()) {
                    *o = dot(r, x);
                }
            }
            Operator::Sparse(s) => s.matvec_into(x, out),
        }
    }
}

/// Magnitude of the dominant eigenvalue of a square matrix by power iteration.
///
/// Starts from the normalised all-ones vector. Each iteration takes two power
/// steps `w1 = Aq`, `w2 = Aw1` and tests two convergence conditions:
///
/// * the Rayleigh residual `‖w1 − (qᵀw1) q‖ ≤ tol·‖w1‖` (a single real
///   dominant eigenvalue), giving `|qᵀw1|`;
/// * the residual of `span{q, Aq}` as an invariant subspace, whose 2×2
///   Rayleigh–Ritz projection then carries a dominant complex-conjugate or
///   `±λ` pair, giving the larger Ritz value modulus.
///
/// A real random matrix frequently has a complex dominant pair, where the
/// plain Rayleigh quotient oscillates forever; the second test covers it.
/// If the all-ones vector is annihilated (`A·1 = 0`), the iteration restarts
/// once from a fixed quasi-random vector.
pub fn spectral_radius(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NonSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if max_iter == 0 || !(tol > 0.0) {
        return Err(NumericsError::InvalidArgument(
            "spectral_radius needs max_iter >= 1 and tol > 0".into(),
        ));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(0.0);
    }
    if !m.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let nnz = m.as_slice().iter().filter(|v| **v != 0.0).count();
    if nnz == 0 {
        return Ok(0.0);
    }
    let op = if nnz * 2 < n * n {
        Operator::Sparse(SparseRows::from_dense(m))
    } else {
        Operator::Dense(m)
    };

    let ones = vec![1.0; n];
    match power_iterate(&op, &ones, tol, max_iter)? {
        Some(r) => Ok(r),
        None => {
            let alt: Vec<f64> = (0..n)
                .map(|i| 0.5 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
                .collect();
            match power_iterate(&op, &alt, tol, max_iter)? {
                Some(r) => Ok(r),
                // both start vectors annihilated within two steps: nilpotent on their span
                None => Ok(0.0),
            }
        }
    }
}

/// `Ok(None)` when the start vector collapses to zero before any estimate exists.
fn power_iterate(
    op: &Operator<'_>,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Option<f64>, NumericsError> {
    let n = start.len();
    let mut q = start.to_vec();
    let s = norm(&q);
    q.iter_mut().for_each(|v| *v /= s);
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut e2 = vec![0.0; n];
    let mut ae2 = vec![0.0; n];

    for _ in 0..max_iter {
        op.apply(&q, &mut w1);
        let n1 = norm(&w1);
        if n1 == 0.0 {
            return Ok(None);
        }
        let rq = dot(&q, &w1);
        e2.copy_from_slice(&w1);
        axpy(-rq, &q, &mut e2);
        let nr = norm(&e2);
        if nr <= tol * n1 {
            return Ok(Some(rq.abs()));
        }
        e2.iter_mut().for_each(|v| *v /= nr);

        op.apply(&w1, &mut w2);
        // A e2 = (A w1 − rq·w1) / nr
        ae2.copy_from_slice(&w2);
        axpy(-rq, &w1, &mut ae2);
        ae2.iter_mut().for_each(|v| *v /= nr);
        // Ritz matrix H = [[rq, h12], [nr, h22]] in the basis {q, e2}
        let h12 = dot(&q, &ae2);
        let h22 = dot(&e2, &ae2);
        axpy(-h12, &q, &mut ae2);
        axpy(-h22, &e2, &mut ae2);
        let ritz = ritz_modulus(rq, h12, nr, h22);
        if norm(&ae2) <= tol * n1.max(ritz) {
            return Ok(Some(ritz));
        }

        let n2 = norm(&w2);
        if n2 == 0.0 {
            // A²q = 0: span{q, Aq} is invariant and the residual test above
            // holds up to rounding
            return Ok(Some(ritz));
        }
        q.iter_mut().zip(&w2).for_each(|(qi, wi)| *qi = wi / n2);
    }
    Err(NumericsError::NonConvergence { max_iter })
}

/// Largest eigenvalue modulus of `[[a, b], [c, d]]`.
fn ritz_modulus(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let half_tr = 0.5 * (a + d);
    let det = a * d - b * c;
    let disc = half_tr * half_tr - det;
    if disc < 0.0 {
        det.abs().sqrt()
    } else {
        let sq = disc.sqrt();
        (half_tr + sq).abs().max((half_tr - sq).abs())
    }
}
