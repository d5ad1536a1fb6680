//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Rank decisions are made on column-equilibrated matrices so that they do
//! not depend on the units of the covariates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff for symmetric pseudo-inverses.
pub const PINV_REL_TOL: f64 = 1e-10;

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Weighted mean `sum(w_i x_i) / sum(w_i)` with compensated accumulation.
pub fn weighted_mean(values: impl Iterator<Item = f64>, weights: &[f64]) -> f64 {
    let num = compensated_sum(values.zip(weights).map(|(x, w)| x * w));
    let den = compensated_sum(weights.iter().copied());
    num / den
}

pub fn column_norms(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| m.column(j).norm()).collect()
}

/// Orthogonal projection onto the column space of a (possibly rank-deficient)
/// matrix, computed from a thin SVD of the column-equilibrated matrix.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: DMatrix<f64>,
    coef_map: DMatrix<f64>,
    rank: usize,
    dim: usize,
}

impl Projector {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (n, p) = m.shape();
        if p == 0 || n == 0 {
            return Projector {
                basis: DMatrix::zeros(n, 0),
                coef_map: DMatrix::zeros(p, 0),
                rank: 0,
                dim: p,
            };
        }
        let scales: Vec<f64> = column_norms(m)
            .into_iter()
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        let mut scaled = m.clone();
        for (j, s) in scales.iter().enumerate() {
            scaled.column_mut(j).scale_mut(1.0 / s);
        }
        let svd = scaled.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| {
                let s = svd.singular_values[i];
                smax > 0.0 && s * s > PINV_REL_TOL * smax * smax
            })
            .collect();
        let rank = keep.len();
        let mut basis = DMatrix::zeros(n, rank);
        let mut coef_map = DMatrix::zeros(p, rank);
        for (c, &i) in keep.iter().enumerate() {
            basis.set_column(c, &u.column(i));
            let s = svd.singular_values[i];
            for j in 0..p {
                coef_map[(j, c)] = v_t[(i, j)] / (s * scales[j]);
            }
        }
        Projector { basis, coef_map, rank, dim: p }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim
    }

    /// `H v = v - P v`.
    pub fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        let c = self.basis.tr_mul(v);
        v - &self.basis * c
    }

    pub fn residual_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let c = self.basis.tr_mul(m);
        m - &self.basis * c
    }

    pub fn fitted(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.basis * self.basis.tr_mul(v)
    }

    /// Minimum-norm least-squares coefficients.
    pub fn coefficients(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.coef_map * self.basis.tr_mul(v)
    }

    /// Moore-Penrose pseudo-inverse (p x n).
    pub fn pseudo_inverse(&self) -> DMatrix<f64> {
        &self.coef_map * self.basis.transpose()
    }

    /// Diagonal of the hat matrix.
    pub fn leverages(&self) -> Vec<f64> {
        (0..self.basis.nrows()).map(|i| self.basis.row(i).norm_squared()).collect()
    }
}

/// Spectral pieces of a symmetric positive semidefinite matrix.
#[derive(Debug, Clone)]
pub struct SymPinv {
    pub pinv: DMatrix<f64>,
    /// Orthonormal basis of the numerical null space (k x m).
    pub null_basis: DMatrix<f64>,
    pub rank: usize,
    pub max_eigenvalue: f64,
    pub min_eigenvalue: f64,
}

impl SymPinv {
    pub fn new(m: &DMatrix<f64>, rel_tol: f64) -> Self {
        let k = m.nrows();
        if k == 0 {
            return SymPinv {
                pinv: DMatrix::zeros(0, 0),
                null_basis: DMatrix::zeros(0, 0),
                rank: 0,
                max_eigenvalue: 0.0,
                min_eigenvalue: 0.0,
            };
        }
        let sym = (m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let cutoff = rel_tol * max_ev;
        let mut pinv = DMatrix::zeros(k, k);
        let mut null_cols = Vec::new();
        let mut rank = 0;
        for i in 0..k {
            let ev = eig.eigenvalues[i];
            let col = eig.eigenvectors.column(i);
            if max_ev > 0.0 && ev > cutoff {
                pinv += (&col * col.transpose()) / ev;
                rank += 1;
            } else {
                null_cols.push(col.clone_owned());
            }
        }
        let null_basis = if null_cols.is_empty() {
            DMatrix::zeros(k, 0)
        } else {
            DMatrix::from_columns(&null_cols)
        };
        SymPinv {
            pinv,
            null_basis,
            rank,
            max_eigenvalue: max_ev,
            min_eigenvalue: min_ev,
        }
    }

    pub fn is_full_rank(&self) -> bool {
        self.null_basis.ncols() == 0
    }

    pub fn condition_number(&self) -> f64 {
        if self.min_eigenvalue > 0.0 {
            self.max_eigenvalue / self.min_eigenvalue
        } else {
            f64::INFINITY
        }
    }
}

/// Solves `m x = rhs` for symmetric positive definite `m` after symmetric
/// diagonal equilibration. Fails when the Cholesky factorization breaks down.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let k = m.nrows();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let d: Vec<f64> = (0..k)
        .map(|i| {
            let v = m[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = m.clone();
    for i in 0..k {
        for j in 0..k {
            scaled[(i, j)] *= d[i] * d[j];
        }
    }
    let chol = scaled.cholesky().ok_or(Error::RidgeSingular)?;
    let min_diag = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if !(min_diag > 1e-13) {
        return Err(Error::RidgeSingular);
    }
    let scaled_rhs = DVector::from_iterator(k, (0..k).map(|i| rhs[i] * d[i]));
    let y = chol.solve(&scaled_rhs);
    Ok(DVector::from_iterator(k, (0..k).map(|i| y[i] * d[i])))
}

/// 2-norm condition number of a symmetric matrix from its spectrum.
pub fn sym_condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Minimum-penalty least-squares operator.
///
/// For a design `w` (n x p) and PSD penalty `pen` (p x p) this is the limit
/// as `lambda -> 0` of `(w'w + lambda pen)^{-1} w'`: among all least-squares
/// solutions the one with the smallest penalty. Returns the `p x n` operator,
/// or `None` when some coefficient listed in `identified` is left undetermined
/// (a null direction of `w` with zero penalty loads on it).
pub fn ridgeless_operator(
    w: &DMatrix<f64>,
    pen: &DMatrix<f64>,
    identified: &[usize],
) -> Option<DMatrix<f64>> {
    let p = w.ncols();
    let scales: Vec<f64> = column_norms(w)
        .into_iter()
        .map(|s| if s > 0.0 { s } else { 1.0 })
        .collect();
    let mut ws = w.clone();
    for (j, s) in scales.iter().enumerate() {
        ws.column_mut(j).scale_mut(1.0 / s);
    }
    let gram = SymPinv::new(&ws.tr_mul(&ws), PINV_REL_TOL);
    // Penalty in scaled coordinates: theta = S^{-1} theta_s.
    let mut pen_s = pen.clone();
    for i in 0..p {
        for j in 0..p {
            pen_s[(i, j)] /= scales[i] * scales[j];
        }
    }
    let wplus = &gram.pinv * ws.transpose();
    let n_basis = &gram.null_basis;
    let op_s = if n_basis.ncols() == 0 {
        wplus
    } else {
        let npn = n_basis.tr_mul(&pen_s) * n_basis;
        let npn_f = SymPinv::new(&npn, PINV_REL_TOL);
        // Zero-penalty null directions must not touch identified coefficients.
        for c in 0..npn_f.null_basis.ncols() {
            let dir = n_basis * npn_f.null_basis.column(c);
            if identified.iter().any(|&j| dir[j].abs() > 1e-6) {
                return None;
            }
        }
        let correction = n_basis * &npn_f.pinv * n_basis.transpose() * &pen_s;
        (DMatrix::identity(p, p) - correction) * wplus
    };
    let mut op = op_s;
    for (j, s) in scales.iter().enumerate() {
        op.row_mut(j).scale_mut(1.0 / s);
    }
    Some(op)
}
