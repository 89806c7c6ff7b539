//! Dense complex kernels shared by every other module.
//!
//! Matrices are `nalgebra` column-major matrices, so `vec(X)` stacks columns
//! and the index of `X[i, j]` in `vec(X)` is `j * rows + i`. This is the
//! ordering that makes `vec(A X Bᵀ) = (B ⊗ A) vec(X)` hold literally.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex;

use crate::error::{shape_err, Error, Result};

#[allow(non_camel_case_types)]
pub type c64 = Complex<f64>;
pub type CMatrix = DMatrix<c64>;
pub type CVector = DVector<c64>;

pub const ZERO: c64 = c64::new(0.0, 0.0);
pub const ONE: c64 = c64::new(1.0, 0.0);

/// Relative asymmetry accepted by the Hermitian-only routines.
const HERMITIAN_TOL: f64 = 1e-8;

#[inline]
pub fn cis(phase: f64) -> c64 {
    c64::from_polar(1.0, phase)
}

/// Kronecker product: block `(i, j)` of the result is `a[(i, j)] * b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == ZERO {
                continue;
            }
            for q in 0..bc {
                for p in 0..br {
                    out[(i * br + p, j * bc + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two column vectors, `a ⊗ b` (entries of `b` fastest).
pub fn kron_vec<'a>(
    a: impl IntoIterator<Item = &'a c64>,
    b: &[c64],
    out: &mut Vec<c64>,
) {
    out.clear();
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
}

/// Column-wise Kronecker (Khatri-Rao) product.
pub fn khatri_rao(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.ncols() != b.ncols() {
        return Err(shape_err("khatri_rao", format!("{} columns", a.ncols()), b.ncols()));
    }
    let (ar, br) = (a.nrows(), b.nrows());
    let mut out = CMatrix::zeros(ar * br, a.ncols());
    for j in 0..a.ncols() {
        for i in 0..ar {
            let s = a[(i, j)];
            for p in 0..br {
                out[(i * br + p, j)] = s * b[(p, j)];
            }
        }
    }
    Ok(out)
}

/// Stack the columns of `x` into a vector.
pub fn vectorize(x: &CMatrix) -> CVector {
    CVector::from_column_slice(x.as_slice())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &CVector, rows: usize, cols: usize) -> Result<CMatrix> {
    if v.len() != rows * cols {
        return Err(shape_err("unvectorize", rows * cols, v.len()));
    }
    Ok(CMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Largest `|a - aᴴ|` entry divided by the largest `|a|` entry.
pub fn hermitian_asymmetry(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut scale = 0.0f64;
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            scale = scale.max(a[(i, j)].norm());
            if i > j {
                worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
            }
        }
        worst = worst.max(a[(j, j)].im.abs());
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

fn check_hermitian(a: &CMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(shape_err("hermitian input", "square", format!("{:?}", a.shape())));
    }
    let asym = hermitian_asymmetry(a);
    if asym > HERMITIAN_TOL {
        return Err(Error::NotHermitian { asymmetry: asym });
    }
    Ok(())
}

/// Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky(a: &CMatrix) -> Result<Cholesky<c64, Dyn>> {
    check_hermitian(a)?;
    factor(a.clone())
}

// The complex square root never fails, so an indefinite pivot shows up as a
// non-real diagonal entry of L instead of a `None`.
fn factor(a: CMatrix) -> Result<Cholesky<c64, Dyn>> {
    let ch = Cholesky::new(a).ok_or(Error::NotPositiveDefinite)?;
    let l = ch.l_dirty();
    let ok = (0..l.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re.is_finite() && d.re > 0.0 && d.im.abs() <= 1e-12 * d.re
    });
    if ok {
        Ok(ch)
    } else {
        Err(Error::NotPositiveDefinite)
    }
}

/// Cholesky factor, retrying once with `rel_jitter * tr(a)/n` added to the
/// diagonal if the plain factorization fails.
pub fn cholesky_jittered(a: &CMatrix, rel_jitter: f64) -> Result<Cholesky<c64, Dyn>> {
    match cholesky(a) {
        Err(Error::NotPositiveDefinite) => {
            let n = a.nrows();
            let tr: f64 = (0..n).map(|i| a[(i, i)].re).sum::<f64>();
            let jitter = rel_jitter * tr.abs().max(f64::MIN_POSITIVE) / n as f64;
            let mut b = a.clone();
            for i in 0..n {
                b[(i, i)] += jitter;
            }
            factor(b)
        }
        other => other,
    }
}

/// Solve `a x = b` for Hermitian positive definite `a`.
pub fn hermitian_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.nrows() != b.nrows() {
        return Err(shape_err("hermitian_solve rhs", a.nrows(), b.nrows()));
    }
    Ok(cholesky(a)?.solve(b))
}

/// `ln det` of the matrix whose Cholesky factor is given.
pub fn chol_logdet(ch: &Cholesky<c64, Dyn>) -> f64 {
    let l = ch.l_dirty();
    (0..l.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum()
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues sorted non-increasing.
pub fn eigh(a: &CMatrix) -> Result<(CMatrix, Vec<f64>)> {
    check_hermitian(a)?;
    let n = a.nrows();
    // Symmetrize exactly so the solver sees a Hermitian input.
    let sym = (a + a.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let mut u = CMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &eig.eigenvectors.column(src));
        sigma.push(eig.eigenvalues[src]);
    }
    Ok((u, sigma))
}

pub fn frob_norm_sq(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn vec_norm_sq(a: &[c64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// `aᴴ b` for two slices of equal length.
#[inline]
pub fn dotc(a: &[c64], b: &[c64]) -> c64 {
    a.iter().zip(b).fold(ZERO, |acc, (x, y)| acc + x.conj() * y)
}

pub fn real_diag(d: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(d.len(), d.iter().map(|&x| c64::new(x, 0.0))))
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn real_vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
