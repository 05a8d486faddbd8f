//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_traits::{One, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};

pub type CMatrix<T> = DMatrix<Cx<T>>;
pub type CVector<T> = DVector<Cx<T>>;

/// Largest entrywise modulus.
pub fn max_abs<T: Real>(m: &CMatrix<T>) -> T {
    m.iter()
        .map(|z| z.modulus())
        .fold(T::zero(), |a, b| if b > a { b } else { a })
}

/// max(|U*U - 1|, |UU* - 1|); non-square input is reported as residual 1.
pub fn unitarity_residual<T: Real>(u: &CMatrix<T>) -> T {
    if u.nrows() != u.ncols() {
        return T::one();
    }
    let n = u.nrows();
    let id = CMatrix::<T>::identity(n, n);
    let a = max_abs(&(u.adjoint() * u - &id));
    let b = max_abs(&(u * u.adjoint() - &id));
    if a > b {
        a
    } else {
        b
    }
}

/// Singular-value cutoff policy for null-space computations.
#[derive(Clone, Copy, Debug)]
pub struct RankPolicy {
    pub cutoff: f64,
    /// Singular values in `(cutoff / guard, cutoff * guard)` make the rank
    /// ambiguous and are reported instead of silently classified.
    pub guard: f64,
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy {
            cutoff: 1e-8,
            guard: 1e3,
        }
    }
}

/// Orthonormal basis of `{x : A x = 0}` returned as columns.
pub fn null_space<T: Real>(a: &CMatrix<T>, policy: RankPolicy) -> Result<CMatrix<T>> {
    let n = a.ncols();
    if n == 0 {
        return Ok(CMatrix::zeros(0, 0));
    }
    if a.nrows() == 0 {
        return Ok(CMatrix::identity(n, n));
    }
    // Reduce the row count with a QR factorisation before the SVD.
    let reduced = if a.nrows() > n {
        a.clone().qr().r()
    } else {
        a.clone()
    };
    let mut square = CMatrix::<T>::zeros(n, n);
    square
        .view_mut((0, 0), (reduced.nrows(), n))
        .copy_from(&reduced);
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let scale = T::one().max(max_abs(a));
    let cutoff = T::floor_tol(policy.cutoff) * scale;
    let lo = cutoff / T::lit(policy.guard);
    let hi = cutoff * T::lit(policy.guard);
    let mut cols = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        let s = *s;
        if s > lo && s < hi {
            return Err(Error::Indeterminate(format!(
                "singular value {:.3e} within the ambiguity band around cutoff {:.1e}",
                s.as_f64(),
                cutoff.as_f64()
            )));
        }
        if s <= cutoff {
            cols.push(v_t.row(i).adjoint());
        }
    }
    Ok(if cols.is_empty() {
        CMatrix::zeros(n, 0)
    } else {
        CMatrix::from_columns(&cols)
    })
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending.
pub fn hermitian_eigen<T: Real>(h: &CMatrix<T>) -> (Vec<T>, CMatrix<T>) {
    let n = h.nrows();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    let sym = (h + h.adjoint()) * Cx::new(T::lit(0.5), T::zero());
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (vals, vecs)
}

/// Standard complex Gaussian sample.
pub fn random_cx<T: Real>(rng: &mut ChaCha8Rng) -> Cx<T> {
    // Box-Muller keeps us off rand_distr.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * std::f64::consts::PI * u2;
    Cx::new(T::lit(r * t.cos()), T::lit(r * t.sin()))
}

pub fn random_matrix<T: Real>(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMatrix<T> {
    CMatrix::from_fn(r, c, |_, _| random_cx(rng))
}

/// Haar-distributed unitary via QR of a Ginibre matrix with phase fix.
pub fn haar_unitary<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> CMatrix<T> {
    if n == 0 {
        return CMatrix::zeros(0, 0);
    }
    let g = random_matrix::<T>(rng, n, n);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let m = d.modulus();
        if m > T::zero() {
            let phase = d / Cx::new(m, T::zero());
            for i in 0..n {
                q[(i, j)] *= phase;
            }
        }
    }
    q
}

/// Power iteration for the Perron-Frobenius data of a nonnegative matrix.
///
/// Iterates on `M + shift*I` so bipartite spectra (eigenvalues `±β`) converge.
/// Returns the eigenvalue, eigenvector (unit max-norm) and iterations used.
pub fn perron_frobenius<T: Real>(
    m: &DMatrix<T>,
    tol: f64,
    max_iter: usize,
) -> Result<(T, DVector<T>, usize)> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::Parameter(
            "PF needs a non-empty square matrix".into(),
        ));
    }
    let shift = T::one();
    let shifted = m + DMatrix::<T>::identity(n, n) * shift;
    let mut v = DVector::<T>::from_element(n, T::one());
    let tol = T::floor_tol(tol);
    let mut iters = 0;
    loop {
        iters += 1;
        let mut w = &shifted * &v;
        let norm = w.amax();
        if norm <= T::zero() {
            return Err(Error::Structural("PF iteration collapsed to zero".into()));
        }
        w /= norm;
        let diff = (&w - &v).amax();
        v = w;
        if diff < tol || iters >= max_iter {
            break;
        }
    }
    let mv = m * &v;
    let mut beta = mv.dot(&v) / v.dot(&v);
    // A stalled step size does not bound the eigenvector error when the gap
    // is small, so polish with a few shifted inverse iterations.
    for _ in 0..3 {
        let shift = beta * (T::one() + T::lit(1e-9));
        let lu = (m - DMatrix::<T>::identity(n, n) * shift).lu();
        match lu.solve(&v) {
            Some(mut w) => {
                let norm = w.amax();
                if norm <= T::zero() || !norm.is_finite() {
                    break;
                }
                w /= norm;
                if w.iter().any(|x| *x < T::zero()) {
                    w = -w;
                }
                v = w;
                beta = (m * &v).dot(&v) / v.dot(&v);
            }
            None => break,
        }
    }
    Ok((beta, v, iters))
}

pub fn identity_like<T: Real>(n: usize) -> CMatrix<T> {
    CMatrix::from_fn(n, n, |i, j| if i == j { Cx::one() } else { Cx::zero() })
}
