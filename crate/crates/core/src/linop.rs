//! Shared contract for the linear maps acting on images.

use crate::error::Result;
use crate::tensor::{Image, Seed, Shape};

pub trait LinearOperator {
    fn input_shape(&self) -> Shape;
    fn output_shape(&self) -> Shape;
    fn apply(&self, x: &Image) -> Result<Image>;
    fn adjoint(&self, y: &Image) -> Result<Image>;

    /// Iterative estimate of the spectral norm `||A||_2`.
    ///
    /// Runs `iters` Lanczos steps on `A^T A` from a seeded Gaussian start
    /// (one `apply` plus one `adjoint` per step, like power iteration) and
    /// reports the square root of the largest Ritz value. Ritz values
    /// interlace, so the estimate is nondecreasing in `iters`, and it
    /// converges far faster than plain power iteration when the leading
    /// singular values are clustered.
    fn spectral_norm(&self, iters: usize, seed: Seed) -> Result<f64> {
        lanczos_norm(self, iters.max(1), seed)
    }

    /// Materializes the operator as a row-major dense matrix
    /// (`output_len x input_len`) by applying it to basis vectors.
    fn to_dense(&self) -> Result<Vec<f64>> {
        let n_in = self.input_shape().len();
        let n_out = self.output_shape().len();
        let mut dense = vec![0.0; n_out * n_in];
        let mut basis = Image::zeros(self.input_shape());
        for j in 0..n_in {
            basis.data_mut()[j] = 1.0;
            let column = self.apply(&basis)?;
            for (i, v) in column.data().iter().enumerate() {
                dense[i * n_in + j] = *v;
            }
            basis.data_mut()[j] = 0.0;
        }
        Ok(dense)
    }
}

/// Above this many stored `f64`s the Krylov basis is not kept and the
/// three-term recurrence runs without reorthogonalization. The extreme Ritz
/// value still converges; only spurious duplicates appear.
const REORTHOGONALIZE_BUDGET: usize = 1 << 22;

pub fn lanczos_norm<A: LinearOperator + ?Sized>(op: &A, iters: usize, seed: Seed) -> Result<f64> {
    let mut rng = seed.rng();
    let mut v = Image::standard_normal(op.input_shape(), &mut rng);
    let n = v.norm();
    if n == 0.0 {
        return Ok(0.0);
    }
    v = v.scale(1.0 / n);
    let dim = v.shape().len();
    let keep_basis = dim.saturating_mul(iters.min(dim)) <= REORTHOGONALIZE_BUDGET;
    let mut basis: Vec<Image> = Vec::new();
    let mut alphas = Vec::with_capacity(iters);
    let mut betas: Vec<f64> = Vec::with_capacity(iters);
    let mut prev: Option<Image> = None;
    let mut estimate = 0.0f64;
    for _ in 0..iters.min(dim) {
        let mut w = op.adjoint(&op.apply(&v)?)?;
        let alpha = w.dot(&v);
        w.axpy(-alpha, &v);
        if let (Some(p), Some(b)) = (&prev, betas.last()) {
            w.axpy(-b, p);
        }
        if keep_basis {
            basis.push(v.clone());
            // Two passes of classical Gram-Schmidt keep the basis orthonormal
            // to working precision.
            for _ in 0..2 {
                for q in &basis {
                    let c = w.dot(q);
                    w.axpy(-c, q);
                }
            }
        }
        alphas.push(alpha);
        estimate = estimate.max(largest_tridiagonal_eigenvalue(&alphas, &betas).max(0.0).sqrt());
        let beta = w.norm();
        if beta <= 1e-13 * alphas.iter().fold(0.0f64, |m, a| m.max(a.abs())).max(f64::MIN_POSITIVE) {
            break; // invariant subspace found: the Ritz values are exact
        }
        betas.push(beta);
        prev = Some(std::mem::replace(&mut v, w.scale(1.0 / beta)));
    }
    Ok(estimate)
}

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal
/// `diag` and off-diagonal `off` (`off.len() >= diag.len() - 1`), by Sturm
/// sequence bisection.
fn largest_tridiagonal_eigenvalue(diag: &[f64], off: &[f64]) -> f64 {
    let k = diag.len();
    let off = &off[..k - 1];
    // Gershgorin interval.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..k {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < k { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    // Number of eigenvalues strictly less than x.
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut q = 1.0f64;
        for i in 0..k {
            let b2 = if i > 0 { off[i - 1] * off[i - 1] } else { 0.0 };
            q = diag[i] - x - if i > 0 { b2 / q } else { 0.0 };
            if q == 0.0 {
                q = -f64::EPSILON * (x.abs() + 1.0);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(mid) == k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Plain power iteration on `A^T A`, reporting `||A v||`.
pub fn power_iteration<A: LinearOperator + ?Sized>(op: &A, iters: usize, seed: Seed) -> Result<f64> {
    let mut rng = seed.rng();
    let mut v = Image::standard_normal(op.input_shape(), &mut rng);
    let n = v.norm();
    if n == 0.0 {
        return Ok(0.0);
    }
    v = v.scale(1.0 / n);
    let mut estimate = op.apply(&v)?.norm();
    for _ in 0..iters {
        let w = op.adjoint(&op.apply(&v)?)?;
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(0.0);
        }
        v = w.scale(1.0 / wn);
        // Rayleigh quotients of A^T A are monotone under power iteration;
        // guard against last-ulp wobble once converged.
        estimate = estimate.max(op.apply(&v)?.norm());
    }
    Ok(estimate)
}
