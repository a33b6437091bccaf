//! Numerical check of the likelihood-approximation error bound.
//!
//! With an empirical prior every posterior integral is a finite sum, so
//! `p_psi,t(y | x_t) = sum_k w_k(x_t) h(psi(A x_k))` is exact. All
//! likelihoods here are unnormalized: the normalizer `1 / Z_psi` multiplies
//! both sides of the bound and cancels.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fidelity::FidelityTransform;
use crate::linop::LinearOperator;
use crate::schedule::DiffusionSchedule;
use crate::score::EmpiricalPrior;
use crate::tensor::{Image, Seed};

/// Power-iteration budget for `L_psi` and `||A||`.
pub const NORM_ITERATIONS: usize = 200;

/// Absolute slack allowed when comparing `lhs <= rhs`.
pub const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub exact: f64,
    pub approx: f64,
    /// `|exact - approx|`.
    pub lhs: f64,
    /// `e^{-1/2} / gamma * L_psi * ||A|| * m1`.
    pub rhs: f64,
    pub gamma: f64,
    pub l_psi: f64,
    pub a_norm: f64,
    pub m1: f64,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + BOUND_SLACK
    }
}

impl std::fmt::Display for BoundReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "lhs={:e} rhs={:e} (exact={:e} approx={:e} gamma={} L_psi={} ||A||={} m1={})",
            self.lhs, self.rhs, self.exact, self.approx, self.gamma, self.l_psi, self.a_norm, self.m1
        )
    }
}

/// `e^{-1/2} / gamma`: the Lipschitz constant of `z -> exp(-||z - c||^2 / (2 gamma^2))`.
pub fn kernel_lipschitz(gamma: f64) -> f64 {
    (-0.5f64).exp() / gamma
}

/// Unnormalized Gaussian likelihood kernel `exp(-||z - center||^2 / (2 gamma^2))`.
pub fn likelihood_kernel(z: &Image, center: &Image, gamma: f64) -> f64 {
    (-z.sub(center).norm_sq() / (2.0 * gamma * gamma)).exp()
}

/// `exp(-||psi(y) - psi(A x)||^2 / (2 gamma^2))`.
pub fn approx_conditional_likelihood<A: LinearOperator + ?Sized>(
    y: &Image,
    x_hat: &Image,
    op: &A,
    psi: &FidelityTransform,
    gamma: f64,
) -> Result<f64> {
    let target = psi.apply(y)?;
    Ok(likelihood_kernel(&psi.apply(&op.apply(x_hat)?)?, &target, gamma))
}

/// `sum_k w_k(x_t) exp(-||psi(y) - psi(A x_k)||^2 / (2 gamma^2))`.
#[allow(clippy::too_many_arguments)]
pub fn exact_conditional_likelihood<A: LinearOperator + ?Sized>(
    y: &Image,
    x_t: &Image,
    t: usize,
    op: &A,
    psi: &FidelityTransform,
    gamma: f64,
    prior: &EmpiricalPrior,
    schedule: &DiffusionSchedule,
) -> Result<f64> {
    let weights = prior.posterior_weights(x_t, t, schedule)?;
    let target = psi.apply(y)?;
    let mut total = 0.0;
    for (w, x0) in weights.iter().zip(prior.gallery()) {
        total += w * likelihood_kernel(&psi.apply(&op.apply(x0)?)?, &target, gamma);
    }
    Ok(total)
}

/// Spectral norm of a linear `psi`, which is its Lipschitz constant.
pub fn lipschitz_constant(psi: &FidelityTransform) -> Result<f64> {
    psi.spectral_norm(NORM_ITERATIONS, Seed(0x5eed))
}

/// Evaluates both sides of the bound; a violation is a hard error.
#[allow(clippy::too_many_arguments)]
pub fn verify_bound<A: LinearOperator + ?Sized>(
    y: &Image,
    x_t: &Image,
    t: usize,
    op: &A,
    psi: &FidelityTransform,
    gamma: f64,
    prior: &EmpiricalPrior,
    schedule: &DiffusionSchedule,
) -> Result<BoundReport> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma", format!("{gamma} must be positive")));
    }
    let weights = prior.posterior_weights(x_t, t, schedule)?;
    let x_hat = prior.weighted_mean(&weights);
    let exact = exact_conditional_likelihood(y, x_t, t, op, psi, gamma, prior, schedule)?;
    let approx = approx_conditional_likelihood(y, &x_hat, op, psi, gamma)?;
    let l_psi = lipschitz_constant(psi)?;
    let a_norm = op.spectral_norm(NORM_ITERATIONS, Seed(0xa0a0))?;
    let m1 = prior.first_abs_moment(&weights, &x_hat);
    let report = BoundReport {
        exact,
        approx,
        lhs: (exact - approx).abs(),
        rhs: kernel_lipschitz(gamma) * l_psi * a_norm * m1,
        gamma,
        l_psi,
        a_norm,
        m1,
    };
    if !report.holds() {
        return Err(Error::BoundViolation(Box::new(report)));
    }
    Ok(report)
}

pub const REPORT_COLUMNS: [&str; 8] = ["exact", "approx", "lhs", "rhs", "gamma", "l_psi", "a_norm", "m1"];

pub fn write_reports_csv<W: Write>(reports: &[BoundReport], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(REPORT_COLUMNS)?;
    for r in reports {
        wtr.write_record(
            [r.exact, r.approx, r.lhs, r.rhs, r.gamma, r.l_psi, r.a_norm, r.m1].map(|v| v.to_string()),
        )?;
    }
    wtr.flush()?;
    Ok(())
}
