//! Score models: the prior side of guided sampling.
//!
//! A [`ScoreModel`] provides `grad log p_t(x_t)`, the Tweedie denoiser built
//! from it, and optionally the vector-Jacobian product of that denoiser.

mod empirical;
mod mixture;
mod process;

pub use empirical::EmpiricalPrior;
pub use mixture::GaussianMixturePrior;
pub use process::{decode_f64, encode_f64, serve, ProcessScoreModel};

use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;
use crate::tensor::Image;

pub trait ScoreModel: Send + Sync {
    /// `grad_x log p_t(x)` at step `t`.
    fn score(&self, x_t: &Image, t: usize, schedule: &DiffusionSchedule) -> Result<Image>;

    /// Posterior mean `E[x0 | x_t]`.
    fn denoise(&self, x_t: &Image, t: usize, schedule: &DiffusionSchedule) -> Result<Image> {
        let s = self.score(x_t, t, schedule)?;
        Ok(schedule.tweedie_mean(x_t, t, &s))
    }

    /// `J^T v` with `J = d denoise / d x_t`.
    fn denoise_vjp(
        &self,
        _x_t: &Image,
        _t: usize,
        _v: &Image,
        _schedule: &DiffusionSchedule,
    ) -> Result<Image> {
        Err(Error::VjpUnavailable)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log sum exp` with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_shift_invariance() {
        let l = [-3.0, 0.5, 2.0, -100.0];
        let shifted: Vec<f64> = l.iter().map(|v| v + 1234.5).collect();
        let a = softmax(&l);
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_handles_huge_gaps() {
        let w = softmax(&[-1e6, 0.0]);
        assert_eq!(w, vec![0.0, 1.0]);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
