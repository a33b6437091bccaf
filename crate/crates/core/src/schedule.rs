//! Discrete variance-preserving diffusion schedule.
//!
//! Steps are indexed `1..=T`; index `0` is the clean-data end where
//! `alpha_bar_0 = 1`. Step `t` corresponds to continuous time `t / T`.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Image, Seed};

/// Standard 1000-step DDPM endpoints.
pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    /// Index 0 is a placeholder so that `beta[t]` matches step `t`.
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma_tilde: Vec<f64>,
}

impl DiffusionSchedule {
    /// Linearly spaced betas from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("steps", "must be at least 1"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(
                "beta",
                format!("need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"),
            ));
        }
        let betas = (1..=steps).map(|t| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64
            }
        });
        Ok(Self::from_betas(betas))
    }

    /// The standard DDPM endpoints rescaled to `steps` (`beta * 1000 / T`),
    /// capped below 1.
    pub fn linear_rescaled(steps: usize) -> Result<Self> {
        let (start, end) = rescaled_endpoints(steps);
        Self::linear(steps, start, end)
    }

    fn from_betas(betas: impl Iterator<Item = f64>) -> Self {
        let mut beta = vec![0.0];
        beta.extend(betas);
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = vec![1.0];
        for t in 1..beta.len() {
            alpha_bar.push(alpha_bar[t - 1] * alpha[t]);
        }
        let mut sigma_tilde = vec![0.0];
        for t in 1..beta.len() {
            let var = beta[t] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
            sigma_tilde.push(var.sqrt());
        }
        Self {
            beta,
            alpha,
            alpha_bar,
            sigma_tilde,
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// `alpha_bar_t`, defined for `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn sigma_tilde(&self, t: usize) -> f64 {
        self.sigma_tilde[t]
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    /// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) z`; `t = 0` returns `x0`.
    pub fn forward_sample(&self, x0: &Image, t: usize, seed: Seed) -> Result<Image> {
        if t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                steps: self.steps(),
            });
        }
        let ab = self.alpha_bar[t];
        let mut out = x0.scale(ab.sqrt());
        if t > 0 {
            let z = Image::standard_normal(x0.shape(), &mut seed.rng());
            out.axpy((1.0 - ab).sqrt(), &z);
        }
        Ok(out)
    }

    /// Tweedie posterior mean `(x_t + (1 - alpha_bar_t) score) / sqrt(alpha_bar_t)`.
    pub fn tweedie_mean(&self, x_t: &Image, t: usize, score: &Image) -> Image {
        let ab = self.alpha_bar[t];
        x_t.add_scaled(1.0 - ab, score).scale(1.0 / ab.sqrt())
    }

    /// Coefficients `(c_x, c_x0)` of the noiseless ancestral update.
    pub fn ancestral_coefficients(&self, t: usize) -> (f64, f64) {
        let denom = 1.0 - self.alpha_bar[t];
        let c_xt = self.alpha[t].sqrt() * (1.0 - self.alpha_bar[t - 1]) / denom;
        let c_x0 = self.alpha_bar[t - 1].sqrt() * self.beta[t] / denom;
        (c_xt, c_x0)
    }

    /// One DDPM ancestral step from `x_t` to `x'_{t-1}`.
    ///
    /// Draws `z` from `rng` only when `t > 1`; the final step is noiseless.
    pub fn ancestral_step<R: Rng + ?Sized>(
        &self,
        x_t: &Image,
        x0_hat: &Image,
        t: usize,
        rng: &mut R,
    ) -> Result<Image> {
        self.check_step(t)?;
        x0_hat.ensure_shape(x_t.shape())?;
        let (c_xt, c_x0) = self.ancestral_coefficients(t);
        let mut out = x_t.scale(c_xt);
        out.axpy(c_x0, x0_hat);
        if t > 1 {
            let z = Image::standard_normal(x_t.shape(), rng);
            out.axpy(self.sigma_tilde[t], &z);
        }
        Ok(out)
    }

    /// Whitespace-separated audit table: `t beta alpha_bar sigma_tilde`.
    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t\tbeta\talpha_bar\tsigma_tilde")?;
        for t in 0..=self.steps() {
            writeln!(
                w,
                "{t}\t{:.17e}\t{:.17e}\t{:.17e}",
                self.beta[t], self.alpha_bar[t], self.sigma_tilde[t]
            )?;
        }
        Ok(())
    }
}

pub fn rescaled_endpoints(steps: usize) -> (f64, f64) {
    let scale = DEFAULT_STEPS as f64 / steps.max(1) as f64;
    (
        (DEFAULT_BETA_START * scale).min(0.999),
        (DEFAULT_BETA_END * scale).min(0.999),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn standard_schedule_endpoint() {
        let s = DiffusionSchedule::linear(1000, 1e-4, 0.02).unwrap();
        // Independent product in log space.
        let log_ab: f64 = (0..1000)
            .map(|i| (1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0)).ln())
            .sum();
        assert!((s.alpha_bar(1000) - log_ab.exp()).abs() < 1e-15);
        assert!((s.alpha_bar(1000) - 4.035e-5).abs() < 1e-7);
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn single_step_and_errors() {
        let s = DiffusionSchedule::linear(1, 0.3, 0.3).unwrap();
        assert_eq!(s.alpha_bar(1), 0.7);
        assert!(DiffusionSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(DiffusionSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(DiffusionSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(DiffusionSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn sigma_tilde_formula() {
        let s = DiffusionSchedule::linear(50, 1e-3, 0.05).unwrap();
        for t in 1..=50 {
            let v = s.beta(t) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
            assert_eq!(s.sigma_tilde(t), v.sqrt());
        }
        assert_eq!(s.sigma_tilde(1), 0.0);
    }

    #[test]
    fn rescaled_matches_standard_at_1000() {
        let a = DiffusionSchedule::linear_rescaled(1000).unwrap();
        let b = DiffusionSchedule::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(a, b);
        let c = DiffusionSchedule::linear_rescaled(200).unwrap();
        assert!(c.alpha_bar(200) < 1e-4);
    }

    #[test]
    fn tweedie_trivial_cases() {
        let s = DiffusionSchedule::linear(10, 0.01, 0.2).unwrap();
        let x = Image::uniform(Shape::new(3, 3, 1), &mut Seed(1).rng());
        let zero = Image::zeros(x.shape());
        assert_eq!(s.tweedie_mean(&x, 0, &zero), x);
    }

    #[test]
    fn ancestral_constant_combination() {
        let s = DiffusionSchedule::linear(100, 1e-4, 0.05).unwrap();
        let shape = Shape::new(2, 2, 1);
        let c = 0.8;
        let x = Image::filled(shape, c);
        let mut rng = Seed(0).rng();
        for t in [1usize, 2, 50, 100] {
            let (a, b) = s.ancestral_coefficients(t);
            let closed = c * (s.alpha(t).sqrt() * (1.0 - s.alpha_bar(t - 1))
                + s.alpha_bar(t - 1).sqrt() * s.beta(t))
                / (1.0 - s.alpha_bar(t));
            assert!((c * a + c * b - closed).abs() < 1e-15);
            if t == 1 {
                let out = s.ancestral_step(&x, &x, t, &mut rng).unwrap();
                assert!(out.data().iter().all(|v| (v - closed).abs() < 1e-15));
            }
        }
        // t = 1: alpha_bar_0 = 1 so the step returns x0_hat exactly.
        let (a1, b1) = s.ancestral_coefficients(1);
        assert_eq!(a1, 0.0);
        assert!((b1 - 1.0).abs() < 1e-12);
        assert!(s.ancestral_step(&x, &x, 0, &mut rng).is_err());
        assert!(s.ancestral_step(&x, &x, 101, &mut rng).is_err());
    }

    #[test]
    fn final_step_is_deterministic_and_seeded_steps_repeat() {
        let s = DiffusionSchedule::linear(20, 1e-3, 0.1).unwrap();
        let shape = Shape::new(4, 4, 2);
        let x = Image::standard_normal(shape, &mut Seed(3).rng());
        let x0 = Image::uniform(shape, &mut Seed(4).rng());
        let a = s.ancestral_step(&x, &x0, 1, &mut Seed(1).rng()).unwrap();
        let b = s.ancestral_step(&x, &x0, 1, &mut Seed(2).rng()).unwrap();
        assert_eq!(a, b);
        let a = s.ancestral_step(&x, &x0, 7, &mut Seed(5).rng()).unwrap();
        let b = s.ancestral_step(&x, &x0, 7, &mut Seed(5).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_sample_statistics() {
        let s = DiffusionSchedule::linear(100, 1e-4, 0.02).unwrap();
        let t = 60;
        let ab = s.alpha_bar(t);
        let x0 = Image::from_vec(Shape::new(1, 1, 2), vec![0.3, 0.9]).unwrap();
        assert_eq!(s.forward_sample(&x0, 0, Seed(1)).unwrap(), x0);
        assert!(s.forward_sample(&x0, 101, Seed(1)).is_err());
        let n = 10_000;
        let mut sums = [0.0; 2];
        let mut sq = [0.0; 2];
        for i in 0..n {
            let xt = s.forward_sample(&x0, t, Seed(7).derive(i)).unwrap();
            for k in 0..2 {
                sums[k] += xt.data()[k];
                sq[k] += xt.data()[k] * xt.data()[k];
            }
        }
        for k in 0..2 {
            let mean = sums[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            let se = ((1.0 - ab) / n as f64).sqrt();
            assert!((mean - ab.sqrt() * x0.data()[k]).abs() < 3.0 * se);
            assert!((var / (1.0 - ab) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn table_dump_has_every_step() {
        let s = DiffusionSchedule::linear(5, 0.01, 0.05).unwrap();
        let mut buf = Vec::new();
        s.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        let last: Vec<f64> = text.lines().last().unwrap().split('\t').map(|v| v.parse().unwrap()).collect();
        assert_eq!(last[0], 5.0);
        assert_eq!(last[2], s.alpha_bar(5));
    }
}
