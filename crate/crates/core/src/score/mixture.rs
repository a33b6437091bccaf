use super::{log_sum_exp, softmax, ScoreModel};
use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;
use crate::tensor::{Image, Shape};

/// Mixture of isotropic Gaussians `sum_k pi_k N(mu_k, s_k^2 I)`.
///
/// Diffused marginals stay Gaussian mixtures with component variance
/// `alpha_bar s_k^2 + 1 - alpha_bar`. With every `s_k = 0` this reduces to
/// the [`EmpiricalPrior`](super::EmpiricalPrior) with weights `pi_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixturePrior {
    means: Vec<Image>,
    stds: Vec<f64>,
    log_weights: Vec<f64>,
}

impl GaussianMixturePrior {
    pub fn new(means: Vec<Image>, stds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let k = means.len();
        if k == 0 || stds.len() != k || weights.len() != k {
            return Err(Error::invalid(
                "components",
                format!("{} means, {} stds, {} weights", k, stds.len(), weights.len()),
            ));
        }
        let shape = means[0].shape();
        for m in &means {
            m.ensure_shape(shape)?;
        }
        if stds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("stds", "must be finite and >= 0"));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("weights", "must be positive"));
        }
        let total: f64 = weights.iter().sum();
        Ok(Self {
            means,
            stds,
            log_weights: weights.iter().map(|w| (w / total).ln()).collect(),
        })
    }

    pub fn shape(&self) -> Shape {
        self.means[0].shape()
    }

    fn variances(&self, ab: f64) -> Vec<f64> {
        self.stds.iter().map(|s| ab * s * s + 1.0 - ab).collect()
    }

    fn logits(&self, x_t: &Image, ab: f64, vars: &[f64]) -> Vec<f64> {
        let dim = x_t.data().len() as f64;
        let root = ab.sqrt();
        self.means
            .iter()
            .zip(vars)
            .zip(&self.log_weights)
            .map(|((mu, v), lw)| {
                let d: f64 = x_t
                    .data()
                    .iter()
                    .zip(mu.data())
                    .map(|(a, b)| (a - root * b).powi(2))
                    .sum();
                lw - 0.5 * dim * v.ln() - d / (2.0 * v)
            })
            .collect()
    }

    pub fn log_density(&self, x_t: &Image, t: usize, schedule: &DiffusionSchedule) -> Result<f64> {
        x_t.ensure_shape(self.shape())?;
        let ab = schedule.alpha_bar(t);
        let vars = self.variances(ab);
        let dim = x_t.data().len() as f64;
        Ok(log_sum_exp(&self.logits(x_t, ab, &vars)) - 0.5 * dim * (2.0 * std::f64::consts::PI).ln())
    }

    /// Responsibilities and per-component scores `(sqrt(ab) mu_k - x) / v_k`.
    fn components(&self, x_t: &Image, t: usize, schedule: &DiffusionSchedule) -> Result<(Vec<f64>, Vec<f64>, Vec<Image>)> {
        x_t.ensure_shape(self.shape())?;
        let ab = schedule.alpha_bar(t);
        let vars = self.variances(ab);
        let w = softmax(&self.logits(x_t, ab, &vars));
        let scores = self
            .means
            .iter()
            .zip(&vars)
            .map(|(mu, v)| mu.scale(ab.sqrt()).sub(x_t).scale(1.0 / v))
            .collect();
        Ok((w, vars, scores))
    }
}

impl ScoreModel for GaussianMixturePrior {
    fn score(&self, x_t: &Image, t: usize, schedule: &DiffusionSchedule) -> Result<Image> {
        let (w, _, scores) = self.components(x_t, t, schedule)?;
        let mut out = Image::zeros(self.shape());
        for (wk, sk) in w.iter().zip(&scores) {
            out.axpy(*wk, sk);
        }
        Ok(out)
    }

    /// `J v = (v + (1 - ab) H v) / sqrt(ab)` with `H` the Hessian of
    /// `log p_t`, applied component by component.
    fn denoise_vjp(
        &self,
        x_t: &Image,
        t: usize,
        v: &Image,
        schedule: &DiffusionSchedule,
    ) -> Result<Image> {
        v.ensure_shape(self.shape())?;
        let (w, vars, scores) = self.components(x_t, t, schedule)?;
        let mut mean_score = Image::zeros(self.shape());
        for (wk, sk) in w.iter().zip(&scores) {
            mean_score.axpy(*wk, sk);
        }
        let diag: f64 = w.iter().zip(&vars).map(|(wk, vk)| wk / vk).sum();
        let mut hv = v.scale(-diag);
        for (wk, sk) in w.iter().zip(&scores) {
            if *wk == 0.0 {
                continue;
            }
            let centered = sk.sub(&mean_score);
            hv.axpy(wk * centered.dot(v), &centered);
        }
        let ab = schedule.alpha_bar(t);
        Ok(v.add_scaled(1.0 - ab, &hv).scale(1.0 / ab.sqrt()))
    }
}
