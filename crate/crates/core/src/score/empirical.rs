use super::{log_sum_exp, softmax, ScoreModel};
use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;
use crate::tensor::{Image, Shape};

/// Uniform mixture of point masses at gallery images.
///
/// Under the forward kernel `p_t` is then an exact Gaussian mixture
/// `(1/K) sum_k N(sqrt(alpha_bar_t) x_k, (1 - alpha_bar_t) I)`, so the score,
/// the posterior mean and its Jacobian are closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPrior {
    gallery: Vec<Image>,
}

impl EmpiricalPrior {
    pub fn new(gallery: Vec<Image>) -> Result<Self> {
        let first = gallery
            .first()
            .ok_or_else(|| Error::invalid("gallery", "needs at least one image"))?;
        let shape = first.shape();
        for img in &gallery {
            img.ensure_shape(shape)?;
            if !img.is_finite() {
                return Err(Error::invalid("gallery", "non-finite pixel"));
            }
        }
        Ok(Self { gallery })
    }

    pub fn shape(&self) -> Shape {
        self.gallery[0].shape()
    }

    pub fn len(&self) -> usize {
        self.gallery.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gallery.is_empty()
    }

    pub fn gallery(&self) -> &[Image] {
        &self.gallery
    }

    fn log_likelihoods(&self, x_t: &Image, t: usize, schedule: &DiffusionSchedule) -> Vec<f64> {
        let ab = schedule.alpha_bar(t);
        let root = ab.sqrt();
        let var = 1.0 - ab;
        self.gallery
            .iter()
            .map(|x0| {
                let d: f64 = x_t
                    .data()
                    .iter()
                    .zip(x0.data())
                    .map(|(a, b)| {
                        let r = a - root * b;
                        r * r
                    })
                    .sum();
                -d / (2.0 * var)
            })
            .collect()
    }

    /// Posterior responsibilities `p(k | x_t)`.
    pub fn posterior_weights(
        &self,
        x_t: &Image,
        t: usize,
        schedule: &DiffusionSchedule,
    ) -> Result<Vec<f64>> {
        x_t.ensure_shape(self.shape())?;
        Ok(softmax(&self.log_likelihoods(x_t, t, schedule)))
    }

    /// `log p_t(x_t)` including the Gaussian normalizer.
    pub fn log_density(&self, x_t: &Image, t: usize, schedule: &DiffusionSchedule) -> Result<f64> {
        x_t.ensure_shape(self.shape())?;
        let var = 1.0 - schedule.alpha_bar(t);
        let dim = x_t.data().len() as f64;
        let lse = log_sum_exp(&self.log_likelihoods(x_t, t, schedule));
        Ok(lse - (self.len() as f64).ln() - 0.5 * dim * (2.0 * std::f64::consts::PI * var).ln())
    }

    /// `sum_k w_k x_k`.
    pub fn weighted_mean(&self, weights: &[f64]) -> Image {
        let mut mean = Image::zeros(self.shape());
        for (w, x) in weights.iter().zip(&self.gallery) {
            mean.axpy(*w, x);
        }
        mean
    }

    /// First absolute posterior moment `sum_k w_k ||x_k - mean||`.
    pub fn first_abs_moment(&self, weights: &[f64], mean: &Image) -> f64 {
        weights
            .iter()
            .zip(&self.gallery)
            .map(|(w, x)| w * x.sub(mean).norm())
            .sum()
    }
}

impl ScoreModel for EmpiricalPrior {
    fn score(&self, x_t: &Image, t: usize, schedule: &DiffusionSchedule) -> Result<Image> {
        let w = self.posterior_weights(x_t, t, schedule)?;
        let ab = schedule.alpha_bar(t);
        let mean = self.weighted_mean(&w);
        Ok(mean.scale(ab.sqrt()).sub(x_t).scale(1.0 / (1.0 - ab)))
    }

    /// Exactly `sum_k w_k x_k`, which is what Tweedie's formula reduces to.
    fn denoise(&self, x_t: &Image, t: usize, schedule: &DiffusionSchedule) -> Result<Image> {
        let w = self.posterior_weights(x_t, t, schedule)?;
        Ok(self.weighted_mean(&w))
    }

    /// `J v` with `J = sqrt(ab)/(1-ab) * sum_k w_k (x_k - m)(x_k - m)^T`,
    /// a weighted covariance (symmetric, PSD) applied as `K` rank-1 actions.
    fn denoise_vjp(
        &self,
        x_t: &Image,
        t: usize,
        v: &Image,
        schedule: &DiffusionSchedule,
    ) -> Result<Image> {
        v.ensure_shape(self.shape())?;
        let w = self.posterior_weights(x_t, t, schedule)?;
        let mean = self.weighted_mean(&w);
        let ab = schedule.alpha_bar(t);
        let scale = ab.sqrt() / (1.0 - ab);
        let mut out = Image::zeros(self.shape());
        for (wk, xk) in w.iter().zip(&self.gallery) {
            if *wk == 0.0 {
                continue;
            }
            let centered = xk.sub(&mean);
            out.axpy(scale * wk * centered.dot(v), &centered);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Seed;

    fn schedule() -> DiffusionSchedule {
        DiffusionSchedule::linear(100, 1e-4, 0.05).unwrap()
    }

    fn gallery(k: usize, shape: Shape, seed: u64) -> EmpiricalPrior {
        let mut rng = Seed(seed).rng();
        EmpiricalPrior::new((0..k).map(|_| Image::uniform(shape, &mut rng)).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_galleries() {
        assert!(EmpiricalPrior::new(vec![]).is_err());
        let a = Image::zeros(Shape::new(2, 2, 1));
        let b = Image::zeros(Shape::new(2, 3, 1));
        assert!(EmpiricalPrior::new(vec![a.clone(), b]).is_err());
        assert!(EmpiricalPrior::new(vec![a.map(|_| f64::NAN)]).is_err());
    }

    #[test]
    fn single_point_prior() {
        let s = schedule();
        let p = gallery(1, Shape::new(3, 3, 1), 1);
        let x = Image::standard_normal(p.shape(), &mut Seed(2).rng());
        for t in [1, 30, 100] {
            assert_eq!(p.posterior_weights(&x, t, &s).unwrap(), vec![1.0]);
            let ab = s.alpha_bar(t);
            let expect = p.gallery()[0].scale(ab.sqrt()).sub(&x).scale(1.0 / (1.0 - ab));
            assert!(p.score(&x, t, &s).unwrap().max_abs_diff(&expect) < 1e-12);
            assert_eq!(p.denoise(&x, t, &s).unwrap(), p.gallery()[0]);
            let v = Image::standard_normal(p.shape(), &mut Seed(3).rng());
            assert!(p.denoise_vjp(&x, t, &v, &s).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_midpoint() {
        let s = schedule();
        let shape = Shape::new(1, 1, 2);
        let a = Image::from_vec(shape, vec![0.0, 1.0]).unwrap();
        let b = Image::from_vec(shape, vec![1.0, 0.0]).unwrap();
        let p = EmpiricalPrior::new(vec![a, b]).unwrap();
        let t = 40;
        let mid = Image::filled(shape, 0.5 * s.alpha_bar(t).sqrt());
        let w = p.posterior_weights(&mid, t, &s).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn concentrated_weight_near_component() {
        let s = schedule();
        let shape = Shape::new(4, 4, 1);
        let gal = vec![Image::filled(shape, 0.0), Image::filled(shape, 1.0), Image::filled(shape, 0.5)];
        let p = EmpiricalPrior::new(gal).unwrap();
        let t = 5;
        let x = p.gallery()[1].scale(s.alpha_bar(t).sqrt());
        let w = p.posterior_weights(&x, t, &s).unwrap();
        assert!(w[1] >= 0.999, "{w:?}");
    }

    #[test]
    fn denoise_matches_tweedie_of_score() {
        let s = schedule();
        let p = gallery(5, Shape::new(4, 4, 2), 3);
        let x = Image::standard_normal(p.shape(), &mut Seed(4).rng());
        for t in [2, 20, 60, 100] {
            let direct = p.denoise(&x, t, &s).unwrap();
            let via = s.tweedie_mean(&x, t, &p.score(&x, t, &s).unwrap());
            assert!(direct.max_abs_diff(&via) < 1e-10);
        }
    }

    #[test]
    fn jacobian_is_psd() {
        let s = schedule();
        let p = gallery(4, Shape::new(3, 3, 1), 5);
        let mut rng = Seed(6).rng();
        let x = Image::standard_normal(p.shape(), &mut rng).scale(0.3);
        for _ in 0..100 {
            let v = Image::standard_normal(p.shape(), &mut rng);
            let jv = p.denoise_vjp(&x, 70, &v, &s).unwrap();
            assert!(v.dot(&jv) >= -1e-10);
        }
    }
}
