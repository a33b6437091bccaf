//! Randomized checks of the likelihood-approximation bound and of the
//! Gaussian kernel's Lipschitz constant, plus the quick `selftest` battery.

use anyhow::Context;
use rand::Rng;
use safari_core::fidelity::{frequency_split, ideal_highpass, ideal_lowpass};
use safari_core::theory::{kernel_lipschitz, likelihood_kernel, verify_bound, BoundReport};
use safari_core::{
    DiffusionSchedule, EmpiricalPrior, FidelityTransform, GaussianMixturePrior, GuidanceConfig, Image,
    LinearDegradation, LinearOperator, NoiseModel, ScoreModel, Seed, Shape,
};

pub const GAMMAS: [f64; 3] = [0.1, 1.0, 10.0];
pub const GALLERY_SIZES: [usize; 3] = [2, 4, 8];
const SIDE: usize = 8;

fn operator(kind: usize, shape: Shape, seed: Seed) -> safari_core::Result<LinearDegradation> {
    match kind % 5 {
        0 => Ok(LinearDegradation::identity(shape)),
        1 => LinearDegradation::random_mask(shape, 0.5, seed),
        2 => LinearDegradation::box_mask(shape, shape.height / 2, seed),
        3 => LinearDegradation::gaussian_blur(shape, 5, 1.0),
        _ => LinearDegradation::bicubic_downsample(shape, 2),
    }
}

fn transform(kind: usize, shape: Shape) -> safari_core::Result<FidelityTransform> {
    Ok(match kind % 4 {
        0 => FidelityTransform::identity(shape),
        1 => FidelityTransform::bicubic_upsample(shape, 2)?,
        2 => FidelityTransform::highpass(shape, 2),
        _ => FidelityTransform::lowpass(shape, 2),
    })
}

/// `count` random 8x8 instances cycling through every operator kind,
/// transform kind, gallery size and `gamma`. Fails on the first violation.
pub fn bound_instances(count: usize, seed: Seed) -> anyhow::Result<Vec<BoundReport>> {
    let schedule = DiffusionSchedule::linear_rescaled(100)?;
    let shape = Shape::new(SIDE, SIDE, 1);
    let mut rng = seed.rng();
    let mut reports = Vec::with_capacity(count);
    for i in 0..count {
        let inst = seed.derive(i as u64);
        let op = operator(i, shape, inst)?;
        let psi = transform(i / 5, op.output_shape())?;
        let k = GALLERY_SIZES[(i / 20) % 3];
        let gamma = GAMMAS[(i / 60 + i) % 3];
        let gallery: Vec<Image> = (0..k).map(|_| Image::uniform(shape, &mut rng)).collect();
        let prior = EmpiricalPrior::new(gallery)?;
        let t = rng.random_range(1..=schedule.steps());
        let x0 = &prior.gallery()[rng.random_range(0..k)];
        let x_t = schedule.forward_sample(x0, t, inst.derive(1))?;
        let truth = Image::uniform(shape, &mut rng);
        let y = op.measure(&truth, NoiseModel::new(0.05)?, inst.derive(2))?;
        let report = verify_bound(&y, &x_t, t, &op, &psi, gamma, &prior, &schedule)
            .with_context(|| format!("instance {i}: {} / {:?}, gamma {gamma}", op.kind().name(), psi.kind()))?;
        reports.push(report);
    }
    Ok(reports)
}

/// Number of random pairs violating `|h(z1) - h(z2)| <= e^{-1/2}/gamma ||z1 - z2||`.
pub fn lipschitz_violations(pairs: usize, seed: Seed) -> usize {
    let shape = Shape::new(4, 4, 1);
    let mut rng = seed.rng();
    let mut violations = 0;
    for i in 0..pairs {
        let gamma = GAMMAS[i % 3];
        let center = Image::standard_normal(shape, &mut rng);
        let spread = gamma * rng.random_range(0.0..2.0);
        let z1 = center.add(&Image::standard_normal(shape, &mut rng).scale(spread));
        let step = gamma * rng.random_range(0.0..1.0);
        let z2 = z1.add(&Image::standard_normal(shape, &mut rng).scale(step));
        let lhs = (likelihood_kernel(&z1, &center, gamma) - likelihood_kernel(&z2, &center, gamma)).abs();
        let rhs = kernel_lipschitz(gamma) * z1.sub(&z2).norm();
        if lhs > rhs + 1e-15 {
            violations += 1;
        }
    }
    violations
}

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> anyhow::Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e:#}"),
        },
    }
}

/// Fast end-to-end sanity battery (a few seconds).
pub fn selftest() -> Vec<Check> {
    let mut out = Vec::new();
    out.push(check("frequency split preserves energy", || {
        let mut worst: f64 = 0.0;
        let mut rng = Seed(1).rng();
        for n in [8, 16, 17] {
            for r0 in 0..=8 {
                let d = Image::standard_normal(Shape::new(n, n, 3), &mut rng);
                let (h, l) = frequency_split(&d, r0)?;
                worst = worst.max((h.norm_sq() + l.norm_sq() - d.norm_sq()).abs() / d.norm_sq());
                let sum = ideal_highpass(&d, r0)?.add(&ideal_lowpass(&d, r0)?);
                worst = worst.max(sum.max_abs_diff(&d));
            }
        }
        Ok((worst < 1e-10, format!("worst error {worst:e}")))
    }));
    out.push(check("operators have exact adjoints", || {
        let shape = Shape::new(16, 16, 3);
        let mut rng = Seed(2).rng();
        let mut worst: f64 = 0.0;
        for kind in 0..5 {
            let op = operator(kind, shape, Seed(kind as u64))?;
            for psi_kind in 0..4 {
                let psi = transform(psi_kind, op.output_shape())?;
                let x = Image::standard_normal(shape, &mut rng);
                let z = Image::standard_normal(psi.output_shape(), &mut rng);
                let l = psi.apply(&op.apply(&x)?)?.dot(&z);
                let r = x.dot(&op.adjoint(&psi.adjoint(&z)?)?);
                worst = worst.max((l - r).abs() / l.abs().max(1.0));
            }
        }
        Ok((worst < 1e-10, format!("worst relative gap {worst:e}")))
    }));
    out.push(check("posterior mean matches quadrature", || {
        let s = DiffusionSchedule::linear_rescaled(20)?;
        let shape = Shape::new(1, 1, 1);
        let prior = GaussianMixturePrior::new(
            vec![Image::filled(shape, -1.0), Image::filled(shape, 1.0)],
            vec![0.3, 0.5],
            vec![0.4, 0.6],
        )?;
        let mut worst: f64 = 0.0;
        for t in [1, 10, 20] {
            let ab = s.alpha_bar(t);
            for x in [-1.5, 0.2, 1.1] {
                let est = prior.denoise(&Image::filled(shape, x), t, &s)?.data()[0];
                let (n, h) = (200_000, 24.0 / 200_000.0);
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..=n {
                    let x0 = -12.0 + i as f64 * h;
                    let p = 0.4 * (-(x0 + 1.0).powi(2) / 0.18).exp() / 0.3 + 0.6 * (-(x0 - 1.0).powi(2) / 0.5).exp() / 0.5;
                    let lik = (-(x - ab.sqrt() * x0).powi(2) / (2.0 * (1.0 - ab))).exp();
                    num += x0 * p * lik;
                    den += p * lik;
                }
                worst = worst.max((est - num / den).abs());
            }
        }
        Ok((worst < 1e-6, format!("worst error {worst:e}")))
    }));
    out.push(check("kernel Lipschitz constant", || {
        let v = lipschitz_violations(2_000, Seed(3));
        Ok((v == 0, format!("{v} violations in 2000 pairs")))
    }));
    out.push(check("approximation bound", || {
        let reports = bound_instances(20, Seed(4))?;
        let tightest = reports.iter().map(|r| r.lhs / r.rhs.max(1e-300)).fold(0.0, f64::max);
        Ok((reports.iter().all(BoundReport::holds), format!("max lhs/rhs {tightest:.3}")))
    }));
    out.push(check("guided run is deterministic", || {
        let s = DiffusionSchedule::linear_rescaled(10)?;
        let shape = Shape::new(12, 12, 1);
        let mut rng = Seed(5).rng();
        let prior = EmpiricalPrior::new((0..4).map(|_| Image::uniform(shape, &mut rng)).collect())?;
        let op = LinearDegradation::random_mask(shape, 0.5, Seed(6))?;
        let y = op.measure(&prior.gallery()[1], NoiseModel::new(0.01)?, Seed(7))?;
        let cfg = GuidanceConfig::default();
        let (a, _) = safari_core::guidance::run(&y, &op, &prior, &cfg, &s, Seed(8))?;
        let (b, _) = safari_core::guidance::run(&y, &op, &prior, &cfg, &s, Seed(8))?;
        Ok((a == b && a.is_finite(), "two identical runs".into()))
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        for c in selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn instances_cover_every_kind() {
        let reports = bound_instances(60, Seed(1)).unwrap();
        assert_eq!(reports.len(), 60);
        for g in GAMMAS {
            assert!(reports.iter().any(|r| r.gamma == g));
        }
    }
}
