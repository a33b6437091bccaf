//! Guided ancestral sampling with spatial and frequency fidelity terms.
//!
//! Each reverse step denoises `x_t`, takes the unconditional ancestral step,
//! then subtracts weighted gradients of three fidelity losses measured on
//! `A x0_hat`:
//!
//! * `L_s = ||psi_s(y) - psi_s(A x0_hat)||^2` where `psi_s` is the identity
//!   while `t > tau * T` and bicubic upsampling afterwards,
//! * `L_H`, `L_L`: the same residual split by the ideal high/low-pass pair.
//!
//! Weights are `rho = c / sqrt(L + EPS)` with `c` taken from the early
//! (`t > tau * T`) or late coefficient set.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fidelity::{frequency_split, FidelityLosses, FidelityTransform};
use crate::linop::LinearOperator;
use crate::schedule::DiffusionSchedule;
use crate::score::ScoreModel;
use crate::tensor::{Image, Seed, Shape};

/// Guard added to every loss before the square root in `c / sqrt(L)`.
pub const WEIGHT_EPS: f64 = 1e-12;

/// Slack for comparing integer steps against the fractional `tau * T`.
const PHASE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GuidanceMode {
    Safari,
    SpatialOnly,
    FreqOnly,
    Dps,
    Unconditional,
}

impl GuidanceMode {
    pub const ALL: [GuidanceMode; 5] = [
        GuidanceMode::Safari,
        GuidanceMode::SpatialOnly,
        GuidanceMode::FreqOnly,
        GuidanceMode::Dps,
        GuidanceMode::Unconditional,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GuidanceMode::Safari => "safari",
            GuidanceMode::SpatialOnly => "spatial-only",
            GuidanceMode::FreqOnly => "freq-only",
            GuidanceMode::Dps => "dps",
            GuidanceMode::Unconditional => "unconditional",
        }
    }
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GuidanceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

/// How `d x0_hat / d x_t` enters the guidance gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradientMode {
    /// Full Jacobian-transpose product from the score model.
    ExactVjp,
    /// Treat the score as constant: `J = I / sqrt(alpha_bar_t)`.
    FrozenDenoiser,
}

impl GradientMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GradientMode::ExactVjp => "exact-vjp",
            GradientMode::FrozenDenoiser => "frozen-denoiser",
        }
    }
}

impl fmt::Display for GradientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GradientMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "exact-vjp" => Ok(GradientMode::ExactVjp),
            "frozen-denoiser" => Ok(GradientMode::FrozenDenoiser),
            _ => Err(format!("unknown gradient mode `{s}`")),
        }
    }
}

/// Numerators `c` of the three weights for one phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseWeights {
    pub spatial: f64,
    pub high: f64,
    pub low: f64,
}

impl PhaseWeights {
    pub const fn new(spatial: f64, high: f64, low: f64) -> Self {
        Self { spatial, high, low }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub r0: usize,
    pub upsample_factor: usize,
    pub tau_fraction: f64,
    /// Used while `t > tau * T`.
    pub early: PhaseWeights,
    /// Used while `t <= tau * T`.
    pub late: PhaseWeights,
    /// Numerator of the single DPS weight `c / ||y - A x0_hat||`.
    pub dps_weight: f64,
    pub gradient_mode: GradientMode,
    /// Upsample in the early phase as well instead of using the identity.
    pub upsample_early: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mode: GuidanceMode::Safari,
            r0: 5,
            upsample_factor: 4,
            tau_fraction: 0.7,
            early: PhaseWeights::new(0.25, 0.0, 0.0),
            late: PhaseWeights::new(0.35, 0.125, 0.025),
            dps_weight: 0.5,
            gradient_mode: GradientMode::ExactVjp,
            upsample_early: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_fraction) {
            return Err(Error::invalid("tau_fraction", format!("{} not in [0, 1]", self.tau_fraction)));
        }
        let coeffs = [
            self.early.spatial,
            self.early.high,
            self.early.low,
            self.late.spatial,
            self.late.high,
            self.late.low,
            self.dps_weight,
        ];
        if coeffs.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::invalid("weights", "coefficients must be finite and >= 0"));
        }
        if self.upsample_factor < 1 {
            return Err(Error::invalid("upsample_factor", "must be at least 1"));
        }
        Ok(())
    }

    /// `true` while `t > tau * T`.
    pub fn is_early(&self, t: usize, steps: usize) -> bool {
        t as f64 > self.tau_fraction * steps as f64 + PHASE_TOLERANCE
    }

    pub fn phase_weights(&self, t: usize, steps: usize) -> PhaseWeights {
        if self.is_early(t, steps) {
            self.early
        } else {
            self.late
        }
    }

    fn uses_upsampling(&self, t: usize, steps: usize) -> bool {
        match self.mode {
            GuidanceMode::Dps | GuidanceMode::Unconditional => false,
            _ => self.upsample_early || !self.is_early(t, steps),
        }
    }
}

/// The `rho` values applied at one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EffectiveWeights {
    pub spatial: f64,
    pub high: f64,
    pub low: f64,
}

/// `rho_X = c_X / sqrt(L_X + eps)` with mode-specific zeroing.
///
/// In DPS mode the spatial slot carries the single DPS weight; the spatial
/// transform is then the identity so `L_s` is the plain residual.
pub fn effective_weights(
    cfg: &GuidanceConfig,
    t: usize,
    steps: usize,
    losses: &FidelityLosses,
) -> EffectiveWeights {
    let c = cfg.phase_weights(t, steps);
    let rho = |coeff: f64, loss: f64| coeff / (loss + WEIGHT_EPS).sqrt();
    match cfg.mode {
        GuidanceMode::Safari => EffectiveWeights {
            spatial: rho(c.spatial, losses.spatial),
            high: rho(c.high, losses.high),
            low: rho(c.low, losses.low),
        },
        GuidanceMode::SpatialOnly => EffectiveWeights {
            spatial: rho(c.spatial, losses.spatial),
            ..Default::default()
        },
        GuidanceMode::FreqOnly => EffectiveWeights {
            high: rho(c.high, losses.high),
            low: rho(c.low, losses.low),
            ..Default::default()
        },
        GuidanceMode::Dps => EffectiveWeights {
            spatial: rho(cfg.dps_weight, losses.spatial),
            ..Default::default()
        },
        GuidanceMode::Unconditional => EffectiveWeights::default(),
    }
}

/// `psi_s` for step `t`: identity while `t > tau * T`, upsampling after.
pub fn spatial_transform_for_step(
    cfg: &GuidanceConfig,
    t: usize,
    steps: usize,
    shape: Shape,
) -> Result<FidelityTransform> {
    if cfg.uses_upsampling(t, steps) {
        FidelityTransform::bicubic_upsample(shape, cfg.upsample_factor)
    } else {
        Ok(FidelityTransform::identity(shape))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub losses: FidelityLosses,
    /// `||y - A x0_hat||^2`.
    pub residual_sq: f64,
    pub rho: EffectiveWeights,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub records: Vec<StepRecord>,
    pub final_image: Option<Image>,
}

pub const TRACE_COLUMNS: [&str; 8] = ["t", "L_s", "L_H", "L_L", "residual_sq", "rho_s", "rho_H", "rho_L"];

impl RunTrace {
    /// CSV with columns `t,L_s,L_H,L_L,residual_sq,rho_s,rho_H,rho_L`.
    /// Floats are written in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wtr.write_record(TRACE_COLUMNS)?;
        for r in &self.records {
            wtr.write_record([
                r.t.to_string(),
                r.losses.spatial.to_string(),
                r.losses.high.to_string(),
                r.losses.low.to_string(),
                r.residual_sq.to_string(),
                r.rho.spatial.to_string(),
                r.rho.high.to_string(),
                r.rho.low.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let f = |i: usize| -> Result<f64> {
                row.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::invalid("trace", format!("bad field {i} in {row:?}")))
            };
            records.push(StepRecord {
                t: f(0)? as usize,
                losses: FidelityLosses {
                    spatial: f(1)?,
                    high: f(2)?,
                    low: f(3)?,
                },
                residual_sq: f(4)?,
                rho: EffectiveWeights {
                    spatial: f(5)?,
                    high: f(6)?,
                    low: f(7)?,
                },
            });
        }
        Ok(Self {
            records,
            final_image: None,
        })
    }
}

/// Per-step fidelity quantities at a given `x0_hat`.
struct Fidelity {
    losses: FidelityLosses,
    residual_sq: f64,
    /// Gradients of `L_s`, `L_H`, `L_L` with respect to `x0_hat`.
    grads: [Image; 3],
}

fn fidelity_at<A: LinearOperator + ?Sized>(
    x0_hat: &Image,
    y: &Image,
    op: &A,
    psi_s: &FidelityTransform,
    r0: usize,
) -> Result<Fidelity> {
    let residual = op.apply(x0_hat)?.sub(y);
    let spatial_res = psi_s.apply(&residual)?;
    let (high_res, low_res) = frequency_split(&residual, r0)?;
    let losses = FidelityLosses {
        spatial: spatial_res.norm_sq(),
        high: high_res.norm_sq(),
        low: low_res.norm_sq(),
    };
    // psi_H and psi_L are orthogonal projections, so psi^T psi r = psi r.
    let grads = [
        op.adjoint(&psi_s.adjoint(&spatial_res)?)?.scale(2.0),
        op.adjoint(&high_res)?.scale(2.0),
        op.adjoint(&low_res)?.scale(2.0),
    ];
    Ok(Fidelity {
        losses,
        residual_sq: residual.norm_sq(),
        grads,
    })
}

fn pull_back<S: ScoreModel + ?Sized>(
    score: &S,
    x_t: &Image,
    t: usize,
    v: &Image,
    mode: GradientMode,
    schedule: &DiffusionSchedule,
) -> Result<Image> {
    match mode {
        GradientMode::ExactVjp => score.denoise_vjp(x_t, t, v, schedule),
        GradientMode::FrozenDenoiser => Ok(v.scale(1.0 / schedule.alpha_bar(t).sqrt())),
    }
}

/// `grad_{x_t}` of `L_s`, `L_H` and `L_L` with `psi_s` fixed by the caller.
#[allow(clippy::too_many_arguments)]
pub fn loss_gradients<A, S>(
    x_t: &Image,
    t: usize,
    y: &Image,
    op: &A,
    score: &S,
    psi_s: &FidelityTransform,
    r0: usize,
    mode: GradientMode,
    schedule: &DiffusionSchedule,
) -> Result<(FidelityLosses, [Image; 3])>
where
    A: LinearOperator + ?Sized,
    S: ScoreModel + ?Sized,
{
    let x0_hat = score.denoise(x_t, t, schedule)?;
    let fid = fidelity_at(&x0_hat, y, op, psi_s, r0)?;
    let [gs, gh, gl] = fid.grads;
    Ok((
        fid.losses,
        [
            pull_back(score, x_t, t, &gs, mode, schedule)?,
            pull_back(score, x_t, t, &gh, mode, schedule)?,
            pull_back(score, x_t, t, &gl, mode, schedule)?,
        ],
    ))
}

/// Reusable per-run state: operators, cached transforms and the schedule.
pub struct GuidedSampler<'a, A: ?Sized, S: ?Sized> {
    y: &'a Image,
    op: &'a A,
    score: &'a S,
    cfg: &'a GuidanceConfig,
    schedule: &'a DiffusionSchedule,
    identity: FidelityTransform,
    upsample: FidelityTransform,
}

impl<'a, A, S> GuidedSampler<'a, A, S>
where
    A: LinearOperator + ?Sized,
    S: ScoreModel + ?Sized,
{
    pub fn new(
        y: &'a Image,
        op: &'a A,
        score: &'a S,
        cfg: &'a GuidanceConfig,
        schedule: &'a DiffusionSchedule,
    ) -> Result<Self> {
        cfg.validate()?;
        y.ensure_shape(op.output_shape())?;
        let shape = y.shape();
        Ok(Self {
            y,
            op,
            score,
            cfg,
            schedule,
            identity: FidelityTransform::identity(shape),
            upsample: FidelityTransform::bicubic_upsample(shape, cfg.upsample_factor)?,
        })
    }

    fn spatial_transform(&self, t: usize) -> &FidelityTransform {
        if self.cfg.uses_upsampling(t, self.schedule.steps()) {
            &self.upsample
        } else {
            &self.identity
        }
    }

    /// One reverse step `x_t -> x_{t-1}`.
    pub fn step<R: Rng + ?Sized>(&self, x_t: &Image, t: usize, rng: &mut R) -> Result<(Image, StepRecord)> {
        let schedule = self.schedule;
        schedule.check_step(t)?;
        x_t.ensure_shape(self.op.input_shape())?;
        let psi_s = self.spatial_transform(t);
        let x0_hat = self.score.denoise(x_t, t, schedule)?;
        let mut x_next = schedule.ancestral_step(x_t, &x0_hat, t, rng)?;

        let fid = fidelity_at(&x0_hat, self.y, self.op, psi_s, self.cfg.r0)?;
        let rho = effective_weights(self.cfg, t, schedule.steps(), &fid.losses);
        let record = StepRecord {
            t,
            losses: fid.losses,
            residual_sq: fid.residual_sq,
            rho,
        };
        if !fid.losses.is_finite() || !fid.residual_sq.is_finite() {
            return Err(non_finite(t, "fidelity loss"));
        }

        let mut direction: Option<Image> = None;
        for (weight, grad) in [rho.spatial, rho.high, rho.low].into_iter().zip(&fid.grads) {
            if weight == 0.0 {
                continue;
            }
            match direction.as_mut() {
                Some(d) => d.axpy(weight, grad),
                None => direction = Some(grad.scale(weight)),
            }
        }
        if let Some(d) = direction {
            let g = pull_back(self.score, x_t, t, &d, self.cfg.gradient_mode, schedule)?;
            x_next.axpy(-1.0, &g);
        }
        if !x_next.is_finite() {
            return Err(non_finite(t, "sampler state"));
        }
        Ok((x_next, record))
    }

    /// Full reverse loop from `x_T ~ N(0, I)` down to `x_0`.
    pub fn run(&self, seed: Seed) -> Result<(Image, RunTrace)> {
        let mut rng = seed.rng();
        let mut x = Image::standard_normal(self.op.input_shape(), &mut rng);
        let mut trace = RunTrace {
            records: Vec::with_capacity(self.schedule.steps()),
            final_image: None,
        };
        for t in (1..=self.schedule.steps()).rev() {
            match self.step(&x, t, &mut rng) {
                Ok((next, record)) => {
                    x = next;
                    trace.records.push(record);
                }
                Err(Error::NonFinite { t, what, .. }) => {
                    return Err(Error::NonFinite {
                        t,
                        what,
                        trace: Box::new(trace),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        trace.final_image = Some(x.clone());
        Ok((x, trace))
    }
}

fn non_finite(t: usize, what: &str) -> Error {
    Error::NonFinite {
        t,
        what: what.to_string(),
        trace: Box::default(),
    }
}

/// One guided reverse step.
#[allow(clippy::too_many_arguments)]
pub fn guided_step<A, S, R>(
    x_t: &Image,
    t: usize,
    y: &Image,
    op: &A,
    score: &S,
    cfg: &GuidanceConfig,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<(Image, StepRecord)>
where
    A: LinearOperator + ?Sized,
    S: ScoreModel + ?Sized,
    R: Rng + ?Sized,
{
    GuidedSampler::new(y, op, score, cfg, schedule)?.step(x_t, t, rng)
}

/// Guided sampling from pure noise; deterministic for a fixed seed.
pub fn run<A, S>(
    y: &Image,
    op: &A,
    score: &S,
    cfg: &GuidanceConfig,
    schedule: &DiffusionSchedule,
    seed: Seed,
) -> Result<(Image, RunTrace)>
where
    A: LinearOperator + ?Sized,
    S: ScoreModel + ?Sized,
{
    GuidedSampler::new(y, op, score, cfg, schedule)?.run(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fidelity::TransformKind;

    fn losses(s: f64, h: f64, l: f64) -> FidelityLosses {
        FidelityLosses {
            spatial: s,
            high: h,
            low: l,
        }
    }

    fn imagenet_random() -> GuidanceConfig {
        GuidanceConfig {
            r0: 5,
            tau_fraction: 0.7,
            early: PhaseWeights::new(0.25, 0.0, 0.0),
            late: PhaseWeights::new(0.35, 0.125, 0.025),
            ..Default::default()
        }
    }

    #[test]
    fn weights_follow_phase_coefficients() {
        let cfg = imagenet_random();
        let late = effective_weights(&cfg, 100, 1000, &losses(4.0, 1.0, 1.0));
        assert!((late.spatial - 0.175).abs() < 1e-12);
        let early = effective_weights(&cfg, 900, 1000, &losses(1.0, 1.0, 1.0));
        assert!((early.spatial - 0.25).abs() < 1e-12);
        assert_eq!(early.high, 0.0);
        let huge = effective_weights(&cfg, 100, 1000, &losses(1e300, 1e300, 1e300));
        assert!(huge.spatial < 1e-150 && huge.high < 1e-150);
    }

    #[test]
    fn mode_specific_zeroing() {
        let mut cfg = imagenet_random();
        let l = losses(1.0, 4.0, 9.0);
        cfg.mode = GuidanceMode::SpatialOnly;
        let w = effective_weights(&cfg, 10, 1000, &l);
        assert!(w.spatial > 0.0 && w.high == 0.0 && w.low == 0.0);
        cfg.mode = GuidanceMode::FreqOnly;
        let w = effective_weights(&cfg, 10, 1000, &l);
        assert!(w.spatial == 0.0 && w.high > 0.0 && w.low > 0.0);
        cfg.mode = GuidanceMode::Dps;
        cfg.dps_weight = 0.3;
        let w = effective_weights(&cfg, 10, 1000, &l);
        assert!((w.spatial - 0.3).abs() < 1e-12 && w.high == 0.0 && w.low == 0.0);
        cfg.mode = GuidanceMode::Unconditional;
        assert_eq!(effective_weights(&cfg, 10, 1000, &l), EffectiveWeights::default());
    }

    #[test]
    fn spatial_transform_boundaries() {
        let shape = Shape::new(4, 4, 1);
        let mut cfg = imagenet_random();
        let kind = |cfg: &GuidanceConfig, t| spatial_transform_for_step(cfg, t, 1000, shape).unwrap().kind();
        assert_eq!(kind(&cfg, 701), TransformKind::Identity);
        assert_eq!(kind(&cfg, 700), TransformKind::BicubicUpsample { factor: 4 });
        cfg.tau_fraction = 0.0;
        assert!((1..=1000).all(|t| kind(&cfg, t) == TransformKind::Identity));
        cfg.tau_fraction = 1.0;
        assert!((1..=1000).all(|t| kind(&cfg, t) == TransformKind::BicubicUpsample { factor: 4 }));
        cfg.tau_fraction = 0.5;
        cfg.upsample_early = true;
        assert_eq!(kind(&cfg, 900), TransformKind::BicubicUpsample { factor: 4 });
        cfg.mode = GuidanceMode::Dps;
        assert_eq!(kind(&cfg, 10), TransformKind::Identity);
    }

    #[test]
    fn config_validation() {
        let mut cfg = GuidanceConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.tau_fraction = 1.5;
        assert!(cfg.validate().is_err());
        cfg.tau_fraction = 0.5;
        cfg.late.low = -0.1;
        assert!(cfg.validate().is_err());
        cfg.late.low = 0.0;
        cfg.upsample_factor = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in GuidanceMode::ALL {
            assert_eq!(m.as_str().parse::<GuidanceMode>().unwrap(), m);
        }
        assert!("bogus".parse::<GuidanceMode>().is_err());
        assert_eq!("frozen-denoiser".parse::<GradientMode>().unwrap(), GradientMode::FrozenDenoiser);
    }
}
