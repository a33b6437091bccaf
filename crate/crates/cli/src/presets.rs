//! Per-dataset, per-task guidance hyperparameters.
//!
//! `early` applies while `t > tau * T`, `late` afterwards. The upsampling
//! factor is 4 everywhere; only FFHQ super-resolution upsamples during the
//! early phase as well.

use safari_core::{GuidanceConfig, PhaseWeights};

use crate::config::{Preset, Task};

const UPSAMPLE_FACTOR: usize = 4;
const DEFAULT_DPS_WEIGHT: f64 = 0.5;

struct Row {
    r0: usize,
    tau: f64,
    early: PhaseWeights,
    late: PhaseWeights,
    dps_weight: f64,
    upsample_early: bool,
}

const fn row(r0: usize, tau: f64, early: (f64, f64, f64), late: (f64, f64, f64)) -> Row {
    Row {
        r0,
        tau,
        early: PhaseWeights::new(early.0, early.1, early.2),
        late: PhaseWeights::new(late.0, late.1, late.2),
        dps_weight: DEFAULT_DPS_WEIGHT,
        upsample_early: false,
    }
}

// (spatial, high, low) triples.
fn table(preset: Preset, task: Task) -> Row {
    match (preset, task) {
        (Preset::ImageNet, Task::InpaintRandom) => row(5, 0.7, (0.25, 0.0, 0.0), (0.35, 0.125, 0.025)),
        (Preset::ImageNet, Task::InpaintBox) => Row {
            dps_weight: 0.25,
            ..row(5, 0.5, (0.125, 0.125, 0.125), (0.125, 0.625, 0.125))
        },
        (Preset::ImageNet, Task::DeblurGauss) => Row {
            dps_weight: 0.15,
            ..row(4, 0.5, (0.075, 0.0125, 0.025), (0.225, 0.3, 0.15))
        },
        (Preset::ImageNet, Task::SuperResolution) => row(5, 0.7, (0.025, 0.25, 0.25), (0.0, 1.25, 0.25)),
        (Preset::Ffhq, Task::InpaintRandom) => row(5, 0.7, (0.075, 0.2, 0.2), (0.15, 0.8, 0.2)),
        (Preset::Ffhq, Task::InpaintBox) => row(5, 0.5, (0.05, 0.125, 0.125), (0.1, 0.75, 0.375)),
        (Preset::Ffhq, Task::DeblurGauss) => row(5, 0.7, (0.05, 0.25, 0.25), (0.025, 1.25, 0.25)),
        (Preset::Ffhq, Task::SuperResolution) => Row {
            upsample_early: true,
            ..row(2, 0.7, (0.1, 0.15, 0.15), (0.0, 1.0, 0.25))
        },
    }
}

/// Guidance settings for `preset` and `task` in SaFaRI mode.
pub fn guidance(preset: Preset, task: Task) -> GuidanceConfig {
    let r = table(preset, task);
    GuidanceConfig {
        r0: r.r0,
        upsample_factor: UPSAMPLE_FACTOR,
        tau_fraction: r.tau,
        early: r.early,
        late: r.late,
        dps_weight: r.dps_weight,
        upsample_early: r.upsample_early,
        ..GuidanceConfig::default()
    }
}
