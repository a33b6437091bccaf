//! Reference hyperparameters for every dataset preset and task.

use safari_cli::parse_config;
use safari_core::{GuidanceConfig, GuidanceMode};

pub fn load(dataset: &str, task: &str, overrides: &[&str]) -> GuidanceConfig {
    let text = format!(
        "[experiment]\ntask = \"{task}\"\ndataset = \"{dataset}\"\nmode = \"safari\"\nseed = 0\nsteps = 50\nsigma = 0.05\noutput = \"out\"\n"
    );
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    parse_config(&text, &overrides).unwrap().guidance
}

/// dataset, task, r0, tau, early (spatial, high, low), late, dps weight, upsample early.
type Golden = (&'static str, &'static str, usize, f64, [f64; 3], [f64; 3], f64, bool);

pub const GOLDEN: [Golden; 8] = [
    ("imagenet-preset", "inpaint-random", 5, 0.7, [0.25, 0.0, 0.0], [0.35, 0.125, 0.025], 0.5, false),
    ("imagenet-preset", "inpaint-box", 5, 0.5, [0.125, 0.125, 0.125], [0.125, 0.625, 0.125], 0.25, false),
    ("imagenet-preset", "deblur-gauss", 4, 0.5, [0.075, 0.0125, 0.025], [0.225, 0.3, 0.15], 0.15, false),
    ("imagenet-preset", "sr", 5, 0.7, [0.025, 0.25, 0.25], [0.0, 1.25, 0.25], 0.5, false),
    ("ffhq-preset", "inpaint-random", 5, 0.7, [0.075, 0.2, 0.2], [0.15, 0.8, 0.2], 0.5, false),
    ("ffhq-preset", "inpaint-box", 5, 0.5, [0.05, 0.125, 0.125], [0.1, 0.75, 0.375], 0.5, false),
    ("ffhq-preset", "deblur-gauss", 5, 0.7, [0.05, 0.25, 0.25], [0.025, 1.25, 0.25], 0.5, false),
    ("ffhq-preset", "sr", 2, 0.7, [0.1, 0.15, 0.15], [0.0, 1.0, 0.25], 0.5, true),
];

/// Every mismatching cell, as `dataset/task field: got vs want`.
pub fn mismatches() -> Vec<String> {
    let mut out = Vec::new();
    for (dataset, task, r0, tau, early, late, dps, up_early) in GOLDEN {
        let g = load(dataset, task, &[]);
        let mut cell = |name: &str, ok: bool, got: String| {
            if !ok {
                out.push(format!("{dataset}/{task} {name}: got {got}"));
            }
        };
        cell("mode", g.mode == GuidanceMode::Safari, format!("{:?}", g.mode));
        cell("r0", g.r0 == r0, g.r0.to_string());
        cell("tau", g.tau_fraction == tau, g.tau_fraction.to_string());
        let e = [g.early.spatial, g.early.high, g.early.low];
        cell("early", e == early, format!("{e:?}"));
        let l = [g.late.spatial, g.late.high, g.late.low];
        cell("late", l == late, format!("{l:?}"));
        cell("upsample_factor", g.upsample_factor == 4, g.upsample_factor.to_string());
        cell("dps_weight", g.dps_weight == dps, g.dps_weight.to_string());
        cell("upsample_early", g.upsample_early == up_early, g.upsample_early.to_string());
    }
    out
}
