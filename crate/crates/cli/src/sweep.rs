//! One-dimensional hyperparameter sweeps.

use std::fmt;
use std::fs;
use std::str::FromStr;

use anyhow::Context;

use crate::config::{ConfigError, ExperimentConfig, Task};
use crate::experiment::evaluate_config;
use crate::report::{write_sweep_csv, SweepRow};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    R0,
    /// `c^H`, set in both phases.
    RhoH,
    /// `c^L`, set in both phases.
    RhoL,
    UpsampleFactor,
    SrFactor,
    Sigma,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::R0,
        SweepAxis::RhoH,
        SweepAxis::RhoL,
        SweepAxis::UpsampleFactor,
        SweepAxis::SrFactor,
        SweepAxis::Sigma,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::R0 => "r0",
            SweepAxis::RhoH => "rho_H",
            SweepAxis::RhoL => "rho_L",
            SweepAxis::UpsampleFactor => "upsample_factor",
            SweepAxis::SrFactor => "sr_factor",
            SweepAxis::Sigma => "sigma",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown sweep axis `{s}`"))
    }
}

fn bad(axis: SweepAxis, reason: String) -> ConfigError {
    ConfigError::Invalid {
        key: format!("sweep.{axis}"),
        reason,
    }
}

fn as_count(axis: SweepAxis, value: f64, min: usize) -> Result<usize, ConfigError> {
    if value.fract() != 0.0 || value < min as f64 || !value.is_finite() {
        return Err(bad(axis, format!("{value} is not an integer >= {min}")));
    }
    Ok(value as usize)
}

/// `cfg` with `axis` set to `value`, validated.
pub fn apply_axis(cfg: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig, ConfigError> {
    let mut out = cfg.clone();
    let g = &mut out.guidance;
    match axis {
        SweepAxis::R0 => g.r0 = as_count(axis, value, 0)?,
        SweepAxis::RhoH => {
            g.early.high = value;
            g.late.high = value;
        }
        SweepAxis::RhoL => {
            g.early.low = value;
            g.late.low = value;
        }
        SweepAxis::UpsampleFactor => g.upsample_factor = as_count(axis, value, 1)?,
        SweepAxis::SrFactor => {
            if cfg.task != Task::SuperResolution {
                return Err(bad(axis, format!("only valid for task sr, not {}", cfg.task)));
            }
            out.degradation.sr_factor = as_count(axis, value, 1)?;
        }
        SweepAxis::Sigma => out.sigma = value,
    }
    out.guidance.validate().map_err(|e| bad(axis, e.to_string()))?;
    out.validate()?;
    Ok(out)
}

/// Evaluates every value and writes `sweep.csv` under the output directory.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>, HarnessError> {
    if values.is_empty() {
        return Err(bad(axis, "no values given".into()).into());
    }
    let configs = values
        .iter()
        .map(|v| apply_axis(cfg, axis, *v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (value, c) in values.iter().zip(&configs) {
        let s = evaluate_config(c).with_context(|| format!("{axis} = {value}"))?;
        rows.push(SweepRow {
            axis: axis.to_string(),
            value: *value,
            psnr_mean: s.psnr_mean,
            psnr_std: s.psnr_std,
            ssim_mean: s.ssim_mean,
            ssim_std: s.ssim_std,
            manifest: s.manifest_hash,
        });
    }
    fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    let path = cfg.output.join("sweep.csv");
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_sweep_csv(std::io::BufWriter::new(file), &cfg.manifest_hash(), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn base(task: &str) -> ExperimentConfig {
        let text = format!(
            "[experiment]\ntask = \"{task}\"\ndataset = \"ffhq-preset\"\nmode = \"safari\"\nseed = 1\nsteps = 10\nsigma = 0.0\noutput = \"o\"\n"
        );
        parse_config(&text, &[]).unwrap()
    }

    #[test]
    fn axes_set_their_fields() {
        let cfg = base("sr");
        assert_eq!(apply_axis(&cfg, SweepAxis::R0, 3.0).unwrap().guidance.r0, 3);
        let h = apply_axis(&cfg, SweepAxis::RhoH, 0.7).unwrap().guidance;
        assert_eq!((h.early.high, h.late.high), (0.7, 0.7));
        assert_eq!(apply_axis(&cfg, SweepAxis::SrFactor, 2.0).unwrap().degradation.sr_factor, 2);
        assert_eq!(apply_axis(&cfg, SweepAxis::Sigma, 0.1).unwrap().sigma, 0.1);
    }

    #[test]
    fn invalid_combinations_are_config_errors() {
        assert!(apply_axis(&base("deblur-gauss"), SweepAxis::SrFactor, 2.0).is_err());
        assert!(apply_axis(&base("sr"), SweepAxis::SrFactor, 3.0).is_err());
        assert!(apply_axis(&base("sr"), SweepAxis::R0, 1.5).is_err());
        assert!(apply_axis(&base("sr"), SweepAxis::Sigma, -0.1).is_err());
        assert!(apply_axis(&base("sr"), SweepAxis::RhoL, -1.0).is_err());
        assert!("rho".parse::<SweepAxis>().is_err());
    }
}
