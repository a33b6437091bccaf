//! Experiment configuration: a nested TOML file, optional dataset presets,
//! and `key=value` overrides applied before validation.
//!
//! ```toml
//! [experiment]
//! task = "inpaint-random"       # inpaint-random | inpaint-box | deblur-gauss | sr
//! dataset = "imagenet-preset"   # imagenet-preset | ffhq-preset | folder of images
//! mode = "safari"               # safari | spatial-only | freq-only | dps | unconditional
//! seed = 7
//! steps = 200
//! sigma = 0.025
//! output = "runs/demo"
//!
//! [guidance.late]
//! high = 0.5                    # any preset cell can be overridden
//! ```
//!
//! With a preset dataset the `[guidance]` section is optional; with a folder
//! every guidance key is required.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use safari_core::{GradientMode, GuidanceConfig, GuidanceMode, PhaseWeights};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::presets;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("missing required keys: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("bad override `{0}`: expected dotted.key=value")]
    Override(String),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    InpaintRandom,
    InpaintBox,
    DeblurGauss,
    SuperResolution,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::InpaintRandom, Task::InpaintBox, Task::DeblurGauss, Task::SuperResolution];

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::InpaintRandom => "inpaint-random",
            Task::InpaintBox => "inpaint-box",
            Task::DeblurGauss => "deblur-gauss",
            Task::SuperResolution => "sr",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    ImageNet,
    Ffhq,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::ImageNet, Preset::Ffhq];

    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::ImageNet => "imagenet-preset",
            Preset::Ffhq => "ffhq-preset",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    /// Procedural toy gallery with the named hyperparameter preset.
    Preset(Preset),
    /// Folder of images used as the prior gallery.
    Folder(PathBuf),
}

impl Dataset {
    fn parse(s: &str) -> Dataset {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .map_or_else(|| Dataset::Folder(PathBuf::from(s)), Dataset::Preset)
    }

    pub fn describe(&self) -> String {
        match self {
            Dataset::Preset(p) => p.as_str().to_string(),
            Dataset::Folder(path) => path.display().to_string(),
        }
    }
}

/// Where ground-truth images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthSource {
    /// Fresh draws from the prior: a uniformly chosen gallery image plus
    /// isotropic Gaussian perturbation of std `prior_std`.
    PriorDraw,
    /// Procedural images generated from seeds disjoint from the gallery.
    HeldOut,
    /// Images read from a folder, in file-name order.
    Folder(PathBuf),
}

impl TruthSource {
    fn parse(s: &str) -> TruthSource {
        match s {
            "prior-draw" => TruthSource::PriorDraw,
            "held-out" => TruthSource::HeldOut,
            other => TruthSource::Folder(PathBuf::from(other)),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            TruthSource::PriorDraw => "prior-draw".into(),
            TruthSource::HeldOut => "held-out".into(),
            TruthSource::Folder(p) => p.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GallerySettings {
    /// Number of procedural gallery images (ignored for folder datasets).
    pub size: usize,
    pub image_size: usize,
    pub channels: usize,
    pub seed: u64,
    /// Component std of the Gaussian-mixture prior; 0 selects the
    /// empirical (point-mass) prior.
    pub prior_std: f64,
    pub truth: TruthSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSettings {
    pub mask_fraction: f64,
    pub box_size: usize,
    pub blur_kernel: usize,
    pub blur_sigma: f64,
    pub sr_factor: usize,
}

impl DegradationSettings {
    /// Task parameters scaled from the 256x256 protocol to `image_size`:
    /// box `H/2`, blur kernel about `H/4` (odd), blur std `3 H / 256`.
    pub fn scaled_for(image_size: usize) -> Self {
        Self {
            mask_fraction: 0.92,
            box_size: image_size / 2,
            blur_kernel: 2 * (image_size / 8) + 1,
            blur_sigma: 3.0 * image_size as f64 / 256.0,
            sr_factor: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: Dataset,
    pub seed: u64,
    pub steps: usize,
    pub sigma: f64,
    pub output: PathBuf,
    /// Number of restored images per run.
    pub batch: usize,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub gallery: GallerySettings,
    pub degradation: DegradationSettings,
    /// Includes the guidance mode.
    pub guidance: GuidanceConfig,
}

// Raw, all-optional mirror of the file layout. `deny_unknown_fields` turns
// typos into hard errors.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<RawExperiment>,
    gallery: Option<RawGallery>,
    degradation: Option<RawDegradation>,
    guidance: Option<RawGuidance>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    task: Option<String>,
    dataset: Option<String>,
    mode: Option<String>,
    seed: Option<u64>,
    steps: Option<usize>,
    sigma: Option<f64>,
    output: Option<String>,
    batch: Option<usize>,
    threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGallery {
    size: Option<usize>,
    image_size: Option<usize>,
    channels: Option<usize>,
    seed: Option<u64>,
    prior_std: Option<f64>,
    truth: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDegradation {
    mask_fraction: Option<f64>,
    box_size: Option<usize>,
    blur_kernel: Option<usize>,
    blur_sigma: Option<f64>,
    sr_factor: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGuidance {
    r0: Option<usize>,
    tau: Option<f64>,
    upsample_factor: Option<usize>,
    upsample_early: Option<bool>,
    dps_weight: Option<f64>,
    gradient_mode: Option<String>,
    early: Option<RawPhase>,
    late: Option<RawPhase>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase {
    spatial: Option<f64>,
    high: Option<f64>,
    low: Option<f64>,
}

pub const DEFAULT_BATCH: usize = 4;
pub const DEFAULT_GALLERY_SIZE: usize = 64;
pub const DEFAULT_IMAGE_SIZE: usize = 32;
pub const DEFAULT_GALLERY_SEED: u64 = 2024;
pub const DEFAULT_PRIOR_STD: f64 = 0.05;

/// Reads and validates a config file, applying `overrides` first.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, overrides)
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let raw: RawConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    resolve(raw)
}

/// Sets `dotted.key` in the table; the value is parsed as a TOML literal and
/// falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if key.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.to_string()));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
    let exp = raw.experiment.unwrap_or_default();
    let gal = raw.gallery.unwrap_or_default();
    let deg = raw.degradation.unwrap_or_default();
    let gui = raw.guidance.unwrap_or_default();
    let early = gui.early.as_ref();
    let late = gui.late.as_ref();

    let task = exp.task.as_deref().map(Task::from_str).transpose().map_err(|e| invalid("experiment.task", e))?;
    let dataset = exp.dataset.as_deref().map(Dataset::parse);
    let preset = match (&dataset, task) {
        (Some(Dataset::Preset(p)), Some(t)) => Some(presets::guidance(*p, t)),
        _ => None,
    };
    let needs_guidance = !matches!(dataset, Some(Dataset::Preset(_)));

    let mut missing = Vec::new();
    let mut need = |present: bool, key: &str| {
        if !present {
            missing.push(key.to_string());
        }
    };
    need(exp.task.is_some(), "experiment.task");
    need(exp.dataset.is_some(), "experiment.dataset");
    need(exp.mode.is_some(), "experiment.mode");
    need(exp.seed.is_some(), "experiment.seed");
    need(exp.steps.is_some(), "experiment.steps");
    need(exp.sigma.is_some(), "experiment.sigma");
    need(exp.output.is_some(), "experiment.output");
    if needs_guidance {
        need(gui.r0.is_some(), "guidance.r0");
        need(gui.tau.is_some(), "guidance.tau");
        need(gui.upsample_factor.is_some(), "guidance.upsample_factor");
        need(gui.dps_weight.is_some(), "guidance.dps_weight");
        for (phase, name) in [(early, "early"), (late, "late")] {
            need(phase.and_then(|p| p.spatial).is_some(), &format!("guidance.{name}.spatial"));
            need(phase.and_then(|p| p.high).is_some(), &format!("guidance.{name}.high"));
            need(phase.and_then(|p| p.low).is_some(), &format!("guidance.{name}.low"));
        }
    }
    if !missing.is_empty() {
        return Err(ConfigError::Missing(missing));
    }

    let task = task.expect("checked above");
    let dataset = dataset.expect("checked above");
    let mode = GuidanceMode::from_str(exp.mode.as_deref().expect("checked above"))
        .map_err(|e| invalid("experiment.mode", e))?;
    let base = preset.unwrap_or_default();
    let phase = |raw: Option<&RawPhase>, fallback: PhaseWeights| PhaseWeights {
        spatial: raw.and_then(|p| p.spatial).unwrap_or(fallback.spatial),
        high: raw.and_then(|p| p.high).unwrap_or(fallback.high),
        low: raw.and_then(|p| p.low).unwrap_or(fallback.low),
    };
    let gradient_mode = match gui.gradient_mode.as_deref() {
        Some(s) => GradientMode::from_str(s).map_err(|e| invalid("guidance.gradient_mode", e))?,
        None => base.gradient_mode,
    };
    let guidance = GuidanceConfig {
        mode,
        r0: gui.r0.unwrap_or(base.r0),
        upsample_factor: gui.upsample_factor.unwrap_or(base.upsample_factor),
        tau_fraction: gui.tau.unwrap_or(base.tau_fraction),
        early: phase(early, base.early),
        late: phase(late, base.late),
        dps_weight: gui.dps_weight.unwrap_or(base.dps_weight),
        gradient_mode,
        upsample_early: gui.upsample_early.unwrap_or(base.upsample_early),
    };
    guidance.validate().map_err(|e| invalid("guidance", e.to_string()))?;

    let image_size = gal.image_size.unwrap_or(DEFAULT_IMAGE_SIZE);
    let scaled = DegradationSettings::scaled_for(image_size);
    let cfg = ExperimentConfig {
        task,
        dataset,
        seed: exp.seed.expect("checked above"),
        steps: exp.steps.expect("checked above"),
        sigma: exp.sigma.expect("checked above"),
        output: PathBuf::from(exp.output.expect("checked above")),
        batch: exp.batch.unwrap_or(DEFAULT_BATCH),
        threads: exp.threads.unwrap_or(0),
        gallery: GallerySettings {
            size: gal.size.unwrap_or(DEFAULT_GALLERY_SIZE),
            image_size,
            channels: gal.channels.unwrap_or(3),
            seed: gal.seed.unwrap_or(DEFAULT_GALLERY_SEED),
            prior_std: gal.prior_std.unwrap_or(DEFAULT_PRIOR_STD),
            truth: gal.truth.as_deref().map_or(TruthSource::PriorDraw, TruthSource::parse),
        },
        degradation: DegradationSettings {
            mask_fraction: deg.mask_fraction.unwrap_or(scaled.mask_fraction),
            box_size: deg.box_size.unwrap_or(scaled.box_size),
            blur_kernel: deg.blur_kernel.unwrap_or(scaled.blur_kernel),
            blur_sigma: deg.blur_sigma.unwrap_or(scaled.blur_sigma),
            sr_factor: deg.sr_factor.unwrap_or(scaled.sr_factor),
        },
        guidance,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    /// Range checks that do not depend on the dataset contents.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.steps == 0 {
            return Err(invalid("experiment.steps", "must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("experiment.sigma", "must be finite and >= 0"));
        }
        if self.batch == 0 {
            return Err(invalid("experiment.batch", "must be at least 1"));
        }
        let g = &self.gallery;
        if matches!(self.dataset, Dataset::Preset(_)) {
            if g.size == 0 {
                return Err(invalid("gallery.size", "must be at least 1"));
            }
            if g.image_size < 11 {
                return Err(invalid("gallery.image_size", "must be at least 11 (SSIM window)"));
            }
            if g.channels != 1 && g.channels != 3 {
                return Err(invalid("gallery.channels", "must be 1 or 3"));
            }
        }
        if !(g.prior_std >= 0.0 && g.prior_std.is_finite()) {
            return Err(invalid("gallery.prior_std", "must be finite and >= 0"));
        }
        let d = &self.degradation;
        if !(0.0..=1.0).contains(&d.mask_fraction) {
            return Err(invalid("degradation.mask_fraction", "must lie in [0, 1]"));
        }
        if d.blur_kernel % 2 == 0 {
            return Err(invalid("degradation.blur_kernel", "must be odd"));
        }
        if !(d.blur_sigma > 0.0 && d.blur_sigma.is_finite()) {
            return Err(invalid("degradation.blur_sigma", "must be positive"));
        }
        if d.sr_factor == 0 {
            return Err(invalid("degradation.sr_factor", "must be at least 1"));
        }
        if self.task == Task::SuperResolution && matches!(self.dataset, Dataset::Preset(_)) && g.image_size % d.sr_factor != 0 {
            return Err(invalid(
                "degradation.sr_factor",
                format!("{} does not divide image size {}", d.sr_factor, g.image_size),
            ));
        }
        Ok(())
    }

    /// Canonical listing of every field that affects results; the output
    /// directory and thread count are excluded.
    pub fn manifest_entries(&self) -> Vec<(&'static str, String)> {
        let g = &self.guidance;
        let d = &self.degradation;
        let gal = &self.gallery;
        vec![
            ("task", self.task.to_string()),
            ("dataset", self.dataset.describe()),
            ("mode", g.mode.to_string()),
            ("seed", self.seed.to_string()),
            ("steps", self.steps.to_string()),
            ("sigma", format!("{:?}", self.sigma)),
            ("batch", self.batch.to_string()),
            ("gallery.size", gal.size.to_string()),
            ("gallery.image_size", gal.image_size.to_string()),
            ("gallery.channels", gal.channels.to_string()),
            ("gallery.seed", gal.seed.to_string()),
            ("gallery.prior_std", format!("{:?}", gal.prior_std)),
            ("gallery.truth", gal.truth.describe()),
            ("degradation.mask_fraction", format!("{:?}", d.mask_fraction)),
            ("degradation.box_size", d.box_size.to_string()),
            ("degradation.blur_kernel", d.blur_kernel.to_string()),
            ("degradation.blur_sigma", format!("{:?}", d.blur_sigma)),
            ("degradation.sr_factor", d.sr_factor.to_string()),
            ("guidance.r0", g.r0.to_string()),
            ("guidance.tau", format!("{:?}", g.tau_fraction)),
            ("guidance.upsample_factor", g.upsample_factor.to_string()),
            ("guidance.upsample_early", g.upsample_early.to_string()),
            ("guidance.dps_weight", format!("{:?}", g.dps_weight)),
            ("guidance.gradient_mode", g.gradient_mode.to_string()),
            ("guidance.early.spatial", format!("{:?}", g.early.spatial)),
            ("guidance.early.high", format!("{:?}", g.early.high)),
            ("guidance.early.low", format!("{:?}", g.early.low)),
            ("guidance.late.spatial", format!("{:?}", g.late.spatial)),
            ("guidance.late.high", format!("{:?}", g.late.high)),
            ("guidance.late.low", format!("{:?}", g.late.low)),
        ]
    }

    /// Hex SHA-256 of the canonical manifest.
    pub fn manifest_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in self.manifest_entries() {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    /// JSON-style metadata block written next to the run outputs.
    pub fn manifest_block(&self) -> String {
        let mut out = String::from("{\n");
        let _ = writeln!(out, "  \"hash\": \"{}\",", self.manifest_hash());
        let entries = self.manifest_entries();
        for (i, (k, v)) in entries.iter().enumerate() {
            let sep = if i + 1 == entries.len() { "" } else { "," };
            let _ = writeln!(out, "  \"{}\": \"{}\"{sep}", k, v.replace('\\', "\\\\").replace('"', "\\\""));
        }
        out.push_str("}\n");
        out
    }
}
