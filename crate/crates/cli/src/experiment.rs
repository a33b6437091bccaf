//! Batch restoration runs and their on-disk reports.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use rand::Rng;
use rayon::prelude::*;
use safari_core::io::{write_image, BitDepth};
use safari_core::metrics::{evaluate, MetricResult};
use safari_core::{
    DiffusionSchedule, EmpiricalPrior, Error as CoreError, GaussianMixturePrior, Image, LinearDegradation,
    NoiseModel, RunTrace, ScoreModel, Seed, Shape,
};

use crate::config::{Dataset, ExperimentConfig, Task, TruthSource};
use crate::gallery;
use crate::report::{write_trace_csv, MetricsTable};

/// Analytic prior built from the gallery templates.
pub enum Prior {
    Empirical(EmpiricalPrior),
    Mixture(GaussianMixturePrior),
}

impl Prior {
    pub fn new(templates: Vec<Image>, std: f64) -> safari_core::Result<Self> {
        if std == 0.0 {
            return Ok(Prior::Empirical(EmpiricalPrior::new(templates)?));
        }
        let k = templates.len();
        Ok(Prior::Mixture(GaussianMixturePrior::new(templates, vec![std; k], vec![1.0; k])?))
    }

    fn model(&self) -> &dyn ScoreModel {
        match self {
            Prior::Empirical(p) => p,
            Prior::Mixture(p) => p,
        }
    }
}

impl ScoreModel for Prior {
    fn score(&self, x_t: &Image, t: usize, s: &DiffusionSchedule) -> safari_core::Result<Image> {
        self.model().score(x_t, t, s)
    }

    fn denoise(&self, x_t: &Image, t: usize, s: &DiffusionSchedule) -> safari_core::Result<Image> {
        self.model().denoise(x_t, t, s)
    }

    fn denoise_vjp(&self, x_t: &Image, t: usize, v: &Image, s: &DiffusionSchedule) -> safari_core::Result<Image> {
        self.model().denoise_vjp(x_t, t, v, s)
    }
}

/// Everything shared by the items of one run.
pub struct Problem {
    pub cfg: ExperimentConfig,
    pub shape: Shape,
    pub templates: Vec<Image>,
    pub prior: Prior,
    pub schedule: DiffusionSchedule,
    truths: Option<Vec<Image>>,
}

pub struct ItemResult {
    pub index: usize,
    pub truth: Image,
    pub measurement: Image,
    pub restored: Image,
    pub trace: RunTrace,
    pub metrics: MetricResult,
}

/// Per-item seed streams, all derived from `(master seed, item index)`.
struct ItemSeeds {
    truth: Seed,
    operator: Seed,
    noise: Seed,
    sampler: Seed,
}

impl ItemSeeds {
    fn new(master: u64, index: usize) -> Self {
        let item = Seed(master).derive(index as u64);
        Self {
            truth: item.derive(0),
            operator: item.derive(1),
            noise: item.derive(2),
            sampler: item.derive(3),
        }
    }
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> anyhow::Result<Self> {
        let g = &cfg.gallery;
        let templates = match &cfg.dataset {
            Dataset::Preset(_) => {
                gallery::toy_gallery(Shape::new(g.image_size, g.image_size, g.channels), g.size, Seed(g.seed))
            }
            Dataset::Folder(dir) => gallery::load_folder(dir)?,
        };
        let shape = templates[0].shape();
        if cfg.task == Task::SuperResolution
            && (shape.height % cfg.degradation.sr_factor != 0 || shape.width % cfg.degradation.sr_factor != 0)
        {
            bail!("sr_factor {} does not divide image shape {shape}", cfg.degradation.sr_factor);
        }
        let truths = match &g.truth {
            TruthSource::Folder(dir) => {
                let t = gallery::load_folder(dir)?;
                if t[0].shape() != shape {
                    bail!("truth images are {} but the gallery is {shape}", t[0].shape());
                }
                if t.len() < cfg.batch {
                    bail!("batch of {} needs that many truth images, {} has {}", cfg.batch, dir.display(), t.len());
                }
                Some(t)
            }
            _ => None,
        };
        let prior = Prior::new(templates.clone(), g.prior_std)?;
        let schedule = DiffusionSchedule::linear_rescaled(cfg.steps)?;
        Ok(Self {
            cfg: cfg.clone(),
            shape,
            templates,
            prior,
            schedule,
            truths,
        })
    }

    pub fn truth(&self, index: usize) -> Image {
        let seeds = ItemSeeds::new(self.cfg.seed, index);
        match (&self.cfg.gallery.truth, &self.truths) {
            (_, Some(t)) => t[index].clone(),
            (TruthSource::HeldOut, _) => {
                let offset: u64 = seeds.truth.rng().random();
                gallery::held_out_image(self.shape, Seed(self.cfg.gallery.seed), offset >> 24)
            }
            _ => {
                let mut rng = seeds.truth.rng();
                let k = rng.random_range(0..self.templates.len());
                let noise = Image::standard_normal(self.shape, &mut rng);
                self.templates[k].add_scaled(self.cfg.gallery.prior_std, &noise)
            }
        }
    }

    pub fn degradation(&self, index: usize) -> anyhow::Result<LinearDegradation> {
        let seeds = ItemSeeds::new(self.cfg.seed, index);
        let d = &self.cfg.degradation;
        Ok(match self.cfg.task {
            Task::InpaintRandom => LinearDegradation::random_mask(self.shape, d.mask_fraction, seeds.operator)?,
            Task::InpaintBox => LinearDegradation::box_mask(self.shape, d.box_size, seeds.operator)?,
            Task::DeblurGauss => LinearDegradation::gaussian_blur(self.shape, d.blur_kernel, d.blur_sigma)?,
            Task::SuperResolution => LinearDegradation::bicubic_downsample(self.shape, d.sr_factor)?,
        })
    }

    /// Restores item `index`. A non-finite failure keeps its partial trace.
    pub fn restore(&self, index: usize) -> Result<ItemResult, ItemFailure> {
        let fail = |error: anyhow::Error| ItemFailure {
            index,
            error,
            trace: None,
        };
        let seeds = ItemSeeds::new(self.cfg.seed, index);
        let truth = self.truth(index);
        let op = self.degradation(index).map_err(fail)?;
        let noise = NoiseModel::new(self.cfg.sigma).map_err(|e| fail(e.into()))?;
        let measurement = op.measure(&truth, noise, seeds.noise).map_err(|e| fail(e.into()))?;
        let (restored, trace) =
            safari_core::guidance::run(&measurement, &op, &self.prior, &self.cfg.guidance, &self.schedule, seeds.sampler)
                .map_err(|e| match e {
                    CoreError::NonFinite { t, what, trace } => ItemFailure {
                        index,
                        error: anyhow!("non-finite {what} at step {t}"),
                        trace: Some(*trace),
                    },
                    other => fail(other.into()),
                })?;
        let metrics = evaluate(&restored, &truth).map_err(|e| fail(e.into()))?;
        Ok(ItemResult {
            index,
            truth,
            measurement,
            restored,
            trace,
            metrics,
        })
    }
}

#[derive(Debug)]
pub struct ItemFailure {
    pub index: usize,
    pub error: anyhow::Error,
    pub trace: Option<RunTrace>,
}

/// Restores every item on a worker pool; results come back in item order.
pub fn run_batch(problem: &Problem) -> anyhow::Result<Vec<Result<ItemResult, ItemFailure>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(problem.cfg.threads)
        .build()
        .context("building worker pool")?;
    Ok(pool.install(|| (0..problem.cfg.batch).into_par_iter().map(|i| problem.restore(i)).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub manifest_hash: String,
    pub items: Vec<MetricResult>,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Summary {
    pub fn from_metrics(manifest_hash: String, items: Vec<MetricResult>) -> Self {
        let (psnr_mean, psnr_std) = mean_std(&items.iter().map(|m| m.psnr).collect::<Vec<_>>());
        let (ssim_mean, ssim_std) = mean_std(&items.iter().map(|m| m.ssim).collect::<Vec<_>>());
        Self {
            manifest_hash,
            items,
            psnr_mean,
            psnr_std,
            ssim_mean,
            ssim_std,
        }
    }
}

/// Runs the batch in memory and aggregates metrics, writing nothing.
pub fn evaluate_config(cfg: &ExperimentConfig) -> anyhow::Result<Summary> {
    let problem = Problem::build(cfg)?;
    let mut metrics = Vec::with_capacity(cfg.batch);
    for r in run_batch(&problem)? {
        match r {
            Ok(item) => metrics.push(item.metrics),
            Err(f) => return Err(f.error.context(format!("item {}", f.index))),
        }
    }
    Ok(Summary::from_metrics(cfg.manifest_hash(), metrics))
}

/// Nearest-neighbour resize, used to show low-resolution measurements at
/// full size in the comparison panels.
fn resize_nearest(img: &Image, shape: Shape) -> Image {
    let s = img.shape();
    Image::from_fn(shape, |r, c, ch| img.get(r * s.height / shape.height, c * s.width / shape.width, ch))
}

/// `measurement | restoration | ground truth`, left to right.
pub fn side_by_side(item: &ItemResult) -> Image {
    let shape = item.truth.shape();
    let panels = [resize_nearest(&item.measurement, shape), item.restored.clone(), item.truth.clone()];
    let wide = Shape::new(shape.height, 3 * shape.width, shape.channels);
    Image::from_fn(wide, |r, c, ch| panels[c / shape.width].get(r, c % shape.width, ch))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Runs the configured batch and writes panels, restorations, traces,
/// metrics and the manifest under `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<Summary> {
    let problem = Problem::build(cfg)?;
    let hash = cfg.manifest_hash();
    let out = &cfg.output;
    for sub in ["panels", "restored", "traces"] {
        fs::create_dir_all(out.join(sub)).with_context(|| format!("creating {}", out.join(sub).display()))?;
    }
    fs::write(out.join("manifest.json"), cfg.manifest_block()).context("writing manifest")?;

    let results = run_batch(&problem)?;
    let mut metrics = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(item) => {
                let stem = format!("item_{:03}", item.index);
                write_image(&side_by_side(&item), &out.join("panels").join(format!("{stem}.png")), BitDepth::Eight)?;
                write_image(&item.restored, &out.join("restored").join(format!("{stem}.png")), BitDepth::Sixteen)?;
                let mut w = create(&out.join("traces").join(format!("{stem}.csv")))?;
                write_trace_csv(&mut w, &hash, &item.trace)?;
                w.flush()?;
                metrics.push((item.index, item.metrics));
            }
            Err(f) => {
                if let Some(trace) = &f.trace {
                    let mut w = create(&out.join("traces").join(format!("item_{:03}.partial.csv", f.index)))?;
                    write_trace_csv(&mut w, &hash, trace)?;
                    w.flush()?;
                }
                failures.push(f);
            }
        }
    }
    if !failures.is_empty() {
        let list: Vec<String> = failures.iter().map(|f| format!("item {}: {:#}", f.index, f.error)).collect();
        bail!("{} of {} items failed: {}", failures.len(), cfg.batch, list.join("; "));
    }
    let summary = Summary::from_metrics(hash.clone(), metrics.iter().map(|(_, m)| *m).collect());
    let table = MetricsTable::from_summary(&metrics, &summary);
    let mut w = create(&out.join("metrics.csv"))?;
    table.write(&mut w, &hash)?;
    w.flush()?;
    Ok(summary)
}
