//! Procedural toy images and dataset loading.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::Rng;
use safari_core::io::read_image;
use safari_core::{Image, Seed, Shape};

/// Offset separating held-out image seeds from gallery seeds.
const HELD_OUT_STREAM: u64 = 1 << 40;

/// A smooth two-colour gradient with two to four flat shapes (discs,
/// rectangles and a striped patch) on top. Values lie in `[0, 1]`.
pub fn toy_image(shape: Shape, seed: Seed) -> Image {
    let mut rng = seed.rng();
    let c = shape.channels;
    let color = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> { (0..c).map(|_| rng.random_range(0.05..0.95)).collect() };
    let (h, w) = (shape.height as f64, shape.width as f64);
    let from = color(&mut rng);
    let to = color(&mut rng);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut img = Image::from_fn(shape, |r, col, ch| {
        let u = ((r as f64 / h - 0.5) * sa + (col as f64 / w - 0.5) * ca) / std::f64::consts::SQRT_2 + 0.5;
        from[ch] + (to[ch] - from[ch]) * u
    });
    for _ in 0..rng.random_range(2..=4) {
        let paint = color(&mut rng);
        let cy = rng.random_range(0.0..h);
        let cx = rng.random_range(0.0..w);
        let size = rng.random_range(0.12..0.35) * h.min(w);
        let kind = rng.random_range(0..3);
        let period = rng.random_range(2.0..5.0);
        for r in 0..shape.height {
            for col in 0..shape.width {
                let (dy, dx) = (r as f64 + 0.5 - cy, col as f64 + 0.5 - cx);
                let inside = match kind {
                    0 => dy * dy + dx * dx <= size * size,
                    1 => dy.abs() <= size && dx.abs() <= 0.7 * size,
                    _ => dy.abs() <= size && dx.abs() <= size && ((r as f64 / period) as i64) % 2 == 0,
                };
                if inside {
                    for (ch, v) in paint.iter().enumerate() {
                        img.set(r, col, ch, *v);
                    }
                }
            }
        }
    }
    img
}

pub fn toy_gallery(shape: Shape, count: usize, seed: Seed) -> Vec<Image> {
    (0..count).map(|i| toy_image(shape, seed.derive(i as u64))).collect()
}

/// Toy image from a seed stream disjoint from [`toy_gallery`]'s.
pub fn held_out_image(shape: Shape, gallery_seed: Seed, index: u64) -> Image {
    toy_image(shape, gallery_seed.derive(HELD_OUT_STREAM + index))
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "ppm" | "pnm"))
}

/// Every PNG/PNM image in `dir`, in file-name order; all must share a shape.
pub fn load_folder(dir: &Path) -> anyhow::Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image_file(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no PNG/PNM images in {}", dir.display());
    }
    let mut images = Vec::with_capacity(paths.len());
    for p in &paths {
        images.push(read_image(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let shape = images[0].shape();
    if let Some((p, img)) = paths.iter().zip(&images).find(|(_, i)| i.shape() != shape) {
        bail!("{} is {} but {} is {}", p.display(), img.shape(), paths[0].display(), shape);
    }
    Ok(images)
}
