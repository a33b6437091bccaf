//! PSNR and single-scale SSIM on `[0, 1]` data.

use crate::error::{Error, Result};
use crate::tensor::Image;

/// Returned by [`psnr`] when the two images are identical.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricResult {
    pub psnr: f64,
    pub ssim: f64,
}

pub fn evaluate(restored: &Image, truth: &Image) -> Result<MetricResult> {
    Ok(MetricResult {
        psnr: psnr(restored, truth)?,
        ssim: ssim(restored, truth)?,
    })
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    b.ensure_shape(a.shape())?;
    Ok(a.sub(b).norm_sq() / a.data().len() as f64)
}

/// `10 log10(1 / MSE)`, or [`PSNR_IDENTICAL`] for zero error.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(-10.0 * m.log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering of a single-channel plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = g.iter().enumerate().map(|(i, gi)| gi * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = g.iter().enumerate().map(|(i, gi)| gi * rows[(r + i) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over all fully-covered window positions, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    b.ensure_shape(a.shape())?;
    let shape = a.shape();
    if shape.height < SSIM_WINDOW || shape.width < SSIM_WINDOW {
        return Err(Error::invalid(
            "image",
            format!("{shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"),
        ));
    }
    let g = gaussian_window();
    let (h, w) = (shape.height, shape.width);
    let mut total = 0.0;
    for ch in 0..shape.channels {
        let x = a.channel(ch).into_vec();
        let y = b.channel(ch).into_vec();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, oh, ow) = filter_valid(&x, h, w, &g);
        let (my, _, _) = filter_valid(&y, h, w, &g);
        let (sxx, _, _) = filter_valid(&xx, h, w, &g);
        let (syy, _, _) = filter_valid(&yy, h, w, &g);
        let (sxy, _, _) = filter_valid(&xy, h, w, &g);
        let mut acc = 0.0;
        for i in 0..oh * ow {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / shape.channels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Seed, Shape};

    #[test]
    fn psnr_cases() {
        let shape = Shape::new(12, 12, 3);
        let a = Image::uniform(shape, &mut Seed(1).rng()).scale(0.8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_IDENTICAL);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Image::zeros(Shape::new(12, 12, 1))).is_err());
    }

    #[test]
    fn ssim_cases() {
        let shape = Shape::new(16, 16, 2);
        let a = Image::uniform(shape, &mut Seed(2).rng());
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 1.0);
        let small = Image::zeros(Shape::new(10, 16, 1));
        assert!(ssim(&small, &small).is_err());
    }
}
