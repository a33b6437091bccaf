//! Injective fidelity transforms: bicubic upsampling and ideal DFT filters.
//!
//! The frequency split uses a Chebyshev radius around the centered DC term:
//! after fftshift-style centering (center index `floor(N / 2)` per axis) a
//! frequency sits in the low band when
//! `max(|u - W/2|, |v - H/2|) < r0`. Ties (`== r0`) belong to the high band.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::resample::Resampler;
use crate::tensor::{fft2, ifft2, Image, Shape, Spectrum};

/// Binary low-band indicator over unshifted DFT indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterMask {
    height: usize,
    width: usize,
    radius: usize,
    low: Vec<bool>,
}

impl FilterMask {
    pub fn new(height: usize, width: usize, radius: usize) -> Self {
        let mut low = vec![false; height * width];
        for u in 0..height {
            for v in 0..width {
                low[u * width + v] = chebyshev_radius(u, height).max(chebyshev_radius(v, width)) < radius;
            }
        }
        Self {
            height,
            width,
            radius,
            low,
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// `true` when unshifted index `(u, v)` lies in the low band.
    pub fn is_low(&self, u: usize, v: usize) -> bool {
        self.low[u * self.width + v]
    }

    /// Mask laid out in centered (fftshifted) coordinates, for display.
    pub fn centered(&self) -> Vec<bool> {
        let mut out = vec![false; self.low.len()];
        for u in 0..self.height {
            for v in 0..self.width {
                let cu = (u + self.height / 2) % self.height;
                let cv = (v + self.width / 2) % self.width;
                out[cu * self.width + cv] = self.is_low(u, v);
            }
        }
        out
    }

    pub fn low_count(&self) -> usize {
        self.low.iter().filter(|b| **b).count()
    }
}

/// Distance of unshifted index `k` from the centered DC position.
fn chebyshev_radius(k: usize, n: usize) -> usize {
    let centered = (k + n / 2) % n;
    centered.abs_diff(n / 2)
}

/// Splits `x` into `(high, low)` parts with one forward transform.
pub fn frequency_split(x: &Image, r0: usize) -> Result<(Image, Image)> {
    let shape = x.shape();
    let mask = FilterMask::new(shape.height, shape.width, r0);
    let spec = fft2(x);
    let c = shape.channels;
    let zero = Complex64::new(0.0, 0.0);
    let mut high = spec.clone();
    let mut low = spec;
    for u in 0..shape.height {
        for v in 0..shape.width {
            let base = (u * shape.width + v) * c;
            let target = if mask.is_low(u, v) { &mut high } else { &mut low };
            target.data_mut()[base..base + c].fill(zero);
        }
    }
    Ok((ifft2(&high)?, ifft2(&low)?))
}

fn band_pass(x: &Image, r0: usize, keep_low: bool) -> Result<Image> {
    let shape = x.shape();
    let mask = FilterMask::new(shape.height, shape.width, r0);
    let mut spec: Spectrum = fft2(x);
    let c = shape.channels;
    for u in 0..shape.height {
        for v in 0..shape.width {
            if mask.is_low(u, v) != keep_low {
                let base = (u * shape.width + v) * c;
                spec.data_mut()[base..base + c].fill(Complex64::new(0.0, 0.0));
            }
        }
    }
    ifft2(&spec)
}

/// `F^-1 H F`: removes frequencies with Chebyshev radius `< r0`.
pub fn ideal_highpass(x: &Image, r0: usize) -> Result<Image> {
    band_pass(x, r0, false)
}

/// `F^-1 L F`: keeps only frequencies with Chebyshev radius `< r0`.
pub fn ideal_lowpass(x: &Image, r0: usize) -> Result<Image> {
    band_pass(x, r0, true)
}

/// Separable bicubic upsampling by an integer factor.
pub fn bicubic_upsample(x: &Image, factor: usize) -> Result<Image> {
    let t = FidelityTransform::bicubic_upsample(x.shape(), factor)?;
    t.apply(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Identity,
    BicubicUpsample { factor: usize },
    Highpass { r0: usize },
    Lowpass { r0: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityTransform {
    kind: TransformKind,
    input: Shape,
    resampler: Option<Resampler>,
}

impl FidelityTransform {
    pub fn identity(shape: Shape) -> Self {
        Self {
            kind: TransformKind::Identity,
            input: shape,
            resampler: None,
        }
    }

    pub fn bicubic_upsample(shape: Shape, factor: usize) -> Result<Self> {
        if factor < 1 {
            return Err(Error::invalid("upsample_factor", "must be at least 1"));
        }
        Ok(Self {
            kind: TransformKind::BicubicUpsample { factor },
            input: shape,
            resampler: Some(Resampler::bicubic(shape, shape.height * factor, shape.width * factor)),
        })
    }

    pub fn highpass(shape: Shape, r0: usize) -> Self {
        Self {
            kind: TransformKind::Highpass { r0 },
            input: shape,
            resampler: None,
        }
    }

    pub fn lowpass(shape: Shape, r0: usize) -> Self {
        Self {
            kind: TransformKind::Lowpass { r0 },
            input: shape,
            resampler: None,
        }
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn is_identity(&self) -> bool {
        self.kind == TransformKind::Identity
    }
}

impl LinearOperator for FidelityTransform {
    fn input_shape(&self) -> Shape {
        self.input
    }

    fn output_shape(&self) -> Shape {
        match self.kind {
            TransformKind::BicubicUpsample { factor } => Shape::new(
                self.input.height * factor,
                self.input.width * factor,
                self.input.channels,
            ),
            _ => self.input,
        }
    }

    fn apply(&self, x: &Image) -> Result<Image> {
        x.ensure_shape(self.input)?;
        match self.kind {
            TransformKind::Identity => Ok(x.clone()),
            TransformKind::BicubicUpsample { .. } => {
                Ok(self.resampler.as_ref().expect("upsample resampler").apply(x))
            }
            TransformKind::Highpass { r0 } => ideal_highpass(x, r0),
            TransformKind::Lowpass { r0 } => ideal_lowpass(x, r0),
        }
    }

    fn adjoint(&self, y: &Image) -> Result<Image> {
        y.ensure_shape(self.output_shape())?;
        match self.kind {
            TransformKind::BicubicUpsample { .. } => {
                Ok(self.resampler.as_ref().expect("upsample resampler").adjoint(y))
            }
            // Real symmetric projections.
            _ => self.apply(y),
        }
    }
}

/// The three squared fidelity residuals of one guidance step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FidelityLosses {
    pub spatial: f64,
    pub high: f64,
    pub low: f64,
}

impl FidelityLosses {
    pub fn is_finite(&self) -> bool {
        self.spatial.is_finite() && self.high.is_finite() && self.low.is_finite()
    }
}

/// `L_s = ||psi_s(y) - psi_s(Ax)||^2`, `L_H`, `L_L` likewise with the ideal filters.
pub fn fidelity_losses(
    y: &Image,
    ax: &Image,
    psi_s: &FidelityTransform,
    r0: usize,
) -> Result<FidelityLosses> {
    ax.ensure_shape(y.shape())?;
    let spatial = psi_s.apply(y)?.sub(&psi_s.apply(ax)?).norm_sq();
    let (yh, yl) = frequency_split(y, r0)?;
    let (ah, al) = frequency_split(ax, r0)?;
    Ok(FidelityLosses {
        spatial,
        high: yh.sub(&ah).norm_sq(),
        low: yl.sub(&al).norm_sq(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Seed;

    fn random(shape: Shape, seed: u64) -> Image {
        Image::uniform(shape, &mut Seed(seed).rng())
    }

    #[test]
    fn radius_zero_edges() {
        let shape = Shape::new(16, 16, 2);
        let x = random(shape, 1);
        assert!(ideal_highpass(&x, 0).unwrap().max_abs_diff(&x) < 1e-12);
        assert!(ideal_lowpass(&x, 0).unwrap().norm() < 1e-12);
    }

    #[test]
    fn constant_image_is_pure_dc() {
        let c = Image::filled(Shape::new(9, 12, 1), 0.4);
        assert!(ideal_highpass(&c, 1).unwrap().norm() < 1e-12);
        assert!(ideal_lowpass(&c, 1).unwrap().max_abs_diff(&c) < 1e-12);
        assert!(ideal_lowpass(&c, 3).unwrap().max_abs_diff(&c) < 1e-12);
    }

    #[test]
    fn tie_at_radius_goes_high() {
        // r0 = 1 keeps exactly the DC term low; radius-1 ring is high.
        let m = FilterMask::new(8, 8, 1);
        assert_eq!(m.low_count(), 1);
        assert!(m.is_low(0, 0));
        assert!(!m.is_low(0, 1) && !m.is_low(7, 7));
        // r0 = 2 adds the full radius-1 ring: 3x3 block.
        assert_eq!(FilterMask::new(8, 8, 2).low_count(), 9);
        // Even size: the Nyquist index has radius N/2.
        let m = FilterMask::new(8, 8, 4);
        assert_eq!(m.low_count(), 49);
        assert!(!m.is_low(4, 0));
        assert_eq!(FilterMask::new(8, 8, 5).low_count(), 64);
    }

    #[test]
    fn centered_layout_puts_dc_in_middle() {
        let m = FilterMask::new(5, 6, 1);
        let c = m.centered();
        assert!(c[2 * 6 + 3]);
        assert_eq!(c.iter().filter(|b| **b).count(), 1);
    }

    #[test]
    fn split_matches_individual_filters() {
        let x = random(Shape::new(11, 16, 3), 4);
        let (h, l) = frequency_split(&x, 3).unwrap();
        assert!(h.max_abs_diff(&ideal_highpass(&x, 3).unwrap()) < 1e-13);
        assert!(l.max_abs_diff(&ideal_lowpass(&x, 3).unwrap()) < 1e-13);
    }

    #[test]
    fn upsample_basics() {
        let x = random(Shape::new(6, 5, 2), 2);
        assert_eq!(bicubic_upsample(&x, 1).unwrap(), x);
        let c = Image::filled(Shape::new(4, 4, 1), 0.3);
        let up = bicubic_upsample(&c, 4).unwrap();
        assert_eq!(up.shape(), Shape::new(16, 16, 1));
        assert!(up.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
        assert!(bicubic_upsample(&x, 0).is_err());
    }

    #[test]
    fn losses_edge_cases() {
        let shape = Shape::new(16, 16, 1);
        let y = random(shape, 5);
        let id = FidelityTransform::identity(shape);
        let zero = fidelity_losses(&y, &y, &id, 4).unwrap();
        assert_eq!(zero, FidelityLosses::default());
        let ax = random(shape, 6);
        let l = fidelity_losses(&y, &ax, &id, 4).unwrap();
        let direct = y.sub(&ax).norm_sq();
        assert!((l.spatial - direct).abs() <= 1e-12 * direct);
        assert!(((l.high + l.low) - direct).abs() <= 1e-10 * direct);
        assert!(fidelity_losses(&y, &Image::zeros(Shape::new(8, 8, 1)), &id, 4).is_err());
    }
}
