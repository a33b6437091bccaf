//! Dense image and spectrum carriers, seeding, and the 2-D DFT.
//!
//! Images are stored row-major with interleaved channels:
//! `data[(row * width + col) * channels + channel]`.
//!
//! The DFT is unnormalized in the forward direction and scaled by
//! `1 / (H * W)` on the inverse, so `sum |fft2(x)|^2 = H * W * sum x^2`.

use std::cell::RefCell;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Imaginary residue above which an inverse transform is considered to have
/// come from a non-Hermitian spectrum.
pub const IMAGINARY_RESIDUE_LIMIT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Real-valued `H x W x C` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::invalid(
                "data",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for row in 0..shape.height {
            for col in 0..shape.width {
                for ch in 0..shape.channels {
                    data.push(f(row, col, ch));
                }
            }
        }
        Self { shape, data }
    }

    /// I.i.d. standard normal entries.
    pub fn standard_normal<R: rand::Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let data = (0..shape.len())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Self { shape, data }
    }

    /// I.i.d. uniform entries on `[0, 1)`.
    pub fn uniform<R: rand::Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let data = (0..shape.len()).map(|_| rng.random::<f64>()).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.shape.width + col) * self.shape.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    pub fn ensure_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: self.shape,
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Image {
        self.map(|v| v * factor)
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, factor: f64, other: &Image) -> Image {
        let mut out = self.clone();
        out.axpy(factor, other);
        out
    }

    /// In place `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Image) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn sub(&self, other: &Image) -> Image {
        self.add_scaled(-1.0, other)
    }

    pub fn add(&self, other: &Image) -> Image {
        self.add_scaled(1.0, other)
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Copy of one channel as a `H x W x 1` image.
    pub fn channel(&self, ch: usize) -> Image {
        let shape = Shape::new(self.shape.height, self.shape.width, 1);
        let data = self
            .data
            .iter()
            .skip(ch)
            .step_by(self.shape.channels)
            .copied()
            .collect();
        Image { shape, data }
    }
}

/// Complex `H x W x C` array with DC at `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    shape: Shape,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![Complex64::new(0.0, 0.0); shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::invalid(
                "data",
                format!("{} values for shape {shape}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, ch: usize) -> Complex64 {
        self.data[(u * self.shape.width + v) * self.shape.channels + ch]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Master seed for every stochastic operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed for stream `index` (splitmix64 finalizer).
    pub fn derive(self, index: u64) -> Seed {
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Inverse,
}

/// In-place 2-D transform of one `height x width` plane (row-major).
fn transform_plane(plane: &mut [Complex64], height: usize, width: usize, dir: Direction) {
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let (row_fft, col_fft) = match dir {
            Direction::Forward => (planner.plan_fft_forward(width), planner.plan_fft_forward(height)),
            Direction::Inverse => (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height)),
        };
        row_fft.process(plane);
        let mut column = vec![Complex64::new(0.0, 0.0); height];
        for col in 0..width {
            for row in 0..height {
                column[row] = plane[row * width + col];
            }
            col_fft.process(&mut column);
            for row in 0..height {
                plane[row * width + col] = column[row];
            }
        }
    });
}

/// Channel-wise unnormalized 2-D DFT.
pub fn fft2(img: &Image) -> Spectrum {
    let shape = img.shape();
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let mut out = Spectrum::zeros(shape);
    let mut plane = vec![Complex64::new(0.0, 0.0); h * w];
    for ch in 0..c {
        for (p, slot) in plane.iter_mut().enumerate() {
            *slot = Complex64::new(img.data[p * c + ch], 0.0);
        }
        transform_plane(&mut plane, h, w, Direction::Forward);
        for (p, value) in plane.iter().enumerate() {
            out.data[p * c + ch] = *value;
        }
    }
    out
}

/// Inverse of [`fft2`] without the residue check; returns the full complex field.
pub fn ifft2_complex(spec: &Spectrum) -> Spectrum {
    let shape = spec.shape();
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let scale = 1.0 / (h * w) as f64;
    let mut out = Spectrum::zeros(shape);
    let mut plane = vec![Complex64::new(0.0, 0.0); h * w];
    for ch in 0..c {
        for (p, slot) in plane.iter_mut().enumerate() {
            *slot = spec.data[p * c + ch];
        }
        transform_plane(&mut plane, h, w, Direction::Inverse);
        for (p, value) in plane.iter().enumerate() {
            out.data[p * c + ch] = value * scale;
        }
    }
    out
}

/// Inverse DFT returning the real part.
///
/// Fails when the largest imaginary component exceeds
/// [`IMAGINARY_RESIDUE_LIMIT`], which only happens for spectra that are not
/// conjugate-symmetric.
pub fn ifft2(spec: &Spectrum) -> Result<Image> {
    let field = ifft2_complex(spec);
    let residue = field.data.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if residue > IMAGINARY_RESIDUE_LIMIT {
        return Err(Error::ImaginaryResidue {
            residue,
            limit: IMAGINARY_RESIDUE_LIMIT,
        });
    }
    Ok(Image {
        shape: field.shape,
        data: field.data.iter().map(|z| z.re).collect(),
    })
}
