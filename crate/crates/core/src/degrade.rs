//! Forward operators `A` and the additive Gaussian measurement model.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::index;

use crate::error::{Error, Result};
use crate::linop::LinearOperator;
use crate::resample::Resampler;
use crate::tensor::{Image, Seed, Shape};

const SIDECAR_MAGIC: &[u8; 8] = b"SAFARIOP";
const SIDECAR_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum DegradationKind {
    Identity,
    RandomMask { fraction_masked: f64 },
    BoxMask { top: usize, left: usize, size: usize },
    GaussianBlur { kernel_size: usize, sigma: f64 },
    BicubicDownsample { factor: usize },
}

impl DegradationKind {
    pub fn name(&self) -> &'static str {
        match self {
            DegradationKind::Identity => "identity",
            DegradationKind::RandomMask { .. } => "random-mask",
            DegradationKind::BoxMask { .. } => "box-mask",
            DegradationKind::GaussianBlur { .. } => "gaussian-blur",
            DegradationKind::BicubicDownsample { .. } => "bicubic-downsample",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            DegradationKind::Identity => 0,
            DegradationKind::RandomMask { .. } => 1,
            DegradationKind::BoxMask { .. } => 2,
            DegradationKind::GaussianBlur { .. } => 3,
            DegradationKind::BicubicDownsample { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Identity,
    /// One flag per pixel, `true` where the pixel is kept.
    Mask(Vec<bool>),
    /// Normalized 1-D taps; the 2-D kernel is their outer product.
    Blur(Vec<f64>),
    Resample(Resampler),
}

/// A linear forward operator with exact adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDegradation {
    kind: DegradationKind,
    input: Shape,
    output: Shape,
    repr: Repr,
}

impl LinearDegradation {
    pub fn identity(shape: Shape) -> Self {
        Self {
            kind: DegradationKind::Identity,
            input: shape,
            output: shape,
            repr: Repr::Identity,
        }
    }

    /// Zeroes exactly `round(fraction_masked * H * W)` whole pixels.
    pub fn random_mask(shape: Shape, fraction_masked: f64, seed: Seed) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction_masked) {
            return Err(Error::invalid(
                "fraction_masked",
                format!("{fraction_masked} not in [0, 1)"),
            ));
        }
        let pixels = shape.pixels();
        let count = (fraction_masked * pixels as f64).round() as usize;
        let mut keep = vec![true; pixels];
        let mut rng = seed.rng();
        for p in index::sample(&mut rng, pixels, count) {
            keep[p] = false;
        }
        Ok(Self {
            kind: DegradationKind::RandomMask { fraction_masked },
            input: shape,
            output: shape,
            repr: Repr::Mask(keep),
        })
    }

    /// Zeroes one `box_size x box_size` square whose top-left corner is
    /// uniform over all positions that keep it inside the image.
    pub fn box_mask(shape: Shape, box_size: usize, seed: Seed) -> Result<Self> {
        if box_size > shape.height.min(shape.width) {
            return Err(Error::invalid(
                "box_size",
                format!("{box_size} exceeds image {shape}"),
            ));
        }
        let mut rng = seed.rng();
        let top = rand::Rng::random_range(&mut rng, 0..=shape.height - box_size);
        let left = rand::Rng::random_range(&mut rng, 0..=shape.width - box_size);
        Ok(Self::box_mask_at(shape, top, left, box_size))
    }

    fn box_mask_at(shape: Shape, top: usize, left: usize, size: usize) -> Self {
        let mut keep = vec![true; shape.pixels()];
        for row in top..top + size {
            for col in left..left + size {
                keep[row * shape.width + col] = false;
            }
        }
        Self {
            kind: DegradationKind::BoxMask { top, left, size },
            input: shape,
            output: shape,
            repr: Repr::Mask(keep),
        }
    }

    /// Separable Gaussian blur with periodic boundaries.
    pub fn gaussian_blur(shape: Shape, kernel_size: usize, sigma: f64) -> Result<Self> {
        if kernel_size % 2 == 0 {
            return Err(Error::invalid("kernel_size", format!("{kernel_size} is not odd")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma_kernel", format!("{sigma} must be positive")));
        }
        Ok(Self {
            kind: DegradationKind::GaussianBlur { kernel_size, sigma },
            input: shape,
            output: shape,
            repr: Repr::Blur(gaussian_taps(kernel_size, sigma)),
        })
    }

    /// Anti-aliased bicubic shrink by an integer factor.
    pub fn bicubic_downsample(shape: Shape, factor: usize) -> Result<Self> {
        if factor == 0 || shape.height % factor != 0 || shape.width % factor != 0 {
            return Err(Error::invalid(
                "factor",
                format!("{shape} not divisible by {factor}"),
            ));
        }
        let resampler = Resampler::bicubic(shape, shape.height / factor, shape.width / factor);
        Ok(Self {
            kind: DegradationKind::BicubicDownsample { factor },
            input: shape,
            output: resampler.output_shape(),
            repr: Repr::Resample(resampler),
        })
    }

    pub fn kind(&self) -> &DegradationKind {
        &self.kind
    }

    /// Per-pixel keep flags for mask operators.
    pub fn mask(&self) -> Option<&[bool]> {
        match &self.repr {
            Repr::Mask(keep) => Some(keep),
            _ => None,
        }
    }

    pub fn masked_pixels(&self) -> usize {
        self.mask().map_or(0, |keep| keep.iter().filter(|k| !**k).count())
    }

    /// Normalized 1-D blur taps (the 2-D kernel is their outer product).
    pub fn blur_taps(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Blur(taps) => Some(taps),
            _ => None,
        }
    }

    /// `y = A x + sigma z` with `z` standard normal drawn from `seed`.
    pub fn measure(&self, x0: &Image, noise: NoiseModel, seed: Seed) -> Result<Image> {
        let mut y = self.apply(x0)?;
        if noise.sigma() > 0.0 {
            let mut rng = seed.rng();
            let z = Image::standard_normal(y.shape(), &mut rng);
            y.axpy(noise.sigma(), &z);
        }
        Ok(y)
    }

    pub fn operator_norm(&self, iters: usize, seed: Seed) -> Result<f64> {
        if iters == 0 {
            return Err(Error::invalid("iters", "must be at least 1"));
        }
        self.spectral_norm(iters, seed)
    }

    pub fn write_sidecar<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SIDECAR_MAGIC)?;
        w.write_u8(SIDECAR_VERSION)?;
        w.write_u8(self.kind.tag())?;
        for dim in [self.input.height, self.input.width, self.input.channels] {
            w.write_u32::<LittleEndian>(dim as u32)?;
        }
        match &self.kind {
            DegradationKind::Identity => {}
            DegradationKind::RandomMask { fraction_masked } => {
                w.write_f64::<LittleEndian>(*fraction_masked)?;
            }
            DegradationKind::BoxMask { top, left, size } => {
                for v in [top, left, size] {
                    w.write_u32::<LittleEndian>(*v as u32)?;
                }
            }
            DegradationKind::GaussianBlur { kernel_size, sigma } => {
                w.write_u32::<LittleEndian>(*kernel_size as u32)?;
                w.write_f64::<LittleEndian>(*sigma)?;
            }
            DegradationKind::BicubicDownsample { factor } => {
                w.write_u32::<LittleEndian>(*factor as u32)?;
            }
        }
        if let Some(keep) = self.mask() {
            w.write_u64::<LittleEndian>(keep.len() as u64)?;
            let mut bytes = vec![0u8; keep.len().div_ceil(8)];
            for (i, k) in keep.iter().enumerate() {
                if *k {
                    bytes[i / 8] |= 1 << (i % 8);
                }
            }
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn read_sidecar<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SIDECAR_MAGIC {
            return Err(Error::Sidecar("bad magic".into()));
        }
        let version = r.read_u8()?;
        if version != SIDECAR_VERSION {
            return Err(Error::Sidecar(format!("unsupported version {version}")));
        }
        let tag = r.read_u8()?;
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = r.read_u32::<LittleEndian>()? as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2]);
        let mut op = match tag {
            0 => Self::identity(shape),
            1 => {
                let fraction_masked = r.read_f64::<LittleEndian>()?;
                Self {
                    kind: DegradationKind::RandomMask { fraction_masked },
                    input: shape,
                    output: shape,
                    repr: Repr::Mask(Vec::new()),
                }
            }
            2 => {
                let top = r.read_u32::<LittleEndian>()? as usize;
                let left = r.read_u32::<LittleEndian>()? as usize;
                let size = r.read_u32::<LittleEndian>()? as usize;
                if top + size > shape.height || left + size > shape.width {
                    return Err(Error::Sidecar("box outside image".into()));
                }
                Self::box_mask_at(shape, top, left, size)
            }
            3 => {
                let kernel_size = r.read_u32::<LittleEndian>()? as usize;
                let sigma = r.read_f64::<LittleEndian>()?;
                Self::gaussian_blur(shape, kernel_size, sigma)?
            }
            4 => Self::bicubic_downsample(shape, r.read_u32::<LittleEndian>()? as usize)?,
            other => return Err(Error::Sidecar(format!("unknown kind tag {other}"))),
        };
        if matches!(op.repr, Repr::Mask(_)) {
            let len = r.read_u64::<LittleEndian>()? as usize;
            if len != shape.pixels() {
                return Err(Error::Sidecar(format!("bitmap length {len} for {shape}")));
            }
            let mut bytes = vec![0u8; len.div_ceil(8)];
            r.read_exact(&mut bytes)?;
            let keep: Vec<bool> = (0..len).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect();
            if let Repr::Mask(stored) = &op.repr {
                if !stored.is_empty() && *stored != keep {
                    return Err(Error::Sidecar("bitmap disagrees with box parameters".into()));
                }
            }
            op.repr = Repr::Mask(keep);
        }
        Ok(op)
    }

    fn mask_apply(&self, keep: &[bool], x: &Image) -> Image {
        let c = self.input.channels;
        let mut out = x.clone();
        for (p, k) in keep.iter().enumerate() {
            if !k {
                out.data_mut()[p * c..(p + 1) * c].fill(0.0);
            }
        }
        out
    }
}

impl LinearOperator for LinearDegradation {
    fn input_shape(&self) -> Shape {
        self.input
    }

    fn output_shape(&self) -> Shape {
        self.output
    }

    fn apply(&self, x: &Image) -> Result<Image> {
        x.ensure_shape(self.input)?;
        Ok(match &self.repr {
            Repr::Identity => x.clone(),
            Repr::Mask(keep) => self.mask_apply(keep, x),
            Repr::Blur(taps) => circular_blur(x, taps, false),
            Repr::Resample(r) => r.apply(x),
        })
    }

    fn adjoint(&self, y: &Image) -> Result<Image> {
        y.ensure_shape(self.output)?;
        Ok(match &self.repr {
            Repr::Identity => y.clone(),
            Repr::Mask(keep) => self.mask_apply(keep, y),
            Repr::Blur(taps) => circular_blur(y, taps, true),
            Repr::Resample(r) => r.adjoint(y),
        })
    }
}

fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Periodic separable convolution; `transpose` correlates instead.
fn circular_blur(x: &Image, taps: &[f64], transpose: bool) -> Image {
    let shape = x.shape();
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let half = (taps.len() / 2) as isize;
    let offset = |i: usize, m: usize, n: usize| -> usize {
        let shift = m as isize - half;
        let j = if transpose { i as isize + shift } else { i as isize - shift };
        j.rem_euclid(n as isize) as usize
    };
    let mut mid = Image::zeros(shape);
    for row in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let v = taps
                    .iter()
                    .enumerate()
                    .map(|(m, g)| g * x.get(row, offset(col, m, w), ch))
                    .sum();
                mid.set(row, col, ch, v);
            }
        }
    }
    let mut out = Image::zeros(shape);
    for row in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let v = taps
                    .iter()
                    .enumerate()
                    .map(|(m, g)| g * mid.get(offset(row, m, h), col, ch))
                    .sum();
                out.set(row, col, ch, v);
            }
        }
    }
    out
}

/// Additive i.i.d. Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("{sigma} must be >= 0")));
        }
        Ok(Self { sigma })
    }

    pub fn noiseless() -> Self {
        Self { sigma: 0.0 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}
