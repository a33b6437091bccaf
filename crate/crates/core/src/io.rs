//! Raster I/O: PNG and the portable pixmap family, 8- or 16-bit,
//! grayscale or RGB. Samples map linearly to `[0, 1]` on read and are
//! clamped and rounded on write.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{Image, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

pub fn read_image(path: &Path) -> Result<Image> {
    let wrap = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    let dynamic = image::open(path).map_err(wrap)?;
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let img = match &dynamic {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            let buf = dynamic.to_luma8();
            scaled(Shape::new(height, width, 1), buf.as_raw(), 255.0)
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let buf = dynamic.to_luma16();
            scaled(Shape::new(height, width, 1), buf.as_raw(), 65535.0)
        }
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            let buf = dynamic.to_rgb16();
            scaled(Shape::new(height, width, 3), buf.as_raw(), 65535.0)
        }
        _ => {
            let buf = dynamic.to_rgb8();
            scaled(Shape::new(height, width, 3), buf.as_raw(), 255.0)
        }
    };
    Ok(img)
}

fn scaled<T: Copy + Into<f64>>(shape: Shape, raw: &[T], max: f64) -> Image {
    let data = raw.iter().map(|v| (*v).into() / max).collect();
    Image::from_vec(shape, data).expect("decoder produced a full buffer")
}

/// Writes a 1- or 3-channel image; the format follows the file extension.
pub fn write_image(img: &Image, path: &Path, depth: BitDepth) -> Result<()> {
    let shape = img.shape();
    let (w, h) = (shape.width as u32, shape.height as u32);
    let quantize = |max: f64| -> Vec<f64> { img.data().iter().map(|v| (v.clamp(0.0, 1.0) * max).round()).collect() };
    let dynamic = match (shape.channels, depth) {
        (1, BitDepth::Eight) => {
            let raw = quantize(255.0).into_iter().map(|v| v as u8).collect();
            DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("size"))
        }
        (1, BitDepth::Sixteen) => {
            let raw = quantize(65535.0).into_iter().map(|v| v as u16).collect();
            DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("size"))
        }
        (3, BitDepth::Eight) => {
            let raw = quantize(255.0).into_iter().map(|v| v as u8).collect();
            DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("size"))
        }
        (3, BitDepth::Sixteen) => {
            let raw = quantize(65535.0).into_iter().map(|v| v as u16).collect();
            DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).expect("size"))
        }
        (c, _) => {
            return Err(Error::invalid("channels", format!("cannot write {c}-channel image")));
        }
    };
    dynamic.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
