#![allow(dead_code)]

use nalgebra::DMatrix;
use safari_core::{Image, LinearOperator, Seed, Shape};

pub fn random_image(shape: Shape, seed: u64) -> Image {
    Image::uniform(shape, &mut Seed(seed).rng())
}

pub fn gaussian_image(shape: Shape, seed: u64) -> Image {
    Image::standard_normal(shape, &mut Seed(seed).rng())
}

pub fn dense<A: LinearOperator + ?Sized>(op: &A) -> DMatrix<f64> {
    let n_in = op.input_shape().len();
    let n_out = op.output_shape().len();
    DMatrix::from_row_slice(n_out, n_in, &op.to_dense().unwrap())
}

pub fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.iter().copied().fold(0.0, f64::max)
}

pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn as_vector(img: &Image) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(img.data())
}

pub fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central-difference gradient of a scalar function of an image.
pub fn fd_gradient(x: &Image, h: f64, f: impl Fn(&Image) -> f64) -> Image {
    let mut grad = Image::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Central-difference directional derivative of an image-valued map.
pub fn fd_directional(x: &Image, dir: &Image, h: f64, f: impl Fn(&Image) -> Image) -> Image {
    let up = f(&x.add_scaled(h, dir));
    let down = f(&x.add_scaled(-h, dir));
    up.sub(&down).scale(1.0 / (2.0 * h))
}

pub fn relative_error(a: &Image, b: &Image) -> f64 {
    a.sub(b).norm() / b.norm().max(1e-300)
}
