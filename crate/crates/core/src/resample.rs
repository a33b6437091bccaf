//! Separable bicubic resampling with precomputed sparse row weights.
//!
//! Output sample `j` of an axis resized by `scale = out_len / in_len` sits at
//! input coordinate `(j + 0.5) / scale - 0.5`. Taps that fall outside the
//! input are clamped to the border. When shrinking, the kernel is stretched
//! by `1 / scale` (anti-aliasing) and each row is renormalized to sum 1.

use crate::tensor::{Image, Shape};

/// Keys cubic convolution parameter.
pub const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_kernel(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Sparse `out_len x in_len` resampling matrix for one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisWeights {
    in_len: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl AxisWeights {
    pub fn bicubic(in_len: usize, out_len: usize) -> Self {
        let scale = out_len as f64 / in_len as f64;
        let support = if scale < 1.0 { 1.0 / scale } else { 1.0 };
        let radius = 2.0 * support;
        let rows = (0..out_len)
            .map(|j| {
                let center = (j as f64 + 0.5) / scale - 0.5;
                let lo = (center - radius).floor() as isize;
                let hi = (center + radius).ceil() as isize;
                let mut taps: Vec<(usize, f64)> = Vec::new();
                let mut total = 0.0;
                for k in lo..=hi {
                    let w = keys_kernel((k as f64 - center) / support);
                    if w == 0.0 {
                        continue;
                    }
                    total += w;
                    let idx = k.clamp(0, in_len as isize - 1) as usize;
                    match taps.iter_mut().find(|(i, _)| *i == idx) {
                        Some(tap) => tap.1 += w,
                        None => taps.push((idx, w)),
                    }
                }
                for tap in &mut taps {
                    tap.1 /= total;
                }
                taps
            })
            .collect();
        Self { in_len, rows }
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }
}

/// Separable 2-D bicubic resampler between two fixed shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampler {
    input: Shape,
    output: Shape,
    vertical: AxisWeights,
    horizontal: AxisWeights,
}

impl Resampler {
    pub fn bicubic(input: Shape, out_height: usize, out_width: usize) -> Self {
        Self {
            input,
            output: Shape::new(out_height, out_width, input.channels),
            vertical: AxisWeights::bicubic(input.height, out_height),
            horizontal: AxisWeights::bicubic(input.width, out_width),
        }
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_shape(&self) -> Shape {
        self.output
    }

    /// Horizontal pass then vertical pass.
    pub fn apply(&self, x: &Image) -> Image {
        let c = self.input.channels;
        let mid_shape = Shape::new(self.input.height, self.output.width, c);
        let mut mid = Image::zeros(mid_shape);
        for row in 0..self.input.height {
            for (col, taps) in self.horizontal.rows.iter().enumerate() {
                for ch in 0..c {
                    let v = taps.iter().map(|&(k, w)| w * x.get(row, k, ch)).sum();
                    mid.set(row, col, ch, v);
                }
            }
        }
        let mut out = Image::zeros(self.output);
        for (row, taps) in self.vertical.rows.iter().enumerate() {
            for col in 0..self.output.width {
                for ch in 0..c {
                    let v = taps.iter().map(|&(k, w)| w * mid.get(k, col, ch)).sum();
                    out.set(row, col, ch, v);
                }
            }
        }
        out
    }

    /// Transpose of [`Resampler::apply`]: scatter vertical, then horizontal.
    pub fn adjoint(&self, y: &Image) -> Image {
        let c = self.input.channels;
        let mid_shape = Shape::new(self.input.height, self.output.width, c);
        let mut mid = Image::zeros(mid_shape);
        for (row, taps) in self.vertical.rows.iter().enumerate() {
            for col in 0..self.output.width {
                for ch in 0..c {
                    let v = y.get(row, col, ch);
                    for &(k, w) in taps {
                        let i = mid.index(k, col, ch);
                        mid.data_mut()[i] += w * v;
                    }
                }
            }
        }
        let mut out = Image::zeros(self.input);
        for row in 0..self.input.height {
            for (col, taps) in self.horizontal.rows.iter().enumerate() {
                for ch in 0..c {
                    let v = mid.get(row, col, ch);
                    for &(k, w) in taps {
                        let i = out.index(row, k, ch);
                        out.data_mut()[i] += w * v;
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_kernel_values() {
        assert_eq!(keys_kernel(0.0), 1.0);
        assert_eq!(keys_kernel(1.0), 0.0);
        assert_eq!(keys_kernel(2.0), 0.0);
        assert!((keys_kernel(0.5) - 0.5625).abs() < 1e-15);
        assert!((keys_kernel(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_one() {
        for (n_in, n_out) in [(16, 4), (8, 32), (9, 3), (5, 5)] {
            let w = AxisWeights::bicubic(n_in, n_out);
            for row in w.rows() {
                let s: f64 = row.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unit_scale_is_identity() {
        let w = AxisWeights::bicubic(7, 7);
        for (j, row) in w.rows().iter().enumerate() {
            assert_eq!(row, &vec![(j, 1.0)]);
        }
    }
}
