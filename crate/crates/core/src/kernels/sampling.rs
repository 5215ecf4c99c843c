//! Bilinear sampling and the two kernels built on it: deformable
//! convolution (forward only) and RoIAlign.
//!
//! Feature cell `(i, j)` sits at continuous coordinate `(x = j, y = i)`.
//! Samples that fall outside the map read zero.

use thiserror::Error;

use crate::geometry::{BBox, Point};
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("kernel size {0} must be odd and non-zero")]
    EvenKernel(usize),
    #[error("weights have {weights} input channels but the feature map has {features}")]
    ChannelMismatch { weights: usize, features: usize },
    #[error("offset field shape {got:?} does not match expected {want:?}")]
    OffsetShape { got: [usize; 3], want: [usize; 3] },
    #[error("weight buffer has {got} values, expected {want}")]
    WeightLength { got: usize, want: usize },
    #[error("RoI {0:?} does not overlap the feature map")]
    DegenerateRoi([f64; 4]),
    #[error("invalid stride or output size")]
    InvalidParameter,
}

#[inline]
fn at(f: &Tensor, c: usize, i: i64, j: i64) -> f64 {
    if i < 0 || j < 0 || i >= f.height() as i64 || j >= f.width() as i64 {
        0.0
    } else {
        f.get(c, i as usize, j as usize) as f64
    }
}

/// Four-neighbour bilinear interpolation of channel `c` at `p` (feature cells).
pub fn bilinear_sample(f: &Tensor, c: usize, p: Point) -> f64 {
    if !p.x.is_finite() || !p.y.is_finite() {
        return 0.0;
    }
    let (h, w) = (f.height() as f64, f.width() as f64);
    if p.y <= -1.0 || p.x <= -1.0 || p.y >= h || p.x >= w {
        return 0.0;
    }
    let y0 = p.y.floor();
    let x0 = p.x.floor();
    let (ly, lx) = (p.y - y0, p.x - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let v00 = at(f, c, y0, x0);
    let v01 = at(f, c, y0, x0 + 1);
    let v10 = at(f, c, y0 + 1, x0);
    let v11 = at(f, c, y0 + 1, x0 + 1);
    (1.0 - ly) * ((1.0 - lx) * v00 + lx * v01) + ly * ((1.0 - lx) * v10 + lx * v11)
}

/// Convolution weights laid out `(out, in, k, k)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub data: Vec<f32>,
}

impl ConvWeights {
    pub fn new(out_channels: usize, in_channels: usize, kernel: usize, data: Vec<f32>) -> Result<Self, SamplingError> {
        if kernel == 0 || kernel.is_multiple_of(2) {
            return Err(SamplingError::EvenKernel(kernel));
        }
        let want = out_channels * in_channels * kernel * kernel;
        if data.len() != want {
            return Err(SamplingError::WeightLength { got: data.len(), want });
        }
        Ok(Self { out_channels, in_channels, kernel, data })
    }

    #[inline]
    pub fn get(&self, o: usize, ci: usize, a: usize, b: usize) -> f32 {
        self.data[((o * self.in_channels + ci) * self.kernel + a) * self.kernel + b]
    }

    pub fn taps(&self) -> usize {
        self.kernel * self.kernel
    }
}

/// Deformable convolution, stride 1, zero padding `k/2`.
///
/// `offsets` has shape `(2*k*k, H, W)`; taps are enumerated row-major
/// (`t = a*k + b`) and channel `2t` holds `dy`, `2t+1` holds `dx`, in
/// feature cells.
pub fn deform_conv_forward(f: &Tensor, w: &ConvWeights, offsets: &Tensor) -> Result<Tensor, SamplingError> {
    let [c_in, h, wd] = f.shape();
    if w.in_channels != c_in {
        return Err(SamplingError::ChannelMismatch { weights: w.in_channels, features: c_in });
    }
    let want = [2 * w.taps(), h, wd];
    if offsets.shape() != want {
        return Err(SamplingError::OffsetShape { got: offsets.shape(), want });
    }
    let k = w.kernel;
    let pad = (k / 2) as f64;
    let mut out = Tensor::zeros(w.out_channels, h, wd);
    let mut samples = vec![0.0f64; c_in * w.taps()];
    for i in 0..h {
        for j in 0..wd {
            for a in 0..k {
                for b in 0..k {
                    let t = a * k + b;
                    let dy = offsets.get(2 * t, i, j) as f64;
                    let dx = offsets.get(2 * t + 1, i, j) as f64;
                    let p = Point::new(j as f64 - pad + b as f64 + dx, i as f64 - pad + a as f64 + dy);
                    for ci in 0..c_in {
                        samples[ci * w.taps() + t] = bilinear_sample(f, ci, p);
                    }
                }
            }
            for o in 0..w.out_channels {
                let mut acc = 0.0f64;
                for ci in 0..c_in {
                    for t in 0..w.taps() {
                        acc += w.get(o, ci, t / k, t % k) as f64 * samples[ci * w.taps() + t];
                    }
                }
                out.set(o, i, j, acc as f32);
            }
        }
    }
    Ok(out)
}

/// Sampling positions of every tap at output cell `(i, j)`, in feature cells.
pub fn deform_sampling_points(offsets: &Tensor, kernel: usize, i: usize, j: usize) -> Vec<Point> {
    let pad = (kernel / 2) as f64;
    (0..kernel * kernel)
        .map(|t| {
            let (a, b) = (t / kernel, t % kernel);
            Point::new(
                j as f64 - pad + b as f64 + offsets.get(2 * t + 1, i, j) as f64,
                i as f64 - pad + a as f64 + offsets.get(2 * t, i, j) as f64,
            )
        })
        .collect()
}

/// RoIAlign over an image-coordinate RoI on a stride-`stride` feature map.
///
/// The RoI is divided continuously into `out × out` bins; each bin averages
/// a 2×2 grid of bilinear samples at its quarter points.
pub fn roi_align(f: &Tensor, roi: &BBox, stride: f64, out: usize) -> Result<Tensor, SamplingError> {
    if !(stride > 0.0) || out == 0 {
        return Err(SamplingError::InvalidParameter);
    }
    let (x0, y0) = (roi.tlx() / stride, roi.tly() / stride);
    let (x1, y1) = (roi.brx() / stride, roi.bry() / stride);
    let (h, w) = (f.height() as f64, f.width() as f64);
    if x1 <= -1.0 || y1 <= -1.0 || x0 >= w || y0 >= h {
        return Err(SamplingError::DegenerateRoi((*roi).into()));
    }
    let bin_w = (x1 - x0) / out as f64;
    let bin_h = (y1 - y0) / out as f64;
    let mut res = Tensor::zeros(f.channels(), out, out);
    for c in 0..f.channels() {
        for py in 0..out {
            for px in 0..out {
                let mut acc = 0.0;
                for sy in 0..2 {
                    for sx in 0..2 {
                        let y = y0 + (py as f64 + (sy as f64 + 0.5) / 2.0) * bin_h;
                        let x = x0 + (px as f64 + (sx as f64 + 0.5) / 2.0) * bin_w;
                        acc += bilinear_sample(f, c, Point::new(x, y));
                    }
                }
                res.set(c, py, px, (acc / 4.0) as f32);
            }
        }
    }
    Ok(res)
}
