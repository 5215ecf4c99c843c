use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxAxis {
    /// Normalize across categories at each cell.
    Channel,
    /// Normalize across all cells of each channel.
    Spatial,
}

/// Max-subtracted softmax along `axis`.
pub fn softmax_scores(h: &Tensor, axis: SoftmaxAxis) -> Tensor {
    match axis {
        SoftmaxAxis::Channel => channel_softmax(h, false),
        SoftmaxAxis::Spatial => spatial_softmax(h),
    }
}

/// Channel softmax with an extra implicit background logit fixed at zero:
/// `p_c = exp(x_c) / (1 + sum_k exp(x_k))`. With one channel this is the
/// logistic sigmoid.
pub fn softmax_with_background(h: &Tensor) -> Tensor {
    channel_softmax(h, true)
}

pub fn sigmoid(h: &Tensor) -> Tensor {
    let mut out = h.clone();
    for v in out.data_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    out
}

fn channel_softmax(h: &Tensor, background: bool) -> Tensor {
    let [c, rows, cols] = h.shape();
    let n = rows * cols;
    let mut out = h.clone();
    if c == 0 {
        return out;
    }
    let src = h.data();
    let dst = out.data_mut();
    let mut max = vec![if background { 0.0f32 } else { f32::NEG_INFINITY }; n];
    for ci in 0..c {
        for (m, &v) in max.iter_mut().zip(&src[ci * n..(ci + 1) * n]) {
            if v > *m {
                *m = v;
            }
        }
    }
    let mut sum: Vec<f32> = if background { max.iter().map(|m| (-m).exp()).collect() } else { vec![0.0; n] };
    for ci in 0..c {
        let plane = &mut dst[ci * n..(ci + 1) * n];
        for ((v, m), s) in plane.iter_mut().zip(&max).zip(sum.iter_mut()) {
            *v = (*v - m).exp();
            *s += *v;
        }
    }
    for ci in 0..c {
        for (v, s) in dst[ci * n..(ci + 1) * n].iter_mut().zip(&sum) {
            *v /= s;
        }
    }
    out
}

fn spatial_softmax(h: &Tensor) -> Tensor {
    let mut out = h.clone();
    for ci in 0..h.channels() {
        let plane = out.plane_mut(ci);
        let m = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut s = 0.0f64;
        for v in plane.iter_mut() {
            *v = (*v - m).exp();
            s += *v as f64;
        }
        let s = s as f32;
        for v in plane.iter_mut() {
            *v /= s;
        }
    }
    out
}

/// How raw heatmaps are turned into corner scores before keypoint NMS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatActivation {
    /// Channel softmax with an implicit zero background logit.
    #[default]
    BackgroundSoftmax,
    ChannelSoftmax,
    SpatialSoftmax,
    Sigmoid,
    /// Maps already hold probabilities (e.g. encoder targets).
    Identity,
}

impl HeatActivation {
    pub fn apply(self, h: &Tensor) -> Tensor {
        match self {
            Self::BackgroundSoftmax => softmax_with_background(h),
            Self::ChannelSoftmax => softmax_scores(h, SoftmaxAxis::Channel),
            Self::SpatialSoftmax => softmax_scores(h, SoftmaxAxis::Spatial),
            Self::Sigmoid => sigmoid(h),
            Self::Identity => h.clone(),
        }
    }
}
