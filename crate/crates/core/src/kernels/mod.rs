//! Dense numeric kernels and losses.

mod activation;
pub mod gradcheck;
pub mod loss;
mod pooling;
mod sampling;

pub use activation::{sigmoid, softmax_scores, softmax_with_background, HeatActivation, SoftmaxAxis};
pub use gradcheck::{grad_check, relative_error, Differentiable, GradCheck};
pub use loss::{
    centripetal_loss, guiding_shift_loss, mask_loss, smooth_l1, total_loss, LossError, LossTerms, ShiftPair,
    GUIDING_SHIFT_WEIGHT,
};
pub use pooling::{
    corner_pool_br, corner_pool_tl, nms_maxpool3, pool_from_bottom, pool_from_left, pool_from_right, pool_from_top,
};
pub use sampling::{
    bilinear_sample, deform_conv_forward, deform_sampling_points, roi_align, ConvWeights, SamplingError,
};
