//! Corner-pair object detection post-processing.
//!
//! Target encoding, corner decoding, centripetal-shift matching with
//! baseline matchers, soft-NMS, COCO-style evaluation and a synthetic
//! crowded-scene benchmark.

pub mod decoder;
pub mod encoder;
pub mod evaluator;
pub mod geometry;
pub mod kernels;
pub mod matcher;
pub mod pipeline;
pub mod plot;
pub mod synthbench;
pub mod tensor;
