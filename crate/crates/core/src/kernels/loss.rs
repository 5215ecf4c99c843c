//! Training losses with analytic gradients.
//!
//! Smooth-L1 uses β = 1. The shift losses sum smooth-L1 over the two
//! coordinates of each corner's vector, add the two corners, and average
//! over the N ground-truth objects.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Weight on the guiding-shift term of the total objective.
pub const GUIDING_SHIFT_WEIGHT: f64 = 0.05;
pub const MASK_SIDE: usize = 28;
pub const MASK_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("loss needs at least one ground-truth object")]
    Empty,
    #[error("mask buffer of {0} values is not a whole number of {MASK_SIDE}x{MASK_SIDE} masks")]
    MaskShape(usize),
}

/// The tl and br 2-vectors of one object, `[x, y]` each.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShiftPair {
    pub tl: [f64; 2],
    pub br: [f64; 2],
}

impl ShiftPair {
    pub fn to_array(self) -> [f64; 4] {
        [self.tl[0], self.tl[1], self.br[0], self.br[1]]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { tl: [v[0], v[1]], br: [v[2], v[3]] }
    }
}

#[inline]
fn smooth_l1_term(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

#[inline]
fn smooth_l1_slope(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

/// Mean smooth-L1 over elements.
pub fn smooth_l1(pred: &[f64], gt: &[f64]) -> Result<f64, LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| smooth_l1_term(p - g)).sum();
    Ok(sum / pred.len() as f64)
}

pub fn smooth_l1_grad(pred: &[f64], gt: &[f64]) -> Result<Vec<f64>, LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::LengthMismatch(pred.len(), gt.len()));
    }
    let n = pred.len().max(1) as f64;
    Ok(pred.iter().zip(gt).map(|(p, g)| smooth_l1_slope(p - g) / n).collect())
}

fn check_pairs(pred: &[ShiftPair], gt: &[ShiftPair]) -> Result<(), LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::LengthMismatch(pred.len(), gt.len()));
    }
    if gt.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(())
}

fn shift_loss(pred: &[ShiftPair], gt: &[ShiftPair]) -> Result<f64, LossError> {
    check_pairs(pred, gt)?;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| p.to_array().into_iter().zip(g.to_array()))
        .map(|(p, g)| smooth_l1_term(p - g))
        .sum();
    Ok(sum / gt.len() as f64)
}

fn shift_loss_grad(pred: &[ShiftPair], gt: &[ShiftPair]) -> Result<Vec<ShiftPair>, LossError> {
    check_pairs(pred, gt)?;
    let n = gt.len() as f64;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let (p, g) = (p.to_array(), g.to_array());
            let d: Vec<f64> = (0..4).map(|k| smooth_l1_slope(p[k] - g[k]) / n).collect();
            ShiftPair::from_slice(&d)
        })
        .collect())
}

/// Centripetal-shift loss over N objects.
pub fn centripetal_loss(pred: &[ShiftPair], gt: &[ShiftPair]) -> Result<f64, LossError> {
    shift_loss(pred, gt)
}

pub fn centripetal_loss_grad(pred: &[ShiftPair], gt: &[ShiftPair]) -> Result<Vec<ShiftPair>, LossError> {
    shift_loss_grad(pred, gt)
}

/// Guiding-shift loss; same reduction as [`centripetal_loss`].
pub fn guiding_shift_loss(pred: &[ShiftPair], gt: &[ShiftPair]) -> Result<f64, LossError> {
    shift_loss(pred, gt)
}

pub fn guiding_shift_loss_grad(pred: &[ShiftPair], gt: &[ShiftPair]) -> Result<Vec<ShiftPair>, LossError> {
    shift_loss_grad(pred, gt)
}

fn mask_count(pred: &[f64], gt: &[f64]) -> Result<usize, LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::LengthMismatch(pred.len(), gt.len()));
    }
    let per = MASK_SIDE * MASK_SIDE;
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    if !pred.len().is_multiple_of(per) {
        return Err(LossError::MaskShape(pred.len()));
    }
    Ok(pred.len() / per)
}

/// Mean over proposals of the per-pixel mean binary cross-entropy.
/// Predictions are clamped to `[MASK_EPS, 1 - MASK_EPS]`.
pub fn mask_loss(pred: &[f64], gt: &[f64]) -> Result<f64, LossError> {
    let n = mask_count(pred, gt)?;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let p = p.clamp(MASK_EPS, 1.0 - MASK_EPS);
            -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / (n * MASK_SIDE * MASK_SIDE) as f64)
}

/// Gradient of [`mask_loss`]; zero where the clamp is active.
pub fn mask_loss_grad(pred: &[f64], gt: &[f64]) -> Result<Vec<f64>, LossError> {
    let n = mask_count(pred, gt)?;
    let scale = 1.0 / (n * MASK_SIDE * MASK_SIDE) as f64;
    Ok(pred
        .iter()
        .zip(gt)
        .map(
            |(&p, &g)| {
                if p <= MASK_EPS || p >= 1.0 - MASK_EPS {
                    0.0
                } else {
                    scale * (-g / p + (1.0 - g) / (1.0 - p))
                }
            },
        )
        .collect())
}

/// The scalar terms of the multi-task objective. `det` and `off` come from
/// an external heatmap/offset loss.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub det: f64,
    pub off: f64,
    pub guiding: f64,
    pub centripetal: f64,
    pub mask: f64,
}

pub fn total_loss(terms: &LossTerms, alpha: f64) -> f64 {
    terms.det + terms.off + alpha * terms.guiding + terms.centripetal + terms.mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_l1_closed_forms() {
        assert_eq!(smooth_l1(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(smooth_l1(&[0.5], &[0.0]).unwrap(), 0.125);
        assert_eq!(smooth_l1(&[2.0], &[0.0]).unwrap(), 1.5);
        assert_eq!(smooth_l1(&[-2.0, 0.5], &[0.0, 0.0]).unwrap(), (1.5 + 0.125) / 2.0);
        assert_eq!(smooth_l1(&[1.0], &[]), Err(LossError::LengthMismatch(1, 0)));
    }

    #[test]
    fn shift_losses_closed_forms() {
        let gt = [ShiftPair { tl: [1.0, 2.0], br: [1.0, 2.0] }];
        assert_eq!(centripetal_loss(&gt, &gt).unwrap(), 0.0);
        let pred = [ShiftPair { tl: [1.5, 2.5], br: [1.0, 2.0] }];
        assert!((centripetal_loss(&pred, &gt).unwrap() - 0.25).abs() < 1e-15);
        let pred = [ShiftPair { tl: [2.0, 2.0], br: [1.0, 2.0] }];
        assert!((guiding_shift_loss(&pred, &gt).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(centripetal_loss(&[], &[]), Err(LossError::Empty));
        assert_eq!(guiding_shift_loss(&pred, &[]), Err(LossError::LengthMismatch(1, 0)));
    }

    #[test]
    fn mask_loss_closed_forms() {
        let per = MASK_SIDE * MASK_SIDE;
        let gt: Vec<f64> = (0..2 * per).map(|k| (k % 3 == 0) as u8 as f64).collect();
        let pred: Vec<f64> = gt.iter().map(|&g| if g > 0.5 { 1.0 - MASK_EPS } else { MASK_EPS }).collect();
        assert!(mask_loss(&pred, &gt).unwrap() <= 2e-7);
        let half = vec![0.5; 2 * per];
        assert!((mask_loss(&half, &gt).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(mask_loss(&[], &[]), Err(LossError::Empty));
        assert_eq!(mask_loss(&[0.5; 10], &[0.0; 10]), Err(LossError::MaskShape(10)));
        // out-of-range predictions are clamped, not propagated as inf
        let hard = vec![0.0; per];
        let ones = vec![1.0; per];
        assert!(mask_loss(&hard, &ones).unwrap().is_finite());
    }

    #[test]
    fn total_loss_weights_only_the_guiding_term() {
        assert_eq!(total_loss(&LossTerms::default(), GUIDING_SHIFT_WEIGHT), 0.0);
        let ones = LossTerms { det: 1.0, off: 1.0, guiding: 1.0, centripetal: 1.0, mask: 1.0 };
        assert!((total_loss(&ones, GUIDING_SHIFT_WEIGHT) - 4.05).abs() < 1e-15);
        let bumped = LossTerms { guiding: 2.0, ..ones };
        let d = total_loss(&bumped, GUIDING_SHIFT_WEIGHT) - total_loss(&ones, GUIDING_SHIFT_WEIGHT);
        assert!((d - 0.05).abs() < 1e-15);
    }
}
