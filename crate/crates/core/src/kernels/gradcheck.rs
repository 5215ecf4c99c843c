//! Central-difference gradient verification.

use super::loss::{self, LossError, ShiftPair, MASK_EPS};

/// A scalar function with an analytic gradient.
pub trait Differentiable {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Whether coordinate `i` is smooth on `[x_i - h, x_i + h]`.
    fn is_smooth(&self, _x: &[f64], _i: usize, _h: f64) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinates skipped because the function has a kink within `h`.
    pub excluded: Vec<usize>,
}

/// `|a - n| / max(|a|, |n|)`, falling back to the absolute error when both
/// magnitudes are below `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

pub fn grad_check<F: Differentiable + ?Sized>(f: &F, point: &[f64], h: f64) -> GradCheck {
    let analytic = f.gradient(point);
    let mut x = point.to_vec();
    let mut max_rel_error = 0.0f64;
    let mut excluded = Vec::new();
    for i in 0..point.len() {
        if !f.is_smooth(point, i, h) {
            excluded.push(i);
            continue;
        }
        let orig = x[i];
        x[i] = orig + h;
        let up = f.value(&x);
        x[i] = orig - h;
        let down = f.value(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        max_rel_error = max_rel_error.max(relative_error(analytic[i], numeric));
    }
    GradCheck { max_rel_error, excluded }
}

fn near_kink(d: f64, h: f64) -> bool {
    (d.abs() - 1.0).abs() <= h
}

/// Mean smooth-L1 against a fixed target.
pub struct SmoothL1Objective {
    pub target: Vec<f64>,
}

impl Differentiable for SmoothL1Objective {
    fn value(&self, x: &[f64]) -> f64 {
        loss::smooth_l1(x, &self.target).expect("length")
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        loss::smooth_l1_grad(x, &self.target).expect("length")
    }
    fn is_smooth(&self, x: &[f64], i: usize, h: f64) -> bool {
        !near_kink(x[i] - self.target[i], h)
    }
}

/// Which shift loss a [`ShiftObjective`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftLoss {
    Centripetal,
    Guiding,
}

/// A shift loss over flattened `[tl_x, tl_y, br_x, br_y]` per object.
pub struct ShiftObjective {
    pub kind: ShiftLoss,
    pub target: Vec<ShiftPair>,
}

impl ShiftObjective {
    fn unflatten(x: &[f64]) -> Vec<ShiftPair> {
        x.chunks_exact(4).map(ShiftPair::from_slice).collect()
    }

    fn flat_target(&self) -> Vec<f64> {
        self.target.iter().flat_map(|p| p.to_array()).collect()
    }
}

impl Differentiable for ShiftObjective {
    fn value(&self, x: &[f64]) -> f64 {
        let pred = Self::unflatten(x);
        let r: Result<f64, LossError> = match self.kind {
            ShiftLoss::Centripetal => loss::centripetal_loss(&pred, &self.target),
            ShiftLoss::Guiding => loss::guiding_shift_loss(&pred, &self.target),
        };
        r.expect("shapes")
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let pred = Self::unflatten(x);
        let g = match self.kind {
            ShiftLoss::Centripetal => loss::centripetal_loss_grad(&pred, &self.target),
            ShiftLoss::Guiding => loss::guiding_shift_loss_grad(&pred, &self.target),
        };
        g.expect("shapes").into_iter().flat_map(|p| p.to_array()).collect()
    }
    fn is_smooth(&self, x: &[f64], i: usize, h: f64) -> bool {
        !near_kink(x[i] - self.flat_target()[i], h)
    }
}

/// Mask cross-entropy against fixed binary targets.
pub struct MaskObjective {
    pub target: Vec<f64>,
}

impl Differentiable for MaskObjective {
    fn value(&self, x: &[f64]) -> f64 {
        loss::mask_loss(x, &self.target).expect("shapes")
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        loss::mask_loss_grad(x, &self.target).expect("shapes")
    }
    fn is_smooth(&self, x: &[f64], i: usize, h: f64) -> bool {
        x[i] - h > MASK_EPS && x[i] + h < 1.0 - MASK_EPS
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Square;
    impl Differentiable for Square {
        fn value(&self, x: &[f64]) -> f64 {
            x[0] * x[0]
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            vec![2.0 * x[0]]
        }
    }

    #[test]
    fn quadratic_is_exact() {
        let r = grad_check(&Square, &[1.0], 1e-4);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert!(r.excluded.is_empty());
    }

    #[test]
    fn smooth_l1_passes_away_from_kink() {
        let f = SmoothL1Objective { target: vec![0.0, 1.0, -2.0, 0.3] };
        let r = grad_check(&f, &[0.4, 3.2, -2.7, -1.5], 1e-4);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.excluded.is_empty());
    }

    #[test]
    fn kink_is_flagged() {
        let f = SmoothL1Objective { target: vec![0.0, 0.0] };
        let r = grad_check(&f, &[1.0, 0.2], 1e-4);
        assert_eq!(r.excluded, vec![0]);
        assert!(r.max_rel_error < 1e-4);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        struct Bad;
        impl Differentiable for Bad {
            fn value(&self, x: &[f64]) -> f64 {
                x[0].sin()
            }
            fn gradient(&self, x: &[f64]) -> Vec<f64> {
                vec![x[0].cos() * 1.01]
            }
        }
        assert!(grad_check(&Bad, &[0.3], 1e-4).max_rel_error > 5e-3);
    }
}
