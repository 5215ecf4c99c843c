use crate::tensor::{Tensor, TensorError};

/// Each cell becomes the max of itself and every cell below it in its column.
pub fn pool_from_bottom(f: &Tensor) -> Tensor {
    let mut out = f.clone();
    let [c, h, w] = f.shape();
    for ci in 0..c {
        let plane = out.plane_mut(ci);
        for i in (0..h.saturating_sub(1)).rev() {
            for j in 0..w {
                let below = plane[(i + 1) * w + j];
                let cur = &mut plane[i * w + j];
                if below > *cur {
                    *cur = below;
                }
            }
        }
    }
    out
}

/// Each cell becomes the max of itself and every cell above it.
pub fn pool_from_top(f: &Tensor) -> Tensor {
    let mut out = f.clone();
    let [c, h, w] = f.shape();
    for ci in 0..c {
        let plane = out.plane_mut(ci);
        for i in 1..h {
            for j in 0..w {
                let above = plane[(i - 1) * w + j];
                let cur = &mut plane[i * w + j];
                if above > *cur {
                    *cur = above;
                }
            }
        }
    }
    out
}

/// Each cell becomes the max of itself and every cell to its right.
pub fn pool_from_right(f: &Tensor) -> Tensor {
    let mut out = f.clone();
    let [c, h, w] = f.shape();
    for ci in 0..c {
        for row in out.plane_mut(ci).chunks_exact_mut(w).take(h) {
            for j in (0..w.saturating_sub(1)).rev() {
                if row[j + 1] > row[j] {
                    row[j] = row[j + 1];
                }
            }
        }
    }
    out
}

/// Each cell becomes the max of itself and every cell to its left.
pub fn pool_from_left(f: &Tensor) -> Tensor {
    let mut out = f.clone();
    let [c, h, w] = f.shape();
    for ci in 0..c {
        for row in out.plane_mut(ci).chunks_exact_mut(w).take(h) {
            for j in 1..w {
                if row[j - 1] > row[j] {
                    row[j] = row[j - 1];
                }
            }
        }
    }
    out
}

fn add(a: Tensor, b: &Tensor) -> Tensor {
    let mut a = a;
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += *y;
    }
    a
}

/// Top-left corner pooling: `max_{i'>=i} top[c,i',j] + max_{j'>=j} left[c,i,j']`.
pub fn corner_pool_tl(top: &Tensor, left: &Tensor) -> Result<Tensor, TensorError> {
    top.ensure_same_shape(left)?;
    Ok(add(pool_from_bottom(top), &pool_from_right(left)))
}

/// Bottom-right corner pooling: `max_{i'<=i} bottom[c,i',j] + max_{j'<=j} right[c,i,j']`.
pub fn corner_pool_br(bottom: &Tensor, right: &Tensor) -> Result<Tensor, TensorError> {
    bottom.ensure_same_shape(right)?;
    Ok(add(pool_from_top(bottom), &pool_from_left(right)))
}

/// Keypoint NMS: a cell survives iff it equals the max of its clipped 3×3
/// neighbourhood (ties survive); all other cells become zero.
pub fn nms_maxpool3(h: &Tensor) -> Tensor {
    let [c, rows, cols] = h.shape();
    let mut out = Tensor::zeros(c, rows, cols);
    if rows == 0 || cols == 0 {
        return out;
    }
    // separable: 3-wide row max, then 3-tall column max of that
    let mut row_max = vec![0.0f32; rows * cols];
    for ci in 0..c {
        let src = h.plane(ci);
        for i in 0..rows {
            let r = &src[i * cols..(i + 1) * cols];
            let m = &mut row_max[i * cols..(i + 1) * cols];
            for j in 0..cols {
                let lo = j.saturating_sub(1);
                let hi = (j + 1).min(cols - 1);
                let mut v = r[lo];
                for &x in &r[lo + 1..=hi] {
                    if x > v {
                        v = x;
                    }
                }
                m[j] = v;
            }
        }
        let dst = out.plane_mut(ci);
        for i in 0..rows {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(rows - 1);
            for j in 0..cols {
                let v = src[i * cols + j];
                let mut m = row_max[lo * cols + j];
                for ii in lo + 1..=hi {
                    let x = row_max[ii * cols + j];
                    if x > m {
                        m = x;
                    }
                }
                if !(m > v) {
                    dst[i * cols + j] = v;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_tl(t: &Tensor, l: &Tensor) -> Tensor {
        let [c, h, w] = t.shape();
        Tensor::from_fn([c, h, w], |ci, i, j| {
            let down = (i..h).map(|ii| t.get(ci, ii, j)).fold(f32::NEG_INFINITY, f32::max);
            let right = (j..w).map(|jj| l.get(ci, i, jj)).fold(f32::NEG_INFINITY, f32::max);
            down + right
        })
    }

    fn brute_br(b: &Tensor, r: &Tensor) -> Tensor {
        let [c, h, w] = b.shape();
        Tensor::from_fn([c, h, w], |ci, i, j| {
            let up = (0..=i).map(|ii| b.get(ci, ii, j)).fold(f32::NEG_INFINITY, f32::max);
            let left = (0..=j).map(|jj| r.get(ci, i, jj)).fold(f32::NEG_INFINITY, f32::max);
            up + left
        })
    }

    fn brute_nms(h: &Tensor) -> Tensor {
        let [c, rows, cols] = h.shape();
        Tensor::from_fn([c, rows, cols], |ci, i, j| {
            let v = h.get(ci, i, j);
            let mut m = f32::NEG_INFINITY;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii >= 0 && jj >= 0 && (ii as usize) < rows && (jj as usize) < cols {
                        m = m.max(h.get(ci, ii as usize, jj as usize));
                    }
                }
            }
            if v == m {
                v
            } else {
                0.0
            }
        })
    }

    fn tensor(c: usize, h: usize, w: usize, vals: &[f32]) -> Tensor {
        Tensor::from_vec([c, h, w], vals.to_vec()).unwrap()
    }

    #[test]
    fn constant_inputs_give_twice_the_constant() {
        let a = Tensor::full(2, 4, 5, 1.5);
        let out = corner_pool_tl(&a, &a).unwrap();
        assert!(out.data().iter().all(|&v| v == 3.0));
        let out = corner_pool_br(&a, &a).unwrap();
        assert!(out.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn single_peak_propagates_up_its_column() {
        let mut t = Tensor::zeros(1, 5, 5);
        t.set(0, 3, 2, 7.0);
        let out = corner_pool_tl(&t, &Tensor::zeros(1, 5, 5)).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = if j == 2 && i <= 3 { 7.0 } else { 0.0 };
                assert_eq!(out.get(0, i, j), want, "({i},{j})");
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(corner_pool_tl(&Tensor::zeros(1, 3, 3), &Tensor::zeros(1, 3, 4)).is_err());
        assert!(corner_pool_br(&Tensor::zeros(2, 3, 3), &Tensor::zeros(1, 3, 3)).is_err());
    }

    #[test]
    fn nms_plateau_and_single_peak() {
        let flat = Tensor::full(1, 4, 4, 0.3);
        assert_eq!(nms_maxpool3(&flat), flat);
        let mut peak = Tensor::full(1, 5, 5, 0.1);
        peak.set(0, 2, 3, 0.9);
        let out = nms_maxpool3(&peak);
        // only cells farther than one step from the peak keep their 0.1
        assert_eq!(out.get(0, 2, 3), 0.9);
        assert_eq!(out.get(0, 1, 2), 0.0);
        assert_eq!(out.get(0, 0, 0), 0.1);
    }

    #[test]
    fn ramp_keeps_only_the_corner() {
        let ramp = Tensor::from_fn([1, 6, 7], |_, i, j| 100.0 - (i * 7 + j) as f32);
        let out = nms_maxpool3(&ramp);
        assert_eq!(out, brute_nms(&ramp));
        let survivors: Vec<_> = out.data().iter().enumerate().filter(|(_, v)| **v != 0.0).collect();
        assert_eq!(survivors, vec![(0, &100.0)]);
    }

    #[test]
    fn nms_handles_one_by_one_and_thin_maps() {
        let t = tensor(1, 1, 1, &[0.4]);
        assert_eq!(nms_maxpool3(&t), t);
        let t = tensor(1, 1, 4, &[0.1, 0.5, 0.2, 0.3]);
        assert_eq!(nms_maxpool3(&t).data(), &[0.0, 0.5, 0.0, 0.3]);
    }

    fn arb_tensor(c: usize, h: usize, w: usize) -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(-5.0f32..5.0, c * h * w).prop_map(move |v| Tensor::from_vec([c, h, w], v).unwrap())
    }

    proptest! {
        #[test]
        fn corner_pools_match_brute_force((a, b) in (arb_tensor(2, 8, 8), arb_tensor(2, 8, 8))) {
            prop_assert_eq!(corner_pool_tl(&a, &b).unwrap(), brute_tl(&a, &b));
            prop_assert_eq!(corner_pool_br(&a, &b).unwrap(), brute_br(&a, &b));
        }

        #[test]
        fn scans_are_idempotent_and_monotone(a in arb_tensor(1, 6, 5), d in proptest::collection::vec(0.0f32..2.0, 30)) {
            let b = Tensor::from_vec([1, 6, 5], a.data().iter().zip(&d).map(|(x, e)| x + e).collect()).unwrap();
            for scan in [pool_from_bottom, pool_from_top, pool_from_left, pool_from_right] {
                let once = scan(&a);
                prop_assert_eq!(scan(&once), once.clone());
                let hi = scan(&b);
                prop_assert!(once.data().iter().zip(hi.data()).all(|(x, y)| x <= y));
            }
        }

        #[test]
        fn nms_matches_brute_force(a in arb_tensor(2, 7, 6)) {
            prop_assert_eq!(nms_maxpool3(&a), brute_nms(&a));
        }
    }
}
