//! Prediction maps to scored corner candidates.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CornerKind, Point};
use crate::kernels::{nms_maxpool3, HeatActivation};
use crate::tensor::Tensor;

pub const DEFAULT_TOPK: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("{name} map has shape {got:?}, expected {want:?}")]
    Shape { name: &'static str, got: [usize; 3], want: [usize; 3] },
    #[error("{kind:?} heatmap has {got} categories but the {other:?} heatmap has {want}")]
    CategoryMismatch { kind: CornerKind, other: CornerKind, got: usize, want: usize },
    #[error("stride must be at least 1")]
    ZeroStride,
}

/// How a candidate's shift vector maps to its implied center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftEncoding {
    /// `corner ± s·exp(shift)`.
    #[default]
    Log,
    /// `corner ± s·shift`.
    Linear,
}

/// A decoded corner keypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerCandidate {
    pub kind: CornerKind,
    /// Heatmap cell `(row, col)`.
    pub cell: (usize, usize),
    pub refined_pos: Point,
    pub score: f64,
    pub category: u32,
    /// Shift read at `cell`; log-space unless decoded with [`ShiftEncoding::Linear`].
    pub cs: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// One corner kind's prediction maps.
#[derive(Debug, Clone, Copy)]
pub struct CornerMaps<'a> {
    /// `(C, H, W)` raw heatmap.
    pub heat: &'a Tensor,
    /// `(2, H, W)` local offsets, x then y.
    pub off: &'a Tensor,
    /// `(2, H, W)` shifts, x then y.
    pub shift: &'a Tensor,
    /// `(D, H, W)` embeddings.
    pub emb: Option<&'a Tensor>,
}

impl CornerMaps<'_> {
    fn validate(&self) -> Result<(), DecodeError> {
        let [_, h, w] = self.heat.shape();
        let check = |name, t: &Tensor, c: usize| {
            let want = [c, h, w];
            if t.shape() != want {
                Err(DecodeError::Shape { name, got: t.shape(), want })
            } else {
                Ok(())
            }
        };
        check("offset", self.off, 2)?;
        check("shift", self.shift, 2)?;
        if let Some(e) = self.emb {
            check("embedding", e, e.channels())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub stride: u32,
    pub topk: usize,
    pub activation: HeatActivation,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { stride: crate::encoder::DEFAULT_STRIDE, topk: DEFAULT_TOPK, activation: HeatActivation::default() }
    }
}

/// Flat indices of the `k` best cells, highest score first; equal scores
/// are ordered by flat index, i.e. by `(category, row, col)`.
pub fn top_k_indices(scores: &[f32], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    if k == 0 {
        return Vec::new();
    }
    // min-heap on rank holding the best k seen so far
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    for (i, &v) in scores.iter().enumerate() {
        let r = Ranked(v, i);
        if heap.len() < k {
            heap.push(Reverse(r));
        } else if r > heap.peek().unwrap().0 {
            heap.pop();
            heap.push(Reverse(r));
        }
    }
    let mut out: Vec<Ranked> = heap.into_iter().map(|Reverse(r)| r).collect();
    out.sort_unstable_by(|a, b| b.cmp(a));
    out.into_iter().map(|r| r.1).collect()
}

/// Score with its flat index; higher scores rank higher, then lower indices.
#[derive(Clone, Copy, PartialEq)]
struct Ranked(f32, usize);

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Scores, keypoint-NMS and top-k for one corner kind.
pub fn decode_kind(
    kind: CornerKind,
    maps: CornerMaps<'_>,
    cfg: &DecodeConfig,
) -> Result<Vec<CornerCandidate>, DecodeError> {
    if cfg.stride == 0 {
        return Err(DecodeError::ZeroStride);
    }
    maps.validate()?;
    let s = cfg.stride as f64;
    let scored = nms_maxpool3(&cfg.activation.apply(maps.heat));
    let n = scored.data().len();
    if cfg.topk > n {
        log::warn!("top-k {} exceeds the {} available {} cells; returning all", cfg.topk, n, kind.short_name());
    }
    let plane = scored.plane_len();
    let w = scored.width();
    Ok(top_k_indices(scored.data(), cfg.topk)
        .into_iter()
        .map(|flat| {
            let c = flat / plane;
            let (i, j) = ((flat % plane) / w, flat % w);
            let refined_pos = Point::new(
                (j as f64 + maps.off.get(0, i, j) as f64) * s,
                (i as f64 + maps.off.get(1, i, j) as f64) * s,
            );
            CornerCandidate {
                kind,
                cell: (i, j),
                refined_pos,
                score: scored.data()[flat] as f64,
                category: c as u32,
                cs: [maps.shift.get(0, i, j) as f64, maps.shift.get(1, i, j) as f64],
                embedding: maps.emb.map(|e| (0..e.channels()).map(|d| e.get(d, i, j) as f64).collect()),
            }
        })
        .collect())
}

/// Decodes both corner kinds; returns `(tl, br)` candidate lists.
pub fn decode_corners(
    tl: CornerMaps<'_>,
    br: CornerMaps<'_>,
    cfg: &DecodeConfig,
) -> Result<(Vec<CornerCandidate>, Vec<CornerCandidate>), DecodeError> {
    if tl.heat.shape() != br.heat.shape() {
        if tl.heat.channels() != br.heat.channels() {
            return Err(DecodeError::CategoryMismatch {
                kind: CornerKind::BottomRight,
                other: CornerKind::TopLeft,
                got: br.heat.channels(),
                want: tl.heat.channels(),
            });
        }
        return Err(DecodeError::Shape { name: "br heat", got: br.heat.shape(), want: tl.heat.shape() });
    }
    Ok((decode_kind(CornerKind::TopLeft, tl, cfg)?, decode_kind(CornerKind::BottomRight, br, cfg)?))
}

/// Center implied by a candidate's shift under the given encoding.
pub fn decode_center_with(c: &CornerCandidate, stride: f64, enc: ShiftEncoding) -> Point {
    let d = match enc {
        ShiftEncoding::Log => [stride * c.cs[0].exp(), stride * c.cs[1].exp()],
        ShiftEncoding::Linear => [stride * c.cs[0], stride * c.cs[1]],
    };
    match c.kind {
        CornerKind::TopLeft => Point::new(c.refined_pos.x + d[0], c.refined_pos.y + d[1]),
        CornerKind::BottomRight => Point::new(c.refined_pos.x - d[0], c.refined_pos.y - d[1]),
    }
}

/// Center implied by a candidate's log-space centripetal shift.
pub fn decode_center(c: &CornerCandidate, stride: f64) -> Point {
    decode_center_with(c, stride, ShiftEncoding::Log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode, EncoderConfig, RadiusPolicy, Scene, SceneObject};
    use crate::geometry::{box_center, BBox};
    use proptest::prelude::*;

    fn cand(kind: CornerKind, x: f64, y: f64, cs: [f64; 2]) -> CornerCandidate {
        CornerCandidate {
            kind,
            cell: (0, 0),
            refined_pos: Point::new(x, y),
            score: 1.0,
            category: 0,
            cs,
            embedding: None,
        }
    }

    fn exact_cfg(k: usize) -> DecodeConfig {
        DecodeConfig { stride: 4, topk: k, activation: HeatActivation::Identity }
    }

    #[test]
    fn decode_center_examples() {
        let c = cand(CornerKind::TopLeft, 8.0, 8.0, [4f64.ln(), 8f64.ln()]);
        let p = decode_center(&c, 4.0);
        assert!((p.x - 24.0).abs() < 1e-12 && (p.y - 40.0).abs() < 1e-12);
        let c = cand(CornerKind::TopLeft, 3.0, 5.0, [0.0, 0.0]);
        assert_eq!(decode_center(&c, 4.0), Point::new(7.0, 9.0));
        let c = cand(CornerKind::BottomRight, 40.0, 72.0, [4f64.ln(), 8f64.ln()]);
        let p = decode_center(&c, 4.0);
        assert!((p.x - 24.0).abs() < 1e-12 && (p.y - 40.0).abs() < 1e-12);
        let c = cand(CornerKind::BottomRight, 40.0, 72.0, [4.0, 8.0]);
        assert_eq!(decode_center_with(&c, 4.0, ShiftEncoding::Linear), Point::new(24.0, 40.0));
    }

    fn three_object_scene() -> Scene {
        let objs = [(10.3, 6.7, 50.1, 40.9, 0), (60.0, 70.0, 120.0, 110.0, 1), (5.5, 80.25, 30.75, 126.5, 0)];
        Scene::with_objects(
            128,
            128,
            objs.iter().map(|&(a, b, c, d, k)| SceneObject::new(BBox::new(a, b, c, d).unwrap(), k)).collect(),
        )
    }

    #[test]
    fn encoder_maps_round_trip() {
        let scene = three_object_scene();
        let t = encode(&scene, &EncoderConfig { stride: 4, radius: RadiusPolicy::Fixed(0) }).unwrap();
        let tl = CornerMaps { heat: &t.tl_heat, off: &t.tl_off, shift: &t.tl_cs, emb: None };
        let br = CornerMaps { heat: &t.br_heat, off: &t.br_off, shift: &t.br_cs, emb: None };
        let (tls, brs) = decode_corners(tl, br, &exact_cfg(100)).unwrap();
        assert_eq!(tls.len(), 100);
        for (cands, kind) in [(&tls, CornerKind::TopLeft), (&brs, CornerKind::BottomRight)] {
            let top: Vec<_> = cands[..3].iter().collect();
            assert!(top.iter().all(|c| c.score == 1.0));
            assert_eq!(cands[3].score, 0.0);
            for o in &scene.objects {
                let want = match kind {
                    CornerKind::TopLeft => o.bbox.top_left(),
                    CornerKind::BottomRight => o.bbox.bottom_right(),
                };
                let c = top
                    .iter()
                    .find(|c| (c.refined_pos.x - want.x).abs() < 1e-5 && (c.refined_pos.y - want.y).abs() < 1e-5)
                    .expect("corner recovered");
                assert_eq!(c.category, o.category);
                let ctr = decode_center(c, 4.0);
                let gt = box_center(&o.bbox);
                assert!((ctr.x - gt.x).abs() < 1e-4 && (ctr.y - gt.y).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn zero_heat_ties_are_lexicographic() {
        let heat = Tensor::zeros(2, 3, 3);
        let z = Tensor::zeros(2, 3, 3);
        let maps = CornerMaps { heat: &heat, off: &z, shift: &z, emb: None };
        let got = decode_kind(CornerKind::TopLeft, maps, &exact_cfg(5)).unwrap();
        let keys: Vec<_> = got.iter().map(|c| (c.category, c.cell)).collect();
        assert_eq!(keys, vec![(0, (0, 0)), (0, (0, 1)), (0, (0, 2)), (0, (1, 0)), (0, (1, 1))]);
        // k beyond the cell count returns everything
        let all = decode_kind(CornerKind::TopLeft, maps, &exact_cfg(100)).unwrap();
        assert_eq!(all.len(), 18);
        assert_eq!((all[17].category, all[17].cell), (1, (2, 2)));
    }

    #[test]
    fn single_peak_k1() {
        let mut heat = Tensor::zeros(3, 8, 8);
        heat.set(2, 5, 1, 0.7);
        let z = Tensor::zeros(2, 8, 8);
        let mut emb = Tensor::zeros(2, 8, 8);
        emb.set(1, 5, 1, 3.5);
        let maps = CornerMaps { heat: &heat, off: &z, shift: &z, emb: Some(&emb) };
        let got = decode_kind(CornerKind::BottomRight, maps, &exact_cfg(1)).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].category, got[0].cell), (2, (5, 1)));
        assert!((got[0].score - 0.7).abs() < 1e-7);
        assert_eq!(got[0].embedding, Some(vec![0.0, 3.5]));
        assert_eq!(got[0].refined_pos, Point::new(4.0, 20.0));
    }

    #[test]
    fn shape_errors() {
        let heat = Tensor::zeros(1, 4, 4);
        let bad = Tensor::zeros(2, 4, 5);
        let ok = Tensor::zeros(2, 4, 4);
        let maps = CornerMaps { heat: &heat, off: &bad, shift: &ok, emb: None };
        assert!(matches!(
            decode_kind(CornerKind::TopLeft, maps, &exact_cfg(3)),
            Err(DecodeError::Shape { name: "offset", .. })
        ));
        let other = Tensor::zeros(2, 4, 4);
        let a = CornerMaps { heat: &heat, off: &ok, shift: &ok, emb: None };
        let b = CornerMaps { heat: &other, off: &ok, shift: &ok, emb: None };
        assert!(matches!(decode_corners(a, b, &exact_cfg(3)), Err(DecodeError::CategoryMismatch { .. })));
    }

    proptest! {
        #[test]
        fn top_k_is_prefix_of_full_sort(vals in proptest::collection::vec(0u8..6, 1..80), k in 0usize..100) {
            let scores: Vec<f32> = vals.iter().map(|&v| v as f32 / 5.0).collect();
            let mut oracle: Vec<usize> = (0..scores.len()).collect();
            oracle.sort_by(|a, b| scores[*b].partial_cmp(&scores[*a]).unwrap().then(a.cmp(b)));
            oracle.truncate(k);
            prop_assert_eq!(top_k_indices(&scores, k), oracle);
        }

        #[test]
        fn encode_decode_center_round_trip(x in 0.0..400.0f64, y in 0.0..400.0f64, w in 0.5..200.0f64, h in 0.5..200.0f64) {
            let b = BBox::new(x, y, x + w, y + h).unwrap();
            let cs = crate::encoder::centripetal_shift(&b, 4.0).unwrap();
            let gt = box_center(&b);
            let tl = cand(CornerKind::TopLeft, b.tlx(), b.tly(), cs.tl);
            let br = cand(CornerKind::BottomRight, b.brx(), b.bry(), cs.br);
            for p in [decode_center(&tl, 4.0), decode_center(&br, 4.0)] {
                prop_assert!((p.x - gt.x).abs() < 1e-4 && (p.y - gt.y).abs() < 1e-4);
            }
        }
    }
}
