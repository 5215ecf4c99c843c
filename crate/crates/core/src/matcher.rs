//! Corner pairing, centripetal re-scoring, baseline matchers and soft-NMS.
//!
//! Every strategy runs the same pipeline: enumerate same-category pairs
//! with the top-left corner strictly up-left of the bottom-right corner,
//! score each pair by the geometric mean of its corner scores, apply the
//! strategy's acceptance rule or weight, run class-wise Gaussian soft-NMS,
//! and keep the best `final_keep` boxes with positive score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{decode_center_with, CornerCandidate, ShiftEncoding};
use crate::geometry::{central_region, iou, select_mu, BBox, Detection, GeometryError, MuPolicy, Point};

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("strategy {0:?} needs corner embeddings")]
    MissingEmbeddings(Strategy),
    #[error("strategy {strategy:?} needs {want}-d embeddings, got {got}")]
    EmbeddingDim { strategy: Strategy, want: usize, got: usize },
    #[error("center validation needs center candidates")]
    MissingCenters,
    #[error("final_keep must be positive")]
    ZeroKeep,
    #[error("soft-NMS sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Centripetal,
    CenterRegression,
    #[serde(rename = "associative_1d")]
    Associative1d,
    #[serde(rename = "associative_2d")]
    Associative2d,
    CenterValidation,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Centripetal,
        Strategy::CenterRegression,
        Strategy::Associative1d,
        Strategy::Associative2d,
        Strategy::CenterValidation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Centripetal => "centripetal",
            Self::CenterRegression => "center_regression",
            Self::Associative1d => "associative_1d",
            Self::Associative2d => "associative_2d",
            Self::CenterValidation => "center_validation",
        }
    }

    pub fn embedding_dim(self) -> Option<usize> {
        match self {
            Self::Associative1d => Some(1),
            Self::Associative2d => Some(2),
            _ => None,
        }
    }
}

/// Accepts the canonical names plus `associative` for the 1-d matcher.
impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "associative" {
            return Ok(Self::Associative1d);
        }
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// Numerator of the region weight's exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightForm {
    /// `|Δx|·|Δy|`.
    #[default]
    Product,
    /// `Δx² + Δy²`.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub mu_policy: MuPolicy,
    pub soft_nms_sigma: f64,
    pub final_keep: usize,
    pub ae_threshold: f64,
    pub strategy: Strategy,
    pub weight_form: WeightForm,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            mu_policy: MuPolicy::default(),
            soft_nms_sigma: 0.5,
            final_keep: 100,
            ae_threshold: 0.5,
            strategy: Strategy::Centripetal,
            weight_form: WeightForm::Product,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        self.mu_policy.validate()?;
        if self.final_keep == 0 {
            return Err(MatchError::ZeroKeep);
        }
        if !(self.soft_nms_sigma > 0.0) {
            return Err(MatchError::BadSigma(self.soft_nms_sigma));
        }
        Ok(())
    }
}

/// A detected center keypoint for the center-validation baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterCandidate {
    pub pos: Point,
    pub category: u32,
    #[serde(default = "one")]
    pub score: f64,
}

fn one() -> f64 {
    1.0
}

/// A matched box with its re-scoring weight and decoded centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(flatten)]
    pub detection: Detection,
    pub weight: f64,
    #[serde(skip)]
    pub tl_center: Option<Point>,
    #[serde(skip)]
    pub br_center: Option<Point>,
}

/// A same-category, correctly ordered corner pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePair {
    pub tl: usize,
    pub br: usize,
    pub bbox: BBox,
    pub category: u32,
    /// `sqrt(score_tl · score_br)`.
    pub score: f64,
}

/// All pairs with matching category and `tlx < brx`, `tly < bry`, in
/// `(tl, br)` index order.
pub fn pair_candidates(tls: &[CornerCandidate], brs: &[CornerCandidate]) -> Vec<CandidatePair> {
    let mut out = Vec::new();
    for (a, t) in tls.iter().enumerate() {
        for (b, r) in brs.iter().enumerate() {
            if t.category != r.category {
                continue;
            }
            let (p, q) = (t.refined_pos, r.refined_pos);
            if !(p.x < q.x && p.y < q.y) {
                continue;
            }
            let Ok(bbox) = BBox::from_corners(p, q) else { continue };
            out.push(CandidatePair {
                tl: a,
                br: b,
                bbox,
                category: t.category,
                score: (t.score * r.score).max(0.0).sqrt(),
            });
        }
    }
    out
}

/// Region weight for a box and its two decoded centers: zero unless both
/// centers lie in the central region, otherwise
/// `exp(-|Δx|·|Δy| / region_area)` (or the Euclidean variant).
pub fn region_weight(bbox: &BBox, tl_ct: Point, br_ct: Point, policy: &MuPolicy, form: WeightForm) -> f64 {
    let mu = select_mu(bbox, policy);
    let Ok(region) = central_region(bbox, mu) else { return 0.0 };
    if !(region.contains(tl_ct) && region.contains(br_ct)) {
        return 0.0;
    }
    let (dx, dy) = ((br_ct.x - tl_ct.x).abs(), (br_ct.y - tl_ct.y).abs());
    let num = match form {
        WeightForm::Product => dx * dy,
        WeightForm::Euclidean => dx * dx + dy * dy,
    };
    (-num / region.area()).exp()
}

/// Weight of a pair whose corners carry log-space centripetal shifts.
pub fn centripetal_weight(tl: &CornerCandidate, br: &CornerCandidate, policy: &MuPolicy, stride: f64) -> f64 {
    let Ok(bbox) = BBox::from_corners(tl.refined_pos, br.refined_pos) else { return 0.0 };
    region_weight(
        &bbox,
        decode_center_with(tl, stride, ShiftEncoding::Log),
        decode_center_with(br, stride, ShiftEncoding::Log),
        policy,
        WeightForm::Product,
    )
}

/// Class-wise Gaussian soft-NMS over parallel slices. Returns indices in
/// pick order and the decayed scores. The highest remaining score is
/// picked first; ties go to the lower index.
pub fn soft_nms_indices(boxes: &[BBox], categories: &[u32], scores: &[f64], sigma: f64) -> (Vec<usize>, Vec<f64>) {
    let n = boxes.len();
    let mut s = scores.to_vec();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    while !remaining.is_empty() {
        let mut best = 0;
        for (pos, &k) in remaining.iter().enumerate().skip(1) {
            if s[k] > s[remaining[best]] {
                best = pos;
            }
        }
        let m = remaining.remove(best);
        order.push(m);
        for &k in &remaining {
            if categories[k] == categories[m] {
                let o = iou(&boxes[m], &boxes[k]);
                if o > 0.0 {
                    s[k] *= (-(o * o) / sigma).exp();
                }
            }
        }
    }
    (order, s)
}

/// Soft-NMS over detections; output in pick order with decayed scores.
pub fn soft_nms(dets: &[Detection], sigma: f64) -> Vec<Detection> {
    let boxes: Vec<_> = dets.iter().map(|d| d.bbox).collect();
    let cats: Vec<_> = dets.iter().map(|d| d.category).collect();
    let scores: Vec<_> = dets.iter().map(|d| d.score).collect();
    let (order, s) = soft_nms_indices(&boxes, &cats, &scores, sigma);
    order.into_iter().map(|k| Detection { score: s[k], ..dets[k] }).collect()
}

fn finish(mut cands: Vec<ScoredBox>, cfg: &MatchConfig) -> Vec<ScoredBox> {
    cands.retain(|c| c.detection.score > 0.0);
    let boxes: Vec<_> = cands.iter().map(|c| c.detection.bbox).collect();
    let cats: Vec<_> = cands.iter().map(|c| c.detection.category).collect();
    let scores: Vec<_> = cands.iter().map(|c| c.detection.score).collect();
    let (order, s) = soft_nms_indices(&boxes, &cats, &scores, cfg.soft_nms_sigma);
    order
        .into_iter()
        .filter(|&k| s[k] > 0.0)
        .take(cfg.final_keep)
        .map(|k| {
            let mut c = cands[k];
            c.detection.score = s[k];
            c
        })
        .collect()
}

fn scored(p: &CandidatePair, weight: f64, tl_center: Option<Point>, br_center: Option<Point>) -> ScoredBox {
    ScoredBox {
        detection: Detection { bbox: p.bbox, category: p.category, score: p.score * weight },
        weight,
        tl_center,
        br_center,
    }
}

fn match_shifts(
    tls: &[CornerCandidate],
    brs: &[CornerCandidate],
    cfg: &MatchConfig,
    stride: f64,
    enc: ShiftEncoding,
) -> Vec<ScoredBox> {
    let cands = pair_candidates(tls, brs)
        .iter()
        .map(|p| {
            let tc = decode_center_with(&tls[p.tl], stride, enc);
            let bc = decode_center_with(&brs[p.br], stride, enc);
            let w = region_weight(&p.bbox, tc, bc, &cfg.mu_policy, cfg.weight_form);
            scored(p, w, Some(tc), Some(bc))
        })
        .collect();
    finish(cands, cfg)
}

/// Centripetal matching: candidates carry log-space shifts.
pub fn match_centripetal(
    tls: &[CornerCandidate],
    brs: &[CornerCandidate],
    cfg: &MatchConfig,
    stride: f64,
) -> Vec<ScoredBox> {
    match_shifts(tls, brs, cfg, stride, ShiftEncoding::Log)
}

/// Center-regression baseline: candidates carry linear shifts in stride units.
pub fn match_center_regression(
    tls: &[CornerCandidate],
    brs: &[CornerCandidate],
    cfg: &MatchConfig,
    stride: f64,
) -> Vec<ScoredBox> {
    match_shifts(tls, brs, cfg, stride, ShiftEncoding::Linear)
}

fn embedding(c: &CornerCandidate, strategy: Strategy, want: usize) -> Result<&[f64], MatchError> {
    let e = c.embedding.as_deref().ok_or(MatchError::MissingEmbeddings(strategy))?;
    if e.len() < want {
        return Err(MatchError::EmbeddingDim { strategy, want, got: e.len() });
    }
    Ok(&e[..want])
}

/// Associative-embedding baseline: a pair is kept when the L1 distance of
/// the first `dim` embedding components is at most `ae_threshold`.
pub fn match_associative(
    tls: &[CornerCandidate],
    brs: &[CornerCandidate],
    cfg: &MatchConfig,
    dim: usize,
) -> Result<Vec<ScoredBox>, MatchError> {
    let strategy = if dim == 1 { Strategy::Associative1d } else { Strategy::Associative2d };
    for c in tls.iter().chain(brs) {
        embedding(c, strategy, dim)?;
    }
    let cands = pair_candidates(tls, brs)
        .iter()
        .filter(|p| {
            let (a, b) = (&tls[p.tl], &brs[p.br]);
            let (ea, eb) = (embedding(a, strategy, dim).unwrap(), embedding(b, strategy, dim).unwrap());
            let d: f64 = ea.iter().zip(eb).map(|(x, y)| (x - y).abs()).sum();
            d <= cfg.ae_threshold
        })
        .map(|p| scored(p, 1.0, None, None))
        .collect();
    Ok(finish(cands, cfg))
}

/// Center-validation baseline: a pair is kept when some same-category
/// center candidate lies in its central region.
pub fn match_center_validation(
    tls: &[CornerCandidate],
    brs: &[CornerCandidate],
    centers: &[CenterCandidate],
    cfg: &MatchConfig,
) -> Vec<ScoredBox> {
    let cands = pair_candidates(tls, brs)
        .iter()
        .filter(|p| {
            let Ok(region) = central_region(&p.bbox, select_mu(&p.bbox, &cfg.mu_policy)) else {
                return false;
            };
            centers.iter().any(|c| c.category == p.category && region.contains(c.pos))
        })
        .map(|p| scored(p, 1.0, None, None))
        .collect();
    finish(cands, cfg)
}

/// Runs `cfg.strategy`.
pub fn match_corners(
    tls: &[CornerCandidate],
    brs: &[CornerCandidate],
    centers: Option<&[CenterCandidate]>,
    cfg: &MatchConfig,
    stride: f64,
) -> Result<Vec<ScoredBox>, MatchError> {
    cfg.validate()?;
    match cfg.strategy {
        Strategy::Centripetal => Ok(match_centripetal(tls, brs, cfg, stride)),
        Strategy::CenterRegression => Ok(match_center_regression(tls, brs, cfg, stride)),
        Strategy::Associative1d => match_associative(tls, brs, cfg, 1),
        Strategy::Associative2d => match_associative(tls, brs, cfg, 2),
        Strategy::CenterValidation => {
            Ok(match_center_validation(tls, brs, centers.ok_or(MatchError::MissingCenters)?, cfg))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use crate::geometry::{box_center, CornerKind};
    use proptest::prelude::*;
    use proptest::strategy::Strategy as Gen;

    fn corner(
        kind: CornerKind,
        p: Point,
        score: f64,
        category: u32,
        cs: [f64; 2],
        emb: Option<f64>,
    ) -> CornerCandidate {
        CornerCandidate { kind, cell: (0, 0), refined_pos: p, score, category, cs, embedding: emb.map(|e| vec![e, e]) }
    }

    /// Exact corners of `b` with log shifts and the given embedding.
    fn exact(b: &BBox, category: u32, emb: f64) -> (CornerCandidate, CornerCandidate) {
        let cs = crate::encoder::centripetal_shift(b, 4.0).unwrap();
        (
            corner(CornerKind::TopLeft, b.top_left(), 0.9, category, cs.tl, Some(emb)),
            corner(CornerKind::BottomRight, b.bottom_right(), 0.9, category, cs.br, Some(emb)),
        )
    }

    fn bx(a: f64, b: f64, c: f64, d: f64) -> BBox {
        BBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn pairing_examples() {
        let t = corner(CornerKind::TopLeft, Point::new(0., 0.), 0.81, 0, [0., 0.], None);
        let b = corner(CornerKind::BottomRight, Point::new(10., 10.), 0.64, 0, [0., 0.], None);
        let p = pair_candidates(std::slice::from_ref(&t), std::slice::from_ref(&b));
        assert_eq!(p.len(), 1);
        assert!((p[0].score - 0.72).abs() < 1e-12);
        let b1 = CornerCandidate { category: 1, ..b.clone() };
        assert!(pair_candidates(std::slice::from_ref(&t), &[b1]).is_empty());
        let b2 = CornerCandidate { refined_pos: Point::new(0., 10.), ..b };
        assert!(pair_candidates(&[t], &[b2]).is_empty());
    }

    #[test]
    fn weight_examples() {
        let p = MuPolicy::default();
        let b = bx(0., 0., 100., 100.);
        let c = Point::new(50., 50.);
        assert_eq!(region_weight(&b, c, c, &p, WeightForm::Product), 1.0);
        // centers on opposite region corners: |Δx|·|Δy| equals the region area
        let r = central_region(&b, 1.0 / 2.1).unwrap();
        let (tc, bc) = (r.top_left(), r.bottom_right());
        let w = region_weight(&b, tc, bc, &p, WeightForm::Product);
        assert!((w - (-1f64).exp()).abs() < 1e-12, "{w}");
        let out = Point::new(10., 50.);
        assert_eq!(region_weight(&b, out, c, &p, WeightForm::Product), 0.0);
        assert_eq!(region_weight(&b, c, out, &p, WeightForm::Product), 0.0);
        // one-axis disagreement keeps w = 1 under the product form only
        let (a1, a2) = (Point::new(45., 50.), Point::new(55., 50.));
        assert_eq!(region_weight(&b, a1, a2, &p, WeightForm::Product), 1.0);
        assert!(region_weight(&b, a1, a2, &p, WeightForm::Euclidean) < 1.0);
    }

    #[test]
    fn noise_free_pairs_recover_truth() {
        let gts = [bx(10., 10., 60., 50.), bx(70., 20., 120., 90.), bx(15., 70., 40., 120.)];
        let (tls, brs): (Vec<_>, Vec<_>) = gts.iter().map(|b| exact(b, 0, 0.0)).unzip();
        let out = match_centripetal(&tls, &brs, &MatchConfig::default(), 4.0);
        assert_eq!(out.len(), 3);
        for g in &gts {
            let m = out.iter().find(|d| iou(&d.detection.bbox, g) >= 0.98).expect("recovered");
            assert!((m.weight - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn crowd_fixture_centripetal_vs_associative() {
        // two identical side-by-side objects whose embeddings collide
        let (a, b) = (bx(10., 10., 50., 50.), bx(54., 10., 94., 50.));
        let (ta, ba) = exact(&a, 0, 1.0);
        let (tb, bb) = exact(&b, 0, 1.0);
        let tls = vec![ta, tb];
        let brs = vec![ba, bb];
        // brute-force: every valid cross pair gets zero weight
        for p in pair_candidates(&tls, &brs) {
            let w = centripetal_weight(&tls[p.tl], &brs[p.br], &MuPolicy::default(), 4.0);
            if p.tl == p.br {
                assert!((w - 1.0).abs() < 1e-9);
            } else {
                assert_eq!(w, 0.0);
            }
        }
        let cfg = MatchConfig::default();
        let cp = match_centripetal(&tls, &brs, &cfg, 4.0);
        assert_eq!(cp.len(), 2);
        let ae = match_associative(&tls, &brs, &cfg, 1).unwrap();
        assert_eq!(ae.len(), 3);
        assert!(ae.iter().any(|d| iou(&d.detection.bbox, &bx(10., 10., 94., 50.)) > 0.999));
    }

    #[test]
    fn associative_examples() {
        let cfg = MatchConfig::default();
        let (a, b) = (bx(10., 10., 50., 50.), bx(10., 60., 50., 100.));
        let (ta, ba) = exact(&a, 0, 0.0);
        let (tb, bb) = exact(&b, 0, 2.0);
        let out = match_associative(&[ta.clone(), tb.clone()], &[ba.clone(), bb.clone()], &cfg, 2).unwrap();
        assert_eq!(out.len(), 2);
        // collided: the one valid cross pair (a.tl, b.br) is accepted as well
        let (tb2, bb2) = exact(&b, 0, 0.0);
        let out = match_associative(&[ta.clone(), tb2], &[ba.clone(), bb2], &cfg, 2).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(match_associative(std::slice::from_ref(&ta), std::slice::from_ref(&ba), &cfg, 1).unwrap().len(), 1);
        let bare = CornerCandidate { embedding: None, ..ta };
        assert_eq!(
            match_associative(&[bare], &[ba], &cfg, 1),
            Err(MatchError::MissingEmbeddings(Strategy::Associative1d))
        );
    }

    #[test]
    fn associative_all_cross_pairs_in_grid() {
        // 2×2 grid with one shared embedding: five valid cross pairs plus four true ones
        let side = 30.0;
        let gap = 4.0;
        let mut tls = Vec::new();
        let mut brs = Vec::new();
        for r in 0..2 {
            for c in 0..2 {
                let (x, y) = (10.0 + c as f64 * (side + gap), 10.0 + r as f64 * (side + gap));
                let (t, b) = exact(&bx(x, y, x + side, y + side), 0, 0.0);
                tls.push(t);
                brs.push(b);
            }
        }
        let cfg = MatchConfig::default();
        assert_eq!(pair_candidates(&tls, &brs).len(), 9);
        assert_eq!(match_associative(&tls, &brs, &cfg, 2).unwrap().len(), 9);
        assert_eq!(match_centripetal(&tls, &brs, &cfg, 4.0).len(), 4);
    }

    #[test]
    fn center_validation_examples() {
        let cfg = MatchConfig::default();
        let a = bx(10., 10., 50., 50.);
        let (ta, ba) = exact(&a, 0, 0.0);
        let center = |b: &BBox| CenterCandidate { pos: box_center(b), category: 0, score: 1.0 };
        assert_eq!(
            match_center_validation(std::slice::from_ref(&ta), std::slice::from_ref(&ba), &[center(&a)], &cfg).len(),
            1
        );
        assert!(match_center_validation(std::slice::from_ref(&ta), std::slice::from_ref(&ba), &[], &cfg).is_empty());
        let wrong_cat = CenterCandidate { category: 1, ..center(&a) };
        assert!(match_center_validation(&[ta], &[ba], &[wrong_cat], &cfg).is_empty());
        // three in a row: the middle center validates the outer cross pair
        let row: Vec<BBox> = (0..3).map(|k| bx(10. + 44. * k as f64, 10., 50. + 44. * k as f64, 50.)).collect();
        let (tls, brs): (Vec<_>, Vec<_>) = row.iter().map(|b| exact(b, 0, 0.0)).unzip();
        let centers: Vec<_> = row.iter().map(center).collect();
        let out = match_center_validation(&tls, &brs, &centers, &cfg);
        let outer = bx(10., 10., 138., 50.);
        assert!(out.iter().any(|d| iou(&d.detection.bbox, &outer) > 0.999));
        assert!(match_centripetal(&tls, &brs, &cfg, 4.0).iter().all(|d| iou(&d.detection.bbox, &outer) < 0.5));
    }

    #[test]
    fn empty_inputs() {
        let cfg = MatchConfig::default();
        assert!(match_centripetal(&[], &[], &cfg, 4.0).is_empty());
        assert!(match_center_regression(&[], &[], &cfg, 4.0).is_empty());
        assert!(match_associative(&[], &[], &cfg, 2).unwrap().is_empty());
        assert!(match_center_validation(&[], &[], &[], &cfg).is_empty());
        assert_eq!(
            match_corners(&[], &[], None, &MatchConfig { strategy: Strategy::CenterValidation, ..cfg }, 4.0),
            Err(MatchError::MissingCenters)
        );
    }

    #[test]
    fn center_regression_uses_linear_shifts() {
        let b = bx(8., 8., 40., 72.);
        let lin = crate::encoder::linear_center_shift(&b, 4.0);
        let t = corner(CornerKind::TopLeft, b.top_left(), 0.9, 0, lin.tl, None);
        let r = corner(CornerKind::BottomRight, b.bottom_right(), 0.9, 0, lin.br, None);
        let out =
            match_center_regression(std::slice::from_ref(&t), std::slice::from_ref(&r), &MatchConfig::default(), 4.0);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].weight, 1.0);
        // the same values read as log shifts put the centers far outside
        assert!(match_centripetal(&[t], &[r], &MatchConfig::default(), 4.0).is_empty());
    }

    #[test]
    fn soft_nms_examples() {
        let d = |b: BBox, s: f64| Detection { bbox: b, category: 0, score: s };
        let a = bx(0., 0., 10., 10.);
        assert_eq!(soft_nms(&[d(a, 0.3)], 0.5), vec![d(a, 0.3)]);
        let far = bx(50., 50., 60., 60.);
        assert_eq!(soft_nms(&[d(a, 0.3), d(far, 0.6)], 0.5), vec![d(far, 0.6), d(a, 0.3)]);
        let out = soft_nms(&[d(a, 0.8), d(a, 0.9)], 0.5);
        assert_eq!(out[0].score, 0.9);
        assert!((out[1].score - 0.8 * (-2f64).exp()).abs() < 1e-12);
        assert!((out[1].score - 0.1083).abs() < 1e-4);
        // other categories are untouched
        let other = Detection { category: 1, ..d(a, 0.8) };
        assert_eq!(soft_nms(&[d(a, 0.9), other], 0.5)[1].score, 0.8);
    }

    /// Straightforward soft-NMS reference: repeatedly sort the remainder.
    fn soft_nms_oracle(dets: &[Detection], sigma: f64) -> Vec<Detection> {
        let mut rest: Vec<(usize, Detection)> = dets.iter().copied().enumerate().collect();
        let mut out = Vec::new();
        while !rest.is_empty() {
            rest.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap().then(a.0.cmp(&b.0)));
            let (_, top) = rest.remove(0);
            for (_, d) in rest.iter_mut() {
                if d.category == top.category {
                    let o = iou(&top.bbox, &d.bbox);
                    d.score *= (-o * o / sigma).exp();
                }
            }
            out.push(top);
        }
        out
    }

    fn arb_dets() -> impl Gen<Value = Vec<Detection>> {
        proptest::collection::vec(
            (0.0..50.0f64, 0.0..50.0f64, 1.0..30.0f64, 1.0..30.0f64, 0u32..2, 0.01..1.0f64),
            0..12,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, c, s)| Detection { bbox: bx(x, y, x + w, y + h), category: c, score: s })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn soft_nms_matches_oracle(dets in arb_dets()) {
            let got = soft_nms(&dets, 0.5);
            let want = soft_nms_oracle(&dets, 0.5);
            prop_assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                prop_assert_eq!(g.bbox, w.bbox);
                prop_assert!((g.score - w.score).abs() < 1e-12);
            }
        }

        #[test]
        fn soft_nms_only_decays_and_keeps_top1(dets in arb_dets()) {
            let out = soft_nms(&dets, 0.5);
            for d in &out {
                let orig = dets.iter().filter(|o| o.bbox == d.bbox && o.category == d.category).map(|o| o.score).fold(0.0, f64::max);
                prop_assert!(d.score <= orig + 1e-15);
            }
            for c in 0..2 {
                let best = dets.iter().filter(|d| d.category == c).map(|d| d.score).fold(f64::NEG_INFINITY, f64::max);
                let top = out.iter().filter(|d| d.category == c).map(|d| d.score).fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(best, top);
            }
        }

        #[test]
        fn weight_bounded_and_monotone(d1 in 0.0..20.0f64, d2 in 0.0..20.0f64, extra in 0.0..5.0f64) {
            let b = bx(0., 0., 100., 80.);
            let p = MuPolicy::default();
            let c = box_center(&b);
            let w = |dx: f64, dy: f64| region_weight(&b, Point::new(c.x - dx / 2., c.y - dy / 2.), Point::new(c.x + dx / 2., c.y + dy / 2.), &p, WeightForm::Product);
            let w0 = w(d1, d2);
            prop_assert!((0.0..=1.0).contains(&w0));
            let w1 = w(d1 + extra, d2 + extra);
            prop_assert!(w1 <= w0);
        }

        #[test]
        fn weight_is_scale_invariant(x in 0.0..100.0f64, y in 0.0..100.0f64, w in 20.0..100.0f64, h in 20.0..100.0f64,
                                     ex in -0.3..0.3f64, ey in -0.3..0.3f64, k in 1.5..4.0f64) {
            let b = bx(x, y, x + w, y + h);
            let c = box_center(&b);
            let tc = Point::new(c.x + ex * w / 4.0, c.y + ey * h / 4.0);
            let bc = Point::new(c.x - ey * w / 4.0, c.y + ex * h / 4.0);
            // a policy with one μ so that scaling cannot flip the area bucket
            let p = MuPolicy { large_mu: 0.5, small_mu: 0.5, area_threshold: 3500.0 };
            let w1 = region_weight(&b, tc, bc, &p, WeightForm::Product);
            let s = |q: Point| Point::new(q.x * k, q.y * k);
            let w2 = region_weight(&b.scaled(k).unwrap(), s(tc), s(bc), &p, WeightForm::Product);
            prop_assert!((w1 - w2).abs() < 1e-9);
        }

        #[test]
        fn matchers_never_invent_geometry(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut mk = |kind| corner(kind, Point::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)),
                rng.random_range(0.1..1.0), rng.random_range(0..2), [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)],
                Some(rng.random_range(0.0..2.0)));
            let tls: Vec<_> = (0..6).map(|_| mk(CornerKind::TopLeft)).collect();
            let brs: Vec<_> = (0..6).map(|_| mk(CornerKind::BottomRight)).collect();
            let centers: Vec<_> = tls.iter().map(|c| CenterCandidate { pos: Point::new(c.refined_pos.x + 10.0, c.refined_pos.y + 10.0), category: c.category, score: 1.0 }).collect();
            let pairs = pair_candidates(&tls, &brs);
            for strategy in Strategy::ALL {
                let cfg = MatchConfig { strategy, ..MatchConfig::default() };
                let out = match_corners(&tls, &brs, Some(&centers), &cfg, 4.0).unwrap();
                for d in &out {
                    prop_assert!(pairs.iter().any(|p| p.bbox == d.detection.bbox && p.category == d.detection.category && d.detection.score <= p.score + 1e-12));
                    prop_assert!(d.detection.score > 0.0);
                }
            }
        }
    }
}
