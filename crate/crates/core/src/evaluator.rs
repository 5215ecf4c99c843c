//! COCO-protocol box AP/AR.
//!
//! 101 recall points, IoU thresholds 0.50:0.05:0.95, area buckets split
//! at 32² and 96², detection caps of 1/10/100 per image and category.
//! Metrics with no ground truth to measure against are `None`.

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BBox, Detection};

pub const MAX_DETS: [usize; 3] = [1, 10, 100];
pub const SMALL_AREA: f64 = 32.0 * 32.0;
pub const MEDIUM_AREA: f64 = 96.0 * 96.0;
const AREA_MAX: f64 = 1e10;

/// IoU thresholds `0.50, 0.55, …, 0.95`.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + i as f64 * (0.45 / 9.0))
}

/// Recall sample points `0.00, 0.01, …, 1.00`.
pub fn recall_thresholds() -> [f64; 101] {
    std::array::from_fn(|i| i as f64 * 0.01)
}

/// A ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub category: u32,
}

impl From<&crate::encoder::SceneObject> for GroundTruth {
    fn from(o: &crate::encoder::SceneObject) -> Self {
        Self { bbox: o.bbox, category: o.category }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalResult {
    #[serde(rename = "AP")]
    pub ap: Option<f64>,
    #[serde(rename = "AP50")]
    pub ap50: Option<f64>,
    #[serde(rename = "AP75")]
    pub ap75: Option<f64>,
    #[serde(rename = "AP_S")]
    pub ap_small: Option<f64>,
    #[serde(rename = "AP_M")]
    pub ap_medium: Option<f64>,
    #[serde(rename = "AP_L")]
    pub ap_large: Option<f64>,
    #[serde(rename = "AR_1")]
    pub ar1: Option<f64>,
    #[serde(rename = "AR_10")]
    pub ar10: Option<f64>,
    #[serde(rename = "AR_100")]
    pub ar100: Option<f64>,
    #[serde(rename = "AR_S")]
    pub ar_small: Option<f64>,
    #[serde(rename = "AR_M")]
    pub ar_medium: Option<f64>,
    #[serde(rename = "AR_L")]
    pub ar_large: Option<f64>,
}

impl EvalResult {
    /// `(name, value)` for every metric in report order.
    pub fn fields(&self) -> [(&'static str, Option<f64>); 12] {
        [
            ("AP", self.ap),
            ("AP50", self.ap50),
            ("AP75", self.ap75),
            ("AP_S", self.ap_small),
            ("AP_M", self.ap_medium),
            ("AP_L", self.ap_large),
            ("AR_1", self.ar1),
            ("AR_10", self.ar10),
            ("AR_100", self.ar100),
            ("AR_S", self.ar_small),
            ("AR_M", self.ar_medium),
            ("AR_L", self.ar_large),
        ]
    }
}

/// One-to-one greedy matching at `iou_thr`. `dets` must already be sorted by
/// descending score. Each detection takes the highest-IoU still-unmatched
/// ground truth of its category; returns the matched ground-truth index per
/// detection.
pub fn greedy_match(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> Vec<Option<usize>> {
    let ignore = vec![false; gts.len()];
    let ious: Vec<Vec<f64>> = dets.iter().map(|d| gts.iter().map(|g| iou(&d.bbox, &g.bbox)).collect()).collect();
    let cats: Vec<bool> = dets.iter().flat_map(|d| gts.iter().map(move |g| g.category == d.category)).collect();
    let ng = gts.len();
    match_sorted(dets.len(), ng, &ious, &ignore, iou_thr, |d, g| cats[d * ng + g])
}

/// Core matcher. Ground truths must be ordered non-ignored first. A ground
/// truth with equal IoU later in the list replaces an earlier candidate.
fn match_sorted(
    nd: usize,
    ng: usize,
    ious: &[Vec<f64>],
    gt_ignore: &[bool],
    iou_thr: f64,
    same_cat: impl Fn(usize, usize) -> bool,
) -> Vec<Option<usize>> {
    let mut taken = vec![false; ng];
    let mut out = vec![None; nd];
    for d in 0..nd {
        let mut best_iou = iou_thr.min(1.0 - 1e-10);
        let mut m: Option<usize> = None;
        for g in 0..ng {
            if taken[g] || !same_cat(d, g) {
                continue;
            }
            if let Some(mm) = m {
                if !gt_ignore[mm] && gt_ignore[g] {
                    break;
                }
            }
            if ious[d][g] < best_iou {
                continue;
            }
            best_iou = ious[d][g];
            m = Some(g);
        }
        if let Some(g) = m {
            taken[g] = true;
            out[d] = Some(g);
        }
    }
    out
}

/// 101-point interpolated AP of a ranked list of true/false positives.
/// `None` when there is no ground truth.
pub fn average_precision(matched: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let (rc, pr) = pr_curve(matched.iter().map(|&m| (m, false)), n_gt);
    Some(sample_envelope(&rc, pr).iter().sum::<f64>() / 101.0)
}

fn pr_curve(flags: impl Iterator<Item = (bool, bool)>, n_gt: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut rc = Vec::new();
    let mut pr = Vec::new();
    for (hit, ignored) in flags {
        if ignored {
            continue;
        }
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        rc.push(tp as f64 / n_gt as f64);
        pr.push(tp as f64 / (tp + fp) as f64);
    }
    (rc, pr)
}

/// Precision envelope sampled at the recall thresholds; recall points
/// beyond the curve get 0.
fn sample_envelope(rc: &[f64], mut pr: Vec<f64>) -> [f64; 101] {
    for i in (1..pr.len()).rev() {
        if pr[i] > pr[i - 1] {
            pr[i - 1] = pr[i];
        }
    }
    let mut q = [0.0; 101];
    for (r, slot) in recall_thresholds().iter().zip(q.iter_mut()) {
        let idx = rc.partition_point(|v| v < r);
        if idx < pr.len() {
            *slot = pr[idx];
        }
    }
    q
}

#[derive(Clone, Copy)]
struct AreaRange(f64, f64);

const AREAS: [AreaRange; 4] = [
    AreaRange(0.0, AREA_MAX),
    AreaRange(0.0, SMALL_AREA),
    AreaRange(SMALL_AREA, MEDIUM_AREA),
    AreaRange(MEDIUM_AREA, AREA_MAX),
];

impl AreaRange {
    fn outside(&self, a: f64) -> bool {
        a < self.0 || a > self.1
    }
}

/// Matching outcome of one image/category/area cell.
struct ImageCell {
    /// Detection scores, sorted descending, capped at the largest cap.
    scores: Vec<f64>,
    /// `[threshold][det]`
    matched: Vec<Vec<bool>>,
    ignored: Vec<Vec<bool>>,
    n_gt: usize,
}

fn eval_cell(dets: &[&Detection], gts: &[&GroundTruth], area: AreaRange, max_det: usize) -> ImageCell {
    let thresholds = iou_thresholds();
    let mut gorder: Vec<usize> = (0..gts.len()).collect();
    let g_ign: Vec<bool> = gts.iter().map(|g| area.outside(g.bbox.area())).collect();
    gorder.sort_by_key(|&g| g_ign[g]);
    let gts: Vec<&GroundTruth> = gorder.iter().map(|&g| gts[g]).collect();
    let g_ign: Vec<bool> = gorder.iter().map(|&g| g_ign[g]).collect();

    let mut dorder: Vec<usize> = (0..dets.len()).collect();
    dorder.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    dorder.truncate(max_det);
    let dets: Vec<&Detection> = dorder.iter().map(|&d| dets[d]).collect();

    let ious: Vec<Vec<f64>> = dets.iter().map(|d| gts.iter().map(|g| iou(&d.bbox, &g.bbox)).collect()).collect();
    let mut matched = Vec::with_capacity(thresholds.len());
    let mut ignored = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let m = match_sorted(dets.len(), gts.len(), &ious, &g_ign, t, |_, _| true);
        matched.push(m.iter().map(|x| x.is_some()).collect());
        ignored.push(
            m.iter()
                .zip(&dets)
                .map(|(x, d)| match x {
                    Some(g) => g_ign[*g],
                    None => area.outside(d.bbox.area()),
                })
                .collect(),
        );
    }
    ImageCell {
        scores: dets.iter().map(|d| d.score).collect(),
        matched,
        ignored,
        n_gt: g_ign.iter().filter(|i| !**i).count(),
    }
}

/// Per-threshold precision samples and recall for one category/area/cap, or
/// `None` when the category has no non-ignored ground truth.
fn accumulate(cells: &[ImageCell], max_det: usize) -> Option<Vec<([f64; 101], f64)>> {
    let n_gt: usize = cells.iter().map(|c| c.n_gt).sum();
    if n_gt == 0 {
        return None;
    }
    // stable merge: image order, then per-image rank
    let mut order: Vec<(usize, usize)> =
        cells.iter().enumerate().flat_map(|(i, c)| (0..c.scores.len().min(max_det)).map(move |d| (i, d))).collect();
    order.sort_by(|a, b| cells[b.0].scores[b.1].total_cmp(&cells[a.0].scores[a.1]));
    Some(
        (0..iou_thresholds().len())
            .map(|t| {
                let flags = order.iter().map(|&(i, d)| (cells[i].matched[t][d], cells[i].ignored[t][d]));
                let (rc, pr) = pr_curve(flags, n_gt);
                let recall = rc.last().copied().unwrap_or(0.0);
                (sample_envelope(&rc, pr), recall)
            })
            .collect(),
    )
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Evaluates per-image detections against per-image ground truth.
/// Categories without any ground truth are skipped, as are detections of
/// such categories.
pub fn evaluate(dets: &[Vec<Detection>], gts: &[Vec<GroundTruth>]) -> EvalResult {
    assert_eq!(dets.len(), gts.len(), "one detection list per image");
    let mut cats: Vec<u32> = gts.iter().flatten().map(|g| g.category).collect();
    cats.sort_unstable();
    cats.dedup();
    let max_cap = *MAX_DETS.last().unwrap();

    // stats[area][cap] -> per category Option<per threshold (precision, recall)>
    let mut stats: Vec<Vec<Vec<Option<Vec<([f64; 101], f64)>>>>> = vec![vec![Vec::new(); MAX_DETS.len()]; AREAS.len()];
    for &c in &cats {
        for (a, area) in AREAS.iter().enumerate() {
            let cells: Vec<ImageCell> = dets
                .iter()
                .zip(gts)
                .map(|(d, g)| {
                    let d: Vec<&Detection> = d.iter().filter(|x| x.category == c).collect();
                    let g: Vec<&GroundTruth> = g.iter().filter(|x| x.category == c).collect();
                    eval_cell(&d, &g, *area, max_cap)
                })
                .collect();
            for (m, &cap) in MAX_DETS.iter().enumerate() {
                stats[a][m].push(accumulate(&cells, cap));
            }
        }
    }

    let ap = |a: usize, t: Option<usize>| {
        let vals: Vec<f64> = stats[a][2]
            .iter()
            .flatten()
            .flat_map(|per_t| {
                per_t
                    .iter()
                    .enumerate()
                    .filter(move |(k, _)| t.is_none_or(|t| t == *k))
                    .flat_map(|(_, (p, _))| p.iter().copied())
            })
            .collect();
        mean(&vals)
    };
    let ar = |a: usize, m: usize| {
        let vals: Vec<f64> = stats[a][m].iter().flatten().flat_map(|per_t| per_t.iter().map(|(_, r)| *r)).collect();
        mean(&vals)
    };
    EvalResult {
        ap: ap(0, None),
        ap50: ap(0, Some(0)),
        ap75: ap(0, Some(5)),
        ap_small: ap(1, None),
        ap_medium: ap(2, None),
        ap_large: ap(3, None),
        ar1: ar(0, 0),
        ar10: ar(0, 1),
        ar100: ar(0, 2),
        ar_small: ar(1, 2),
        ar_medium: ar(2, 2),
        ar_large: ar(3, 2),
    }
}
