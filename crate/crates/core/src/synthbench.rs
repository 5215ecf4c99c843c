//! Synthetic crowded scenes, noisy prediction maps and the strategy benchmark.
//!
//! Randomness comes from ChaCha8 seeded with the master seed. Scene `i`
//! draws its layout from stream `2i` and its rendering noise from stream
//! `2i + 1`, so scenes are independent of worker scheduling and every noise
//! setting reuses the same underlying draws. Rendering always consumes the
//! same draws in the same order whatever the noise values are.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{centripetal_shift, linear_center_shift, EncodeError, Scene, SceneObject};
use crate::evaluator::{evaluate, EvalResult, GroundTruth, MEDIUM_AREA, SMALL_AREA};
use crate::geometry::{box_center, BBox, Detection, Point};
use crate::kernels::HeatActivation;
use crate::matcher::{CenterCandidate, MatchConfig, Strategy};
use crate::pipeline::{detect, DetectConfig, PipelineError, PredictionMaps};
use crate::tensor::Tensor;

/// Corner and center score before score noise.
pub const PEAK_SCORE: f64 = 0.9;
/// Heat logit of cells with no object.
pub const BACKGROUND_LOGIT: f32 = -10.0;
/// Splat radius of rendered corner peaks, in cells.
pub const SPLAT_RADIUS: i64 = 1;
/// Spacing of distinct embedding values.
pub const EMBEDDING_SPACING: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("invalid noise model: {0}")]
    Noise(String),
    #[error("invalid benchmark config: {0}")]
    Config(String),
    #[error("could not place object group after {retries} attempts ({placed} of {wanted} objects placed)")]
    Infeasible { retries: usize, placed: usize, wanted: usize },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Relative weights of the small/medium/large area buckets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeMix {
    pub small: f64,
    pub medium: f64,
    pub large: f64,
}

impl Default for SizeMix {
    fn default() -> Self {
        Self { small: 0.3, medium: 0.5, large: 0.2 }
    }
}

/// Groups of identical same-category boxes laid out in a row, a column or
/// a 2×2 grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSpec {
    /// Chance that a placement is a cluster rather than a single object.
    pub probability: f64,
    pub min_size: usize,
    pub max_size: usize,
    /// Edge-to-edge spacing between cluster members, pixels.
    pub gap: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self { probability: 0.5, min_size: 2, max_size: 4, gap: 4.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub stride: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub num_categories: u32,
    pub size_mix: SizeMix,
    /// Shortest allowed box side, pixels.
    pub min_side: f64,
    /// Longest side of a large box, pixels.
    pub max_side: f64,
    /// Aspect ratios are drawn log-uniformly in `[1/max_aspect, max_aspect]`.
    pub max_aspect: f64,
    pub clusters: ClusterSpec,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            stride: crate::encoder::DEFAULT_STRIDE,
            min_objects: 4,
            max_objects: 12,
            num_categories: 3,
            size_mix: SizeMix::default(),
            min_side: 12.0,
            max_side: 192.0,
            max_aspect: 2.0,
            clusters: ClusterSpec::default(),
            max_retries: 200,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Crowded scenes: every placement is a cluster of 2 to 4 nearly
    /// touching boxes.
    pub fn crowd() -> Self {
        Self {
            min_objects: 8,
            max_objects: 16,
            clusters: ClusterSpec { probability: 1.0, gap: 2.0, ..ClusterSpec::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(m.to_string()));
        if self.stride == 0 || !self.width.is_multiple_of(self.stride) || !self.height.is_multiple_of(self.stride) {
            return bad("width and height must be positive multiples of stride");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        if self.num_categories == 0 {
            return bad("num_categories must be positive");
        }
        let m = &self.size_mix;
        if [m.small, m.medium, m.large].iter().any(|w| !(*w >= 0.0)) || m.small + m.medium + m.large <= 0.0 {
            return bad("size_mix weights must be non-negative with a positive sum");
        }
        if !(self.min_side > 0.0) || !(self.max_side >= self.min_side) {
            return bad("need 0 < min_side <= max_side");
        }
        if !(self.max_aspect >= 1.0) {
            return bad("max_aspect must be at least 1");
        }
        let c = &self.clusters;
        if !(0.0..=1.0).contains(&c.probability) || c.min_size < 2 || c.max_size > 4 || c.min_size > c.max_size {
            return bad("clusters need probability in [0, 1] and 2 <= min_size <= max_size <= 4");
        }
        if !(c.gap >= 0.0) {
            return bad("cluster gap must be non-negative");
        }
        if self.max_retries == 0 {
            return bad("max_retries must be positive");
        }
        Ok(())
    }
}

/// A generated scene with the cluster id of every object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub scene: Scene,
    pub clusters: Vec<usize>,
}

impl SynthScene {
    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.scene.objects.iter().map(GroundTruth::from).collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Layout RNG of scene `index`.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    stream_rng(seed, 2 * index)
}

/// Rendering RNG of scene `index`.
pub fn render_rng(seed: u64, index: u64) -> ChaCha8Rng {
    stream_rng(seed, 2 * index + 1)
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn draw_size(spec: &SceneSpec, rng: &mut impl Rng) -> (f64, f64) {
    let m = &spec.size_mix;
    let u = rng.random::<f64>() * (m.small + m.medium + m.large);
    let lo_small = spec.min_side * spec.min_side;
    let hi_large = spec.max_side * spec.max_side;
    let (lo, hi) = if u < m.small {
        (lo_small, SMALL_AREA)
    } else if u < m.small + m.medium {
        (SMALL_AREA, MEDIUM_AREA)
    } else {
        (MEDIUM_AREA, hi_large)
    };
    let (lo, hi) = (lo.max(lo_small), hi.min(hi_large).max(lo_small));
    let area = log_uniform(rng, lo, hi);
    let aspect = log_uniform(rng, 1.0 / spec.max_aspect, spec.max_aspect);
    let w = (area * aspect).sqrt().clamp(spec.min_side, spec.max_side);
    let h = (area / aspect).sqrt().clamp(spec.min_side, spec.max_side);
    (w, h)
}

/// `(rows, cols)` of a cluster layout.
fn layout(size: usize, horizontal: bool) -> (usize, usize) {
    match (size, horizontal) {
        (4, _) => (2, 2),
        (n, true) => (1, n),
        (n, false) => (n, 1),
    }
}

/// Generates scene `index` of the spec's seed.
pub fn generate_scene_at(spec: &SceneSpec, index: u64) -> Result<SynthScene, SynthError> {
    spec.validate()?;
    let mut rng = scene_rng(spec.seed, index);
    let wanted = rng.random_range(spec.min_objects..=spec.max_objects);
    let (wf, hf) = (spec.width as f64, spec.height as f64);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(wanted);
    let mut clusters = Vec::with_capacity(wanted);
    let mut cluster_id = 0;
    while objects.len() < wanted {
        let remaining = wanted - objects.len();
        let mut placed = false;
        for _ in 0..spec.max_retries {
            let c = &spec.clusters;
            let is_cluster = rng.random::<f64>() < c.probability && remaining >= c.min_size;
            let size = if is_cluster { rng.random_range(c.min_size..=c.max_size.min(remaining)) } else { 1 };
            let horizontal = rng.random::<bool>();
            let category = rng.random_range(0..spec.num_categories);
            let (w, h) = draw_size(spec, &mut rng);
            let (rows, cols) = layout(size, horizontal);
            let ext_w = cols as f64 * w + (cols - 1) as f64 * c.gap;
            let ext_h = rows as f64 * h + (rows - 1) as f64 * c.gap;
            let (ux, uy) = (rng.random::<f64>(), rng.random::<f64>());
            if ext_w >= wf || ext_h >= hf {
                continue;
            }
            // strict upper bound keeps every br corner inside the last cell
            let (x0, y0) = (ux * (wf - ext_w), uy * (hf - ext_h));
            let boxes: Vec<BBox> = (0..size)
                .map(|k| {
                    let (r, q) = (k / cols, k % cols);
                    let x = x0 + q as f64 * (w + c.gap);
                    let y = y0 + r as f64 * (h + c.gap);
                    BBox::new(x, y, x + w, y + h).expect("positive size")
                })
                .collect();
            if boxes.iter().any(|b| b.brx() >= wf || b.bry() >= hf) {
                continue;
            }
            if boxes.iter().any(|b| objects.iter().any(|o| o.bbox.overlaps(b))) {
                continue;
            }
            for b in boxes {
                objects.push(SceneObject::new(b, category));
                clusters.push(cluster_id);
            }
            cluster_id += 1;
            placed = true;
            break;
        }
        if !placed {
            return Err(SynthError::Infeasible { retries: spec.max_retries, placed: objects.len(), wanted });
        }
    }
    let mut scene = Scene::with_objects(spec.width, spec.height, objects);
    scene.num_categories = Some(spec.num_categories);
    Ok(SynthScene { scene, clusters })
}

/// Generates the spec's first scene.
pub fn generate_scene(spec: &SceneSpec) -> Result<SynthScene, SynthError> {
    generate_scene_at(spec, 0)
}

/// Perturbations applied to exact targets when synthesizing predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Corner and center position jitter, heatmap cells.
    pub sigma_pos: f64,
    /// Centripetal-shift jitter, log space.
    pub sigma_cs: f64,
    /// Corner score jitter, logit space.
    pub sigma_score: f64,
    /// Fraction of clusters whose members share one embedding.
    pub rho: f64,
    pub center_dropout: f64,
    /// Per-corner embedding jitter.
    pub sigma_emb: f64,
    /// Linear-shift jitter in cells. When unset it is `sigma_cs` times the
    /// scene's mean linear shift, so both encodings carry the same average
    /// error.
    pub sigma_reg: Option<f64>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_pos: 0.0,
            sigma_cs: 0.0,
            sigma_score: 0.0,
            rho: 0.0,
            center_dropout: 0.0,
            sigma_emb: 0.0,
            sigma_reg: None,
        }
    }
}

impl NoiseModel {
    /// Moderate head noise with frequent embedding collisions.
    pub fn crowd() -> Self {
        Self {
            sigma_pos: 0.3,
            sigma_cs: 0.05,
            sigma_score: 0.5,
            rho: 0.8,
            center_dropout: 0.0,
            sigma_emb: 0.1,
            sigma_reg: None,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let sig = [self.sigma_pos, self.sigma_cs, self.sigma_score, self.sigma_emb, self.sigma_reg.unwrap_or(0.0)];
        if sig.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(SynthError::Noise("all sigmas must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) || !(0.0..=1.0).contains(&self.center_dropout) {
            return Err(SynthError::Noise("rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn normal2(rng: &mut impl Rng) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

struct CornerDraw {
    pos: [f64; 2],
    shift: [f64; 2],
    score: f64,
    emb: [f64; 2],
}

struct ObjectDraw {
    tl: CornerDraw,
    br: CornerDraw,
    center: [f64; 2],
    drop_u: f64,
}

fn draw_corner(rng: &mut impl Rng) -> CornerDraw {
    CornerDraw { pos: normal2(rng), shift: normal2(rng), score: rng.sample(StandardNormal), emb: normal2(rng) }
}

/// Writes one corner into the sparse maps and its peak into the
/// probability-space heat buffer.
#[allow(clippy::too_many_arguments)]
fn write_corner(
    prob: &mut Tensor,
    off: &mut Tensor,
    cs: &mut Tensor,
    reg: &mut Tensor,
    emb: &mut Tensor,
    category: usize,
    pos: Point,
    stride: f64,
    score: f64,
    shift: [f64; 2],
    lin: [f64; 2],
    e: [f64; 2],
) {
    let (rows, cols) = (prob.height(), prob.width());
    let u = (pos.x / stride).clamp(0.0, cols as f64 - 1e-6);
    let v = (pos.y / stride).clamp(0.0, rows as f64 - 1e-6);
    let (i, j) = (v.floor() as usize, u.floor() as usize);
    off.set(0, i, j, (u - j as f64) as f32);
    off.set(1, i, j, (v - i as f64) as f32);
    for ch in 0..2 {
        cs.set(ch, i, j, shift[ch] as f32);
        reg.set(ch, i, j, lin[ch] as f32);
        emb.set(ch, i, j, e[ch] as f32);
    }
    let sigma = (2 * SPLAT_RADIUS + 1) as f64 / 6.0;
    for di in -SPLAT_RADIUS..=SPLAT_RADIUS {
        for dj in -SPLAT_RADIUS..=SPLAT_RADIUS {
            let (ii, jj) = (i as i64 + di, j as i64 + dj);
            if ii < 0 || jj < 0 || ii >= rows as i64 || jj >= cols as i64 {
                continue;
            }
            let g = (-((di * di + dj * dj) as f64) / (2.0 * sigma * sigma)).exp();
            let p = (score * g) as f32;
            let (ii, jj) = (ii as usize, jj as usize);
            if p > prob.get(category, ii, jj) {
                prob.set(category, ii, jj, p);
            }
        }
    }
}

fn prob_to_logits(prob: &Tensor) -> Tensor {
    let mut t = prob.clone();
    for v in t.data_mut() {
        *v = if *v > 0.0 { (logit(*v as f64) as f32).max(BACKGROUND_LOGIT) } else { BACKGROUND_LOGIT };
    }
    t
}

/// Synthesizes noisy head outputs for a scene. Heatmaps are logits meant
/// for [`HeatActivation::BackgroundSoftmax`]; embeddings have two channels
/// (the 1-d baseline reads the first).
pub fn render_predictions(
    synth: &SynthScene,
    noise: &NoiseModel,
    stride: u32,
    rng: &mut impl Rng,
) -> Result<PredictionMaps, SynthError> {
    noise.validate()?;
    let scene = &synth.scene;
    scene.validate(stride)?;
    let s = stride as f64;
    let (rows, cols) = scene.map_size(stride);
    let nc = scene.num_categories() as usize;
    let n = scene.objects.len();

    let mut cs_true = Vec::with_capacity(n);
    let mut lin_true = Vec::with_capacity(n);
    for (k, o) in scene.objects.iter().enumerate() {
        cs_true
            .push(centripetal_shift(&o.bbox, s).map_err(|value| EncodeError::EncodingDegenerate { object: k, value })?);
        lin_true.push(linear_center_shift(&o.bbox, s));
    }
    let sigma_lin = noise.sigma_reg.unwrap_or_else(|| {
        let total: f64 = lin_true.iter().flat_map(|p| p.to_array()).sum();
        noise.sigma_cs * total / (4 * n).max(1) as f64
    });

    // cluster-level draws, then a distinct lattice slot per object on each axis
    let n_clusters = synth.clusters.iter().max().map_or(0, |m| m + 1);
    let collide: Vec<bool> = (0..n_clusters).map(|_| rng.random::<f64>() < noise.rho).collect();
    let mut slots_a: Vec<usize> = (0..n).collect();
    let mut slots_b: Vec<usize> = (0..n).collect();
    slots_a.shuffle(rng);
    slots_b.shuffle(rng);
    let draws: Vec<ObjectDraw> = (0..n)
        .map(|_| ObjectDraw {
            tl: draw_corner(rng),
            br: draw_corner(rng),
            center: normal2(rng),
            drop_u: rng.random::<f64>(),
        })
        .collect();

    let mut first_member = vec![usize::MAX; n_clusters];
    for (k, &c) in synth.clusters.iter().enumerate() {
        if first_member[c] == usize::MAX {
            first_member[c] = k;
        }
    }
    let base_emb = |k: usize| {
        let c = synth.clusters[k];
        let owner = if collide[c] { first_member[c] } else { k };
        [(slots_a[owner] + 1) as f64 * EMBEDDING_SPACING, (slots_b[owner] + 1) as f64 * EMBEDDING_SPACING]
    };

    let mut prob = [Tensor::zeros(nc, rows, cols), Tensor::zeros(nc, rows, cols)];
    let z2 = || Tensor::zeros(2, rows, cols);
    let mut off = [z2(), z2()];
    let mut cs = [z2(), z2()];
    let mut reg = [z2(), z2()];
    let mut emb = [z2(), z2()];
    let mut centers = Vec::new();
    let jitter = noise.sigma_pos * s;
    for (k, (o, d)) in scene.objects.iter().zip(&draws).enumerate() {
        let base = base_emb(k);
        let corners = [
            (o.bbox.top_left(), &d.tl, cs_true[k].tl, lin_true[k].tl),
            (o.bbox.bottom_right(), &d.br, cs_true[k].br, lin_true[k].br),
        ];
        for (kind, (p, draw, cst, lint)) in corners.into_iter().enumerate() {
            let pos = Point::new(p.x + jitter * draw.pos[0], p.y + jitter * draw.pos[1]);
            let shift = [cst[0] + noise.sigma_cs * draw.shift[0], cst[1] + noise.sigma_cs * draw.shift[1]];
            let lin = [lint[0] + sigma_lin * draw.shift[0], lint[1] + sigma_lin * draw.shift[1]];
            let score = sigmoid(logit(PEAK_SCORE) + noise.sigma_score * draw.score);
            let e = [base[0] + noise.sigma_emb * draw.emb[0], base[1] + noise.sigma_emb * draw.emb[1]];
            write_corner(
                &mut prob[kind],
                &mut off[kind],
                &mut cs[kind],
                &mut reg[kind],
                &mut emb[kind],
                o.category as usize,
                pos,
                s,
                score,
                shift,
                lin,
                e,
            );
        }
        if d.drop_u >= noise.center_dropout {
            let c = box_center(&o.bbox);
            centers.push(CenterCandidate {
                pos: Point::new(c.x + jitter * d.center[0], c.y + jitter * d.center[1]),
                category: o.category,
                score: PEAK_SCORE,
            });
        }
    }
    let [tl_prob, br_prob] = prob;
    let [tl_off, br_off] = off;
    let [tl_cs, br_cs] = cs;
    let [tl_reg, br_reg] = reg;
    let [tl_emb, br_emb] = emb;
    Ok(PredictionMaps {
        stride,
        heat_activation: HeatActivation::BackgroundSoftmax,
        tl_heat: prob_to_logits(&tl_prob),
        br_heat: prob_to_logits(&br_prob),
        tl_off,
        br_off,
        tl_cs,
        br_cs,
        tl_reg: Some(tl_reg),
        br_reg: Some(br_reg),
        tl_emb: Some(tl_emb),
        br_emb: Some(br_emb),
        centers: Some(centers),
    })
}

/// A noise field varied along one row of the benchmark grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseParam {
    SigmaPos,
    SigmaCs,
    SigmaScore,
    Rho,
    CenterDropout,
    SigmaEmb,
    SigmaReg,
}

impl NoiseParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::SigmaPos => "sigma_pos",
            Self::SigmaCs => "sigma_cs",
            Self::SigmaScore => "sigma_score",
            Self::Rho => "rho",
            Self::CenterDropout => "center_dropout",
            Self::SigmaEmb => "sigma_emb",
            Self::SigmaReg => "sigma_reg",
        }
    }

    pub fn apply(self, base: &NoiseModel, v: f64) -> NoiseModel {
        let mut n = *base;
        match self {
            Self::SigmaPos => n.sigma_pos = v,
            Self::SigmaCs => n.sigma_cs = v,
            Self::SigmaScore => n.sigma_score = v,
            Self::Rho => n.rho = v,
            Self::CenterDropout => n.center_dropout = v,
            Self::SigmaEmb => n.sigma_emb = v,
            Self::SigmaReg => n.sigma_reg = Some(v),
        }
        n
    }
}

/// One grid row: `base` with `param` swept over `values`, or `base` alone
/// when `param` is unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweep {
    pub name: String,
    #[serde(default)]
    pub base: NoiseModel,
    #[serde(default)]
    pub param: Option<NoiseParam>,
    #[serde(default)]
    pub values: Vec<f64>,
}

impl NoiseSweep {
    pub fn single(name: impl Into<String>, noise: NoiseModel) -> Self {
        Self { name: name.into(), base: noise, param: None, values: Vec::new() }
    }

    fn cells(&self) -> Result<Vec<(Option<f64>, NoiseModel)>, SynthError> {
        let cells: Vec<_> = match self.param {
            None if self.values.is_empty() => vec![(None, self.base)],
            None => return Err(SynthError::Config(format!("row {:?} lists values but no param", self.name))),
            Some(_) if self.values.is_empty() => {
                return Err(SynthError::Config(format!("row {:?} sweeps a param over no values", self.name)))
            }
            Some(p) => self.values.iter().map(|&v| (Some(v), p.apply(&self.base, v))).collect(),
        };
        for (_, n) in &cells {
            n.validate().map_err(|e| SynthError::Config(format!("row {:?}: {e}", self.name)))?;
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    #[serde(default)]
    pub spec: SceneSpec,
    pub num_scenes: usize,
    pub strategies: Vec<Strategy>,
    pub grid: Vec<NoiseSweep>,
    #[serde(default)]
    pub detect: DetectConfig,
    /// Record per-image latency; off makes reports byte-reproducible.
    #[serde(default = "yes")]
    pub timing: bool,
}

fn yes() -> bool {
    true
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.spec.validate()?;
        if self.strategies.is_empty() {
            return Err(SynthError::Config("at least one strategy is required".into()));
        }
        if self.grid.is_empty() {
            return Err(SynthError::Config("the noise grid is empty".into()));
        }
        for row in &self.grid {
            row.cells()?;
        }
        self.detect.matching.validate().map_err(|e| SynthError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Per-image decode+match wall time, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(ms: &[f64]) -> Option<Self> {
        if ms.is_empty() {
            return None;
        }
        let mut v = ms.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
        Some(Self {
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
            median_ms: at(0.5),
            p95_ms: at(0.95),
            max_ms: *v.last().unwrap(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub eval: EvalResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub value: Option<f64>,
    pub noise: NoiseModel,
    pub results: Vec<StrategyReport>,
}

impl CellReport {
    pub fn result(&self, s: Strategy) -> Option<&StrategyReport> {
        self.results.iter().find(|r| r.strategy == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub name: String,
    pub param: Option<NoiseParam>,
    pub cells: Vec<CellReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub num_scenes: usize,
    pub seed: u64,
    pub rows: Vec<SweepReport>,
}

/// Detections per strategy for one rendered scene, plus timings.
fn run_scene(
    synth: &SynthScene,
    index: u64,
    noise: &NoiseModel,
    cfg: &BenchConfig,
) -> Result<Vec<(Vec<Detection>, f64)>, SynthError> {
    let maps = render_predictions(synth, noise, cfg.spec.stride, &mut render_rng(cfg.spec.seed, index))?;
    cfg.strategies
        .iter()
        .map(|&strategy| {
            let dcfg = DetectConfig { matching: MatchConfig { strategy, ..cfg.detect.matching }, ..cfg.detect };
            let start = Instant::now();
            let out = detect(&maps, &dcfg)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            Ok((out.into_iter().map(|b| b.detection).collect(), ms))
        })
        .collect()
}

/// Evaluates a scene set under one noise model for every configured strategy.
pub fn run_cell(
    scenes: &[SynthScene],
    noise: &NoiseModel,
    cfg: &BenchConfig,
) -> Result<Vec<StrategyReport>, SynthError> {
    let per_scene: Vec<Vec<(Vec<Detection>, f64)>> =
        scenes.par_iter().enumerate().map(|(i, s)| run_scene(s, i as u64, noise, cfg)).collect::<Result<_, _>>()?;
    let gts: Vec<Vec<GroundTruth>> = scenes.iter().map(SynthScene::ground_truth).collect();
    Ok(cfg
        .strategies
        .iter()
        .enumerate()
        .map(|(k, &strategy)| {
            let dets: Vec<Vec<Detection>> = per_scene.iter().map(|r| r[k].0.clone()).collect();
            let times: Vec<f64> = per_scene.iter().map(|r| r[k].1).collect();
            StrategyReport {
                strategy,
                eval: evaluate(&dets, &gts),
                latency: if cfg.timing { LatencyStats::from_samples(&times) } else { None },
            }
        })
        .collect())
}

/// Generates `n` scenes of the spec's seed, in index order.
pub fn generate_scenes(spec: &SceneSpec, n: usize) -> Result<Vec<SynthScene>, SynthError> {
    (0..n as u64).into_par_iter().map(|i| generate_scene_at(spec, i)).collect()
}

/// Runs every grid cell for every strategy.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport, SynthError> {
    cfg.validate()?;
    let mut report = BenchReport { num_scenes: cfg.num_scenes, seed: cfg.spec.seed, rows: Vec::new() };
    if cfg.num_scenes == 0 {
        return Ok(report);
    }
    let scenes = generate_scenes(&cfg.spec, cfg.num_scenes)?;
    for row in &cfg.grid {
        let mut cells = Vec::new();
        for (value, noise) in row.cells()? {
            log::info!("bench row {:?} value {:?}", row.name, value);
            cells.push(CellReport { value, noise, results: run_cell(&scenes, &noise, cfg)? });
        }
        report.rows.push(SweepReport { name: row.name.clone(), param: row.param, cells });
    }
    Ok(report)
}
