//! Ground-truth scenes to training-target maps.
//!
//! A corner at image position `(x, y)` lands in heatmap cell
//! `(i, j) = (floor(y/s), floor(x/s))`. Two-channel maps store `x` in
//! channel 0 and `y` in channel 1. Shift and offset maps are only written
//! at ground-truth corner cells; when several objects share a cell the
//! later object wins.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_center, BBox, CornerKind, GeometryError};
use crate::kernels::{LossError, ShiftPair};
use crate::tensor::Tensor;

pub const DEFAULT_STRIDE: u32 = 4;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("object {0} outside image")]
    OutsideImage(usize),
    #[error("image size {width}x{height} is not divisible by stride {stride}")]
    IndivisibleSize { width: u32, height: u32, stride: u32 },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("object {object}: {kind:?} corner maps to cell ({i}, {j}) outside the {rows}x{cols} map")]
    CornerOutsideMap { object: usize, kind: CornerKind, i: i64, j: i64, rows: usize, cols: usize },
    #[error("object {object}: centripetal shift needs positive log argument, got {value}")]
    EncodingDegenerate { object: usize, value: f64 },
    #[error("object {object}: category {category} >= num_categories {num_categories}")]
    CategoryOutOfRange { object: usize, category: u32, num_categories: u32 },
    #[error("object {object}: mask must have {want} binary values, got {got}")]
    BadMask { object: usize, got: usize, want: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub bbox: BBox,
    pub category: u32,
    /// Optional 28×28 row-major binary mask.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<u8>>,
}

impl SceneObject {
    pub fn new(bbox: BBox, category: u32) -> Self {
        Self { bbox, category, mask: None }
    }
}

/// Ground-truth annotation for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: u32,
    pub height: u32,
    pub objects: Vec<SceneObject>,
    /// Heatmap channel count; defaults to one past the largest category id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_categories: Option<u32>,
}

impl Scene {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, objects: Vec::new(), num_categories: None }
    }

    pub fn with_objects(width: u32, height: u32, objects: Vec<SceneObject>) -> Self {
        Self { width, height, objects, num_categories: None }
    }

    pub fn num_categories(&self) -> u32 {
        self.num_categories.unwrap_or_else(|| self.objects.iter().map(|o| o.category + 1).max().unwrap_or(1)).max(1)
    }

    pub fn map_size(&self, stride: u32) -> (usize, usize) {
        ((self.height / stride) as usize, (self.width / stride) as usize)
    }

    /// Checks image/stride compatibility, box bounds, categories and masks.
    pub fn validate(&self, stride: u32) -> Result<(), EncodeError> {
        if stride == 0 {
            return Err(EncodeError::ZeroStride);
        }
        if !self.width.is_multiple_of(stride) || !self.height.is_multiple_of(stride) {
            return Err(EncodeError::IndivisibleSize { width: self.width, height: self.height, stride });
        }
        let nc = self.num_categories();
        let want = crate::kernels::loss::MASK_SIDE.pow(2);
        for (k, o) in self.objects.iter().enumerate() {
            let b = &o.bbox;
            if b.tlx() < 0.0 || b.tly() < 0.0 || b.brx() > self.width as f64 || b.bry() > self.height as f64 {
                return Err(EncodeError::OutsideImage(k));
            }
            if o.category >= nc {
                return Err(EncodeError::CategoryOutOfRange { object: k, category: o.category, num_categories: nc });
            }
            if let Some(m) = &o.mask {
                if m.len() != want || m.iter().any(|&v| v > 1) {
                    return Err(EncodeError::BadMask { object: k, got: m.len(), want });
                }
            }
        }
        Ok(())
    }
}

/// Gaussian splat radius for heatmap targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusPolicy {
    /// Fixed radius in cells; 0 writes a single 1.0 per corner.
    Fixed(u32),
    /// Largest radius whose corner displacements keep IoU with the box at
    /// or above the given overlap.
    Overlap(f64),
}

impl Default for RadiusPolicy {
    fn default() -> Self {
        Self::Overlap(0.3)
    }
}

impl RadiusPolicy {
    /// Radius in cells for a box of the given size in heatmap cells.
    pub fn radius(&self, width: f64, height: f64) -> usize {
        match *self {
            Self::Fixed(r) => r as usize,
            Self::Overlap(m) => gaussian_radius(height, width, m).floor().max(0.0) as usize,
        }
    }
}

/// Corner-jitter radius bound for a `height × width` box (three-case
/// quadratic bound from the corner-detection lineage).
pub fn gaussian_radius(height: f64, width: f64, min_overlap: f64) -> f64 {
    let (h, w, m) = (height, width, min_overlap);
    let b1 = h + w;
    let c1 = w * h * (1.0 - m) / (1.0 + m);
    let r1 = (b1 + (b1 * b1 - 4.0 * c1).max(0.0).sqrt()) / 2.0;

    let b2 = 2.0 * (h + w);
    let c2 = (1.0 - m) * w * h;
    let r2 = (b2 + (b2 * b2 - 16.0 * c2).max(0.0).sqrt()) / 2.0;

    let a3 = 4.0 * m;
    let b3 = -2.0 * m * (h + w);
    let c3 = (m - 1.0) * w * h;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).max(0.0).sqrt()) / 2.0;
    r1.min(r2).min(r3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub stride: u32,
    pub radius: RadiusPolicy,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { stride: DEFAULT_STRIDE, radius: RadiusPolicy::default() }
    }
}

/// Boolean per-cell mask of where the sparse targets are defined.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl CellMask {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bits: vec![false; rows * cols] }
    }

    pub fn set(&mut self, i: usize, j: usize) {
        self.bits[i * self.cols + j] = true;
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Set cells in row-major order.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(k, _)| (k / self.cols, k % self.cols)).collect()
    }

    pub fn from_cells(rows: usize, cols: usize, cells: &[(usize, usize)]) -> Self {
        let mut m = Self::new(rows, cols);
        for &(i, j) in cells {
            m.set(i, j);
        }
        m
    }
}

/// Every target map the encoder produces for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps {
    pub stride: u32,
    pub tl_heat: Tensor,
    pub br_heat: Tensor,
    pub tl_off: Tensor,
    pub br_off: Tensor,
    pub tl_cs: Tensor,
    pub br_cs: Tensor,
    pub tl_guide: Tensor,
    pub br_guide: Tensor,
    pub tl_valid: CellMask,
    pub br_valid: CellMask,
    /// Per-object 28×28 mask targets as 0/1 floats.
    pub masks: Vec<Option<Vec<f32>>>,
}

/// The corner cell `(row, col)` of a position, unchecked.
pub fn corner_cell(x: f64, y: f64, stride: f64) -> (i64, i64) {
    ((y / stride).floor() as i64, (x / stride).floor() as i64)
}

/// Sub-cell remainder `(x/s - floor(x/s), y/s - floor(y/s))`.
pub fn local_offset(x: f64, y: f64, stride: f64) -> [f64; 2] {
    let (u, v) = (x / stride, y / stride);
    [u - u.floor(), v - v.floor()]
}

/// Log-space centripetal shifts of one box.
pub fn centripetal_shift(b: &BBox, stride: f64) -> Result<ShiftPair, f64> {
    let c = box_center(b);
    let args = [(c.x - b.tlx()) / stride, (c.y - b.tly()) / stride, (b.brx() - c.x) / stride, (b.bry() - c.y) / stride];
    if let Some(bad) = args.iter().find(|a| !(**a > 0.0)) {
        return Err(*bad);
    }
    Ok(ShiftPair { tl: [args[0].ln(), args[1].ln()], br: [args[2].ln(), args[3].ln()] })
}

/// Linear corner-to-center shifts in stride units (the center-regression
/// baseline's encoding); `exp` of the centripetal shifts.
pub fn linear_center_shift(b: &BBox, stride: f64) -> ShiftPair {
    let c = box_center(b);
    ShiftPair {
        tl: [(c.x - b.tlx()) / stride, (c.y - b.tly()) / stride],
        br: [(b.brx() - c.x) / stride, (b.bry() - c.y) / stride],
    }
}

/// Guiding shifts from the floor-mapped corner cells to the center.
///
/// tl: `(ctx/s - floor(tlx/s), cty/s - floor(tly/s))`.
/// br is mirrored so positive values point toward the center:
/// `(floor(brx/s) - ctx/s, floor(bry/s) - cty/s)`.
pub fn guiding_shift(b: &BBox, stride: f64) -> ShiftPair {
    let c = box_center(b);
    let (cx, cy) = (c.x / stride, c.y / stride);
    ShiftPair {
        tl: [cx - (b.tlx() / stride).floor(), cy - (b.tly() / stride).floor()],
        br: [(b.brx() / stride).floor() - cx, (b.bry() / stride).floor() - cy],
    }
}

fn checked_cell(
    object: usize,
    kind: CornerKind,
    x: f64,
    y: f64,
    stride: f64,
    rows: usize,
    cols: usize,
) -> Result<(usize, usize), EncodeError> {
    let (i, j) = corner_cell(x, y, stride);
    if i < 0 || j < 0 || i >= rows as i64 || j >= cols as i64 {
        return Err(EncodeError::CornerOutsideMap { object, kind, i, j, rows, cols });
    }
    Ok((i as usize, j as usize))
}

/// Corner cells of every object, `(tl, br)`.
pub fn corner_cells(scene: &Scene, stride: u32) -> Result<Vec<((usize, usize), (usize, usize))>, EncodeError> {
    let (rows, cols) = scene.map_size(stride);
    let s = stride as f64;
    scene
        .objects
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let b = &o.bbox;
            Ok((
                checked_cell(k, CornerKind::TopLeft, b.tlx(), b.tly(), s, rows, cols)?,
                checked_cell(k, CornerKind::BottomRight, b.brx(), b.bry(), s, rows, cols)?,
            ))
        })
        .collect()
}

fn splat(heat: &mut Tensor, c: usize, i: usize, j: usize, radius: usize) {
    let (rows, cols) = (heat.height(), heat.width());
    if radius == 0 {
        heat.set(c, i, j, heat.get(c, i, j).max(1.0));
        return;
    }
    let sigma = (2 * radius + 1) as f64 / 6.0;
    let r = radius as i64;
    for di in -r..=r {
        for dj in -r..=r {
            let (ii, jj) = (i as i64 + di, j as i64 + dj);
            if ii < 0 || jj < 0 || ii >= rows as i64 || jj >= cols as i64 {
                continue;
            }
            let g = (-((di * di + dj * dj) as f64) / (2.0 * sigma * sigma)).exp();
            // drop the negligible tail, as float32 targets would
            let g = if g < f64::EPSILON { 0.0 } else { g as f32 };
            let (ii, jj) = (ii as usize, jj as usize);
            if g > heat.get(c, ii, jj) {
                heat.set(c, ii, jj, g);
            }
        }
    }
}

/// Per-category corner heatmaps `(tl, br)`, each `(C, H/s, W/s)`.
pub fn encode_heatmaps(scene: &Scene, stride: u32, radius: RadiusPolicy) -> Result<(Tensor, Tensor), EncodeError> {
    scene.validate(stride)?;
    let (rows, cols) = scene.map_size(stride);
    let nc = scene.num_categories() as usize;
    let mut tl = Tensor::zeros(nc, rows, cols);
    let mut br = Tensor::zeros(nc, rows, cols);
    let cells = corner_cells(scene, stride)?;
    for (o, (tlc, brc)) in scene.objects.iter().zip(cells) {
        let r = radius.radius(o.bbox.width() / stride as f64, o.bbox.height() / stride as f64);
        splat(&mut tl, o.category as usize, tlc.0, tlc.1, r);
        splat(&mut br, o.category as usize, brc.0, brc.1, r);
    }
    Ok((tl, br))
}

fn sparse_pair_maps(
    scene: &Scene,
    stride: u32,
    mut value: impl FnMut(usize, &SceneObject) -> Result<ShiftPair, EncodeError>,
) -> Result<(Tensor, Tensor), EncodeError> {
    scene.validate(stride)?;
    let (rows, cols) = scene.map_size(stride);
    let mut tl = Tensor::zeros(2, rows, cols);
    let mut br = Tensor::zeros(2, rows, cols);
    let cells = corner_cells(scene, stride)?;
    for (k, (o, (tlc, brc))) in scene.objects.iter().zip(cells).enumerate() {
        let v = value(k, o)?;
        for ch in 0..2 {
            tl.set(ch, tlc.0, tlc.1, v.tl[ch] as f32);
            br.set(ch, brc.0, brc.1, v.br[ch] as f32);
        }
    }
    Ok((tl, br))
}

/// Local-offset maps `(tl, br)`.
pub fn encode_local_offsets(scene: &Scene, stride: u32) -> Result<(Tensor, Tensor), EncodeError> {
    let s = stride as f64;
    sparse_pair_maps(scene, stride, |_, o| {
        let b = &o.bbox;
        Ok(ShiftPair { tl: local_offset(b.tlx(), b.tly(), s), br: local_offset(b.brx(), b.bry(), s) })
    })
}

/// Centripetal-shift maps `(tl, br)`.
pub fn encode_centripetal_shifts(scene: &Scene, stride: u32) -> Result<(Tensor, Tensor), EncodeError> {
    let s = stride as f64;
    sparse_pair_maps(scene, stride, |k, o| {
        centripetal_shift(&o.bbox, s).map_err(|value| EncodeError::EncodingDegenerate { object: k, value })
    })
}

/// Guiding-shift maps `(tl, br)`.
pub fn encode_guiding_shifts(scene: &Scene, stride: u32) -> Result<(Tensor, Tensor), EncodeError> {
    let s = stride as f64;
    sparse_pair_maps(scene, stride, |_, o| Ok(guiding_shift(&o.bbox, s)))
}

/// Linear center-shift maps `(tl, br)` for the center-regression baseline.
pub fn encode_linear_shifts(scene: &Scene, stride: u32) -> Result<(Tensor, Tensor), EncodeError> {
    let s = stride as f64;
    sparse_pair_maps(scene, stride, |_, o| Ok(linear_center_shift(&o.bbox, s)))
}

/// Encodes every target map for `scene`.
pub fn encode(scene: &Scene, cfg: &EncoderConfig) -> Result<TargetMaps, EncodeError> {
    let s = cfg.stride;
    let (tl_heat, br_heat) = encode_heatmaps(scene, s, cfg.radius)?;
    let (tl_off, br_off) = encode_local_offsets(scene, s)?;
    let (tl_cs, br_cs) = encode_centripetal_shifts(scene, s)?;
    let (tl_guide, br_guide) = encode_guiding_shifts(scene, s)?;
    let (rows, cols) = scene.map_size(s);
    let mut tl_valid = CellMask::new(rows, cols);
    let mut br_valid = CellMask::new(rows, cols);
    for (tlc, brc) in corner_cells(scene, s)? {
        tl_valid.set(tlc.0, tlc.1);
        br_valid.set(brc.0, brc.1);
    }
    let masks = scene.objects.iter().map(|o| o.mask.as_ref().map(|m| m.iter().map(|&v| v as f32).collect())).collect();
    Ok(TargetMaps {
        stride: s,
        tl_heat,
        br_heat,
        tl_off,
        br_off,
        tl_cs,
        br_cs,
        tl_guide,
        br_guide,
        tl_valid,
        br_valid,
        masks,
    })
}

/// Reads the `(tl, br)` 2-vectors of every object back out of a pair of
/// sparse maps at its ground-truth corner cells.
pub fn gather_at_corners(scene: &Scene, stride: u32, tl: &Tensor, br: &Tensor) -> Result<Vec<ShiftPair>, EncodeError> {
    Ok(corner_cells(scene, stride)?
        .into_iter()
        .map(|(a, b)| ShiftPair {
            tl: [tl.get(0, a.0, a.1) as f64, tl.get(1, a.0, a.1) as f64],
            br: [br.get(0, b.0, b.1) as f64, br.get(1, b.0, b.1) as f64],
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

/// An object whose rounded-corner-to-center offset cannot be log-encoded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodabilityFlag {
    pub object: usize,
    pub corner: CornerKind,
    pub axis: Axis,
    /// Offset in cells from the floor-mapped corner toward the center.
    pub offset: f64,
}

/// Flags objects for which a log-space encoding measured from the rounded
/// heatmap corner to the exact center would need `log` of a value `<= 0`.
/// With floor mapping only the br corner can fail.
pub fn validate_center_regression_encodable(scene: &Scene, stride: u32) -> Vec<EncodabilityFlag> {
    let s = stride as f64;
    let mut flags = Vec::new();
    for (k, o) in scene.objects.iter().enumerate() {
        let g = guiding_shift(&o.bbox, s);
        for (corner, v) in [(CornerKind::TopLeft, g.tl), (CornerKind::BottomRight, g.br)] {
            for (axis, off) in [(Axis::X, v[0]), (Axis::Y, v[1])] {
                if off <= 0.0 {
                    flags.push(EncodabilityFlag { object: k, corner, axis, offset: off });
                }
            }
        }
    }
    flags
}
