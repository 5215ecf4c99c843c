//! Axis-aligned boxes, central regions and the μ selection policy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate box ({tlx}, {tly}, {brx}, {bry}): need tlx < brx and tly < bry")]
    Degenerate { tlx: f64, tly: f64, brx: f64, bry: f64 },
    #[error("non-finite box coordinate")]
    NonFinite,
    #[error("central-region scale {0} outside (0, 1]")]
    InvalidMu(f64),
}

/// Which corner of a box a keypoint stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CornerKind {
    TopLeft,
    BottomRight,
}

impl CornerKind {
    pub fn short_name(self) -> &'static str {
        match self {
            Self::TopLeft => "tl",
            Self::BottomRight => "br",
        }
    }
}

/// A position in image pixels (or feature cells, where noted).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned box with `tlx < brx` and `tly < bry`.
///
/// Serialized as `[tlx, tly, brx, bry]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    tlx: f64,
    tly: f64,
    brx: f64,
    bry: f64,
}

impl BBox {
    pub fn new(tlx: f64, tly: f64, brx: f64, bry: f64) -> Result<Self, GeometryError> {
        if ![tlx, tly, brx, bry].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if tlx < brx && tly < bry {
            Ok(Self { tlx, tly, brx, bry })
        } else {
            Err(GeometryError::Degenerate { tlx, tly, brx, bry })
        }
    }

    pub fn from_corners(tl: Point, br: Point) -> Result<Self, GeometryError> {
        Self::new(tl.x, tl.y, br.x, br.y)
    }

    #[inline]
    pub fn tlx(&self) -> f64 {
        self.tlx
    }
    #[inline]
    pub fn tly(&self) -> f64 {
        self.tly
    }
    #[inline]
    pub fn brx(&self) -> f64 {
        self.brx
    }
    #[inline]
    pub fn bry(&self) -> f64 {
        self.bry
    }

    pub fn top_left(&self) -> Point {
        Point::new(self.tlx, self.tly)
    }

    pub fn bottom_right(&self) -> Point {
        Point::new(self.brx, self.bry)
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.brx - self.tlx
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.bry - self.tly
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Closed containment test; boundary points are inside.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.tlx && p.x <= self.brx && p.y >= self.tly && p.y <= self.bry
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.tlx >= self.tlx && other.tly >= self.tly && other.brx <= self.brx && other.bry <= self.bry
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.brx.min(other.brx) - self.tlx.max(other.tlx)).max(0.0);
        let h = (self.bry.min(other.bry) - self.tly.max(other.tly)).max(0.0);
        w * h
    }

    /// True when the interiors intersect (touching edges do not count).
    pub fn overlaps(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0.0
    }

    /// Uniformly scales every coordinate.
    pub fn scaled(&self, factor: f64) -> Result<Self, GeometryError> {
        Self::new(self.tlx * factor, self.tly * factor, self.brx * factor, self.bry * factor)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.tlx, b.tly, b.brx, b.bry]
    }
}

/// A scored, categorized box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "bbox")]
    pub bbox: BBox,
    pub category: u32,
    pub score: f64,
}

/// Chooses the central-region scale from the candidate box's area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MuPolicy {
    pub large_mu: f64,
    pub small_mu: f64,
    /// Boxes with area strictly greater than this use `large_mu`.
    pub area_threshold: f64,
}

impl Default for MuPolicy {
    fn default() -> Self {
        Self { large_mu: 1.0 / 2.1, small_mu: 1.0 / 2.4, area_threshold: 3500.0 }
    }
}

impl MuPolicy {
    pub fn validate(&self) -> Result<(), GeometryError> {
        for mu in [self.large_mu, self.small_mu] {
            check_mu(mu)?;
        }
        Ok(())
    }
}

fn check_mu(mu: f64) -> Result<(), GeometryError> {
    if mu > 0.0 && mu <= 1.0 {
        Ok(())
    } else {
        Err(GeometryError::InvalidMu(mu))
    }
}

pub fn box_center(b: &BBox) -> Point {
    Point::new((b.tlx + b.brx) / 2.0, (b.tly + b.bry) / 2.0)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// The concentric sub-box whose sides are `mu` times the box's sides.
pub fn central_region(b: &BBox, mu: f64) -> Result<BBox, GeometryError> {
    check_mu(mu)?;
    let c = box_center(b);
    let half_w = b.width() / 2.0 * mu;
    let half_h = b.height() / 2.0 * mu;
    BBox::new(c.x - half_w, c.y - half_h, c.x + half_w, c.y + half_h)
}

pub fn select_mu(b: &BBox, policy: &MuPolicy) -> f64 {
    if b.area() > policy.area_threshold {
        policy.large_mu
    } else {
        policy.small_mu
    }
}
