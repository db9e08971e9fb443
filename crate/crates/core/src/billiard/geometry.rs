//! Planar billiard domains with a chaos parameter `a`.
//!
//! Both families interpolate from an integrable reference shape at `a = 0`:
//!
//! * **Sinai**: an equilateral triangle of side `L` with a disk of radius `l`
//!   removed. With [`DiskPlacement::Vertex`] the disk is centred on a vertex and
//!   `l = a * L / 2`, so the cut at `a = 1` reaches the midpoints of the two
//!   adjacent sides and the remaining region stays connected. With
//!   [`DiskPlacement::Centroid`] the disk sits at the centroid with
//!   `l = a * r_in / 2`, `r_in` the inradius.
//! * **Stadium**: the square `[0, L]^2` with a quarter disk of radius `l = a * L`
//!   centred at `(L, 0)` attached flush to its right side.
//!
//! Unless built with an explicit side length, the shape is rescaled to unit area.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BilliardKind {
    Sinai,
    Stadium,
}

impl fmt::Display for BilliardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BilliardKind::Sinai => "sinai",
            BilliardKind::Stadium => "stadium",
        })
    }
}

impl FromStr for BilliardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sinai" => Ok(BilliardKind::Sinai),
            "stadium" => Ok(BilliardKind::Stadium),
            other => Err(Error::InvalidParameter(format!(
                "unknown billiard kind `{other}`"
            ))),
        }
    }
}

/// Where the Sinai disk is centred. Ignored for the stadium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiskPlacement {
    #[default]
    Vertex,
    Centroid,
}

impl fmt::Display for DiskPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiskPlacement::Vertex => "vertex",
            DiskPlacement::Centroid => "centroid",
        })
    }
}

impl FromStr for DiskPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vertex" => Ok(DiskPlacement::Vertex),
            "centroid" => Ok(DiskPlacement::Centroid),
            other => Err(Error::InvalidParameter(format!(
                "unknown disk placement `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilliardGeometry {
    kind: BilliardKind,
    a: f64,
    placement: DiskPlacement,
    side: f64,
    radius: f64,
}

/// Unit-area geometry with the default (vertex) disk placement.
pub fn make_geometry(kind: BilliardKind, a: f64) -> Result<BilliardGeometry> {
    BilliardGeometry::new(kind, a, DiskPlacement::Vertex)
}

impl BilliardGeometry {
    /// Unit-area geometry.
    pub fn new(kind: BilliardKind, a: f64, placement: DiskPlacement) -> Result<Self> {
        validate_a(a)?;
        let area_per_side2 = area_factor(kind, a, placement);
        if area_per_side2 <= 0.0 {
            return Err(Error::EmptyRegion {
                kind: kind.to_string(),
                a,
            });
        }
        Self::with_side(kind, a, placement, area_per_side2.sqrt().recip())
    }

    /// Geometry with a fixed side length and no area renormalization.
    pub fn with_side(
        kind: BilliardKind,
        a: f64,
        placement: DiskPlacement,
        side: f64,
    ) -> Result<Self> {
        validate_a(a)?;
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "side length must be positive, got {side}"
            )));
        }
        if area_factor(kind, a, placement) <= 0.0 {
            return Err(Error::EmptyRegion {
                kind: kind.to_string(),
                a,
            });
        }
        let radius = side * radius_factor(kind, a, placement);
        Ok(Self {
            kind,
            a,
            placement,
            side,
            radius,
        })
    }

    pub fn kind(&self) -> BilliardKind {
        self.kind
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn placement(&self) -> DiskPlacement {
        self.placement
    }

    /// Triangle side (Sinai) or square side (stadium).
    pub fn side(&self) -> f64 {
        self.side
    }

    /// Radius of the removed (Sinai) or attached (stadium) disk.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Exact area of the region.
    pub fn area(&self) -> f64 {
        area_factor(self.kind, self.a, self.placement) * self.side * self.side
    }

    pub fn bounding_box(&self) -> BoundingBox {
        let l = self.side;
        match self.kind {
            BilliardKind::Sinai => BoundingBox {
                x_min: 0.0,
                y_min: 0.0,
                x_max: l,
                y_max: 0.5 * SQRT3 * l,
            },
            BilliardKind::Stadium => BoundingBox {
                x_min: 0.0,
                y_min: 0.0,
                x_max: l + self.radius,
                y_max: l,
            },
        }
    }

    /// Open-set membership: boundary points are outside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let l = self.side;
        let r2 = self.radius * self.radius;
        match self.kind {
            BilliardKind::Sinai => {
                let in_triangle = y > 0.0 && SQRT3 * x - y > 0.0 && SQRT3 * (l - x) - y > 0.0;
                if !in_triangle {
                    return false;
                }
                let (cx, cy) = match self.placement {
                    DiskPlacement::Vertex => (0.0, 0.0),
                    DiskPlacement::Centroid => (0.5 * l, l / (2.0 * SQRT3)),
                };
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy > r2
            }
            BilliardKind::Stadium => {
                if y <= 0.0 {
                    return false;
                }
                if x > 0.0 && x < l && y < l {
                    return true;
                }
                let dx = x - l;
                x >= l && dx * dx + y * y < r2
            }
        }
    }
}

fn validate_a(a: f64) -> Result<()> {
    if !(a.is_finite() && (0.0..=1.0).contains(&a)) {
        return Err(Error::InvalidParameter(format!(
            "chaos parameter a must lie in [0, 1], got {a}"
        )));
    }
    Ok(())
}

fn radius_factor(kind: BilliardKind, a: f64, placement: DiskPlacement) -> f64 {
    match (kind, placement) {
        (BilliardKind::Sinai, DiskPlacement::Vertex) => 0.5 * a,
        (BilliardKind::Sinai, DiskPlacement::Centroid) => 0.5 * a / (2.0 * SQRT3),
        (BilliardKind::Stadium, _) => a,
    }
}

/// Area divided by side squared.
fn area_factor(kind: BilliardKind, a: f64, placement: DiskPlacement) -> f64 {
    let rho = radius_factor(kind, a, placement);
    match (kind, placement) {
        // 60 degree sector; fully inside the triangle since rho <= 1/2 < sqrt(3)/2.
        (BilliardKind::Sinai, DiskPlacement::Vertex) => 0.25 * SQRT3 - PI * rho * rho / 6.0,
        // Whole disk; fully inside since rho <= r_in / 2.
        (BilliardKind::Sinai, DiskPlacement::Centroid) => 0.25 * SQRT3 - PI * rho * rho,
        (BilliardKind::Stadium, _) => 1.0 + 0.25 * PI * rho * rho,
    }
}
