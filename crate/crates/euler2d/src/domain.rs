//! Flow domains: the disk of radius R (bounded, image-corrected kernel) and
//! the full plane.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geom::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Disk { radius: f64 },
    Plane,
}

impl Domain {
    pub fn disk(radius: f64) -> Result<Self> {
        if radius > 0.0 && radius.is_finite() {
            Ok(Domain::Disk { radius })
        } else {
            Err(SimError::InvalidParameter(format!(
                "disk radius must be positive and finite, got {radius}"
            )))
        }
    }

    pub fn unit_disk() -> Self {
        Domain::Disk { radius: 1.0 }
    }

    pub fn radius(&self) -> Option<f64> {
        match self {
            Domain::Disk { radius } => Some(*radius),
            Domain::Plane => None,
        }
    }

    /// Interior test; the plane contains every finite point.
    pub fn contains(&self, p: Vec2) -> bool {
        match self {
            Domain::Disk { radius } => p.norm() < *radius,
            Domain::Plane => p.x.is_finite() && p.y.is_finite(),
        }
    }

    pub fn check_inside(&self, p: Vec2) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(SimError::OutsideDomain(p))
        }
    }

    pub fn area(&self) -> Option<f64> {
        match self {
            Domain::Disk { radius } => Some(std::f64::consts::PI * radius * radius),
            Domain::Plane => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_contains_interior_only() {
        let d = Domain::unit_disk();
        assert!(d.contains(Vec2::new(0.5, 0.5)));
        assert!(!d.contains(Vec2::new(1.0, 0.0)));
        assert!(!d.contains(Vec2::new(0.8, 0.7)));
    }

    #[test]
    fn plane_contains_finite_points() {
        assert!(Domain::Plane.contains(Vec2::new(1e9, -1e9)));
        assert!(!Domain::Plane.contains(Vec2::new(f64::NAN, 0.0)));
    }

    #[test]
    fn invalid_radius_rejected() {
        assert!(Domain::disk(0.0).is_err());
        assert!(Domain::disk(-1.0).is_err());
    }
}
