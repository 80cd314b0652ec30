use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::se3::RigidMotion;
use crate::Point3;

/// An ordered, immutable set of 3D points belonging to one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    id: String,
    points: Vec<Point3>,
    bbox_diagonal: f64,
}

impl PointCloud {
    pub fn new(id: impl Into<String>, points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        let bbox_diagonal = bbox_diagonal(&points);
        Ok(Self {
            id: id.into(),
            points,
            bbox_diagonal,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Length of the diagonal of the axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> f64 {
        self.bbox_diagonal
    }

    /// Points mapped through `motion`.
    pub fn transformed_points(&self, motion: &RigidMotion) -> Vec<Point3> {
        self.points
            .iter()
            .map(|p| motion.transform_point(p))
            .collect()
    }

    pub fn transformed(&self, motion: &RigidMotion) -> PointCloud {
        let points = self.transformed_points(motion);
        let bbox_diagonal = bbox_diagonal(&points);
        PointCloud {
            id: self.id.clone(),
            points,
            bbox_diagonal,
        }
    }
}

pub(crate) fn bbox_diagonal(points: &[Point3]) -> f64 {
    let mut lo = Point3::repeat(f64::INFINITY);
    let mut hi = Point3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if points.is_empty() {
        0.0
    } else {
        (hi - lo).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(matches!(
            PointCloud::new("a", vec![]),
            Err(Error::EmptyCloud)
        ));
        let pts = vec![Point3::zeros(), Point3::new(f64::NAN, 0.0, 0.0)];
        assert!(matches!(
            PointCloud::new("a", pts),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn diagonal_of_unit_cube() {
        let pts = vec![
            Point3::zeros(),
            Point3::new(1.0, 1.0, 1.0),
            Point3::new(0.5, 0.2, 0.9),
        ];
        let c = PointCloud::new("cube", pts).unwrap();
        assert!((c.bbox_diagonal() - 3f64.sqrt()).abs() < 1e-15);
    }
}
