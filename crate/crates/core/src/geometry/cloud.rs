use crate::error::{Error, Result};
use crate::tensor::Tensor2;

pub type Point3 = [f64; 3];

/// A frame of N points, positions in meters, with optional per-point channels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Vec<Point3>,
    features: Option<Tensor2>,
    pub id: String,
}

impl PointCloud {
    pub fn new(positions: Vec<Point3>) -> Result<Self> {
        Self::with_features(positions, None)
    }

    pub fn with_features(positions: Vec<Point3>, features: Option<Tensor2>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidCloud("a cloud needs at least one point".into()));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidCloud(format!("point {i} is not finite")));
        }
        if let Some(f) = &features {
            if f.rows() != positions.len() {
                return Err(Error::InvalidCloud(format!(
                    "feature rows {} != point count {}",
                    f.rows(),
                    positions.len()
                )));
            }
            if !f.is_finite() {
                return Err(Error::InvalidCloud("features are not finite".into()));
            }
        }
        Ok(Self {
            positions,
            features,
            id: String::new(),
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// Always false for a constructed cloud.
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3] {
        &self.positions
    }

    pub fn point(&self, i: usize) -> Point3 {
        self.positions[i]
    }

    pub fn features(&self) -> Option<&Tensor2> {
        self.features.as_ref()
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.positions {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        c.map(|v| v / n)
    }

    /// N×3 position matrix.
    pub fn positions_tensor(&self) -> Tensor2 {
        Tensor2::from_fn(self.len(), 3, |i, j| self.positions[i][j])
    }

    /// Same cloud with every point moved by `t`.
    pub fn translated(&self, t: Point3) -> Self {
        Self {
            positions: self.positions.iter().map(|p| add(*p, t)).collect(),
            features: self.features.clone(),
            id: self.id.clone(),
        }
    }

    /// Reorders points so that new point `i` is old point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            positions: perm.iter().map(|&i| self.positions[i]).collect(),
            features: self.features.as_ref().map(|f| f.select_rows(perm)),
            id: self.id.clone(),
        }
    }
}

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot3(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm_sq(a: Point3) -> f64 {
    dot3(a, a)
}

#[inline]
pub fn dist_sq(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
        let bad = Tensor2::zeros(2, 4);
        assert!(PointCloud::with_features(vec![[0.0; 3]], Some(bad)).is_err());
    }

    #[test]
    fn centroid_and_translation() {
        let c = PointCloud::new(vec![[0.0, 0.0, 0.0], [2.0, 4.0, -2.0]]).unwrap();
        assert_eq!(c.centroid(), [1.0, 2.0, -1.0]);
        assert_eq!(c.translated([1.0, 0.0, 0.0]).point(1), [3.0, 4.0, -2.0]);
    }
}
