use crate::geometry::{norm_sq, sub, Point3, PointCloud};

/// Cloud mapped into the unit cube: centred on its centroid, divided by the
/// largest centred norm, then taken from `[-1, 1]` to `[0, 1]` per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedCloud {
    pub coords: Vec<Point3>,
    /// Meters per normalized half-unit.
    pub scale: f64,
    pub centroid: Point3,
}

impl NormalizedCloud {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Maps a normalized coordinate back to meters.
    pub fn denormalize(&self, mu: Point3) -> Point3 {
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = (2.0 * mu[a] - 1.0) * self.scale + self.centroid[a];
        }
        p
    }
}

pub fn normalize_cloud(cloud: &PointCloud) -> NormalizedCloud {
    let centroid = cloud.centroid();
    let max_norm = cloud
        .positions()
        .iter()
        .map(|&p| norm_sq(sub(p, centroid)))
        .fold(0.0, f64::max)
        .sqrt();
    let scale = if max_norm > 0.0 { max_norm } else { 1.0 };
    let coords = cloud
        .positions()
        .iter()
        .map(|&p| {
            let c = sub(p, centroid);
            // |c| ≤ scale, so each axis already lies in [-1, 1]; the clamp only
            // absorbs rounding
            c.map(|v| ((v / scale + 1.0) * 0.5).clamp(0.0, 1.0))
        })
        .collect();
    NormalizedCloud {
        coords,
        scale,
        centroid,
    }
}
