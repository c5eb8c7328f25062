//! Training-time point cloud augmentation: yaw rotation, axis flips and a
//! random cuboid drop.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

/// Axis-aligned box; points with every coordinate inside `[min, max]` are dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cuboid {
    pub min: Point3,
    pub max: Point3,
}

impl Cuboid {
    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    /// Rotation about z, radians.
    pub yaw: f64,
    pub flip_x: bool,
    pub flip_y: bool,
    /// Expressed after rotation and flips.
    pub drop: Option<Cuboid>,
}

impl Augmentation {
    pub fn identity() -> Self {
        Self { yaw: 0.0, flip_x: false, flip_y: false, drop: None }
    }

    /// Rotation followed by the flips, as a single orthogonal matrix.
    pub fn linear_part(&self) -> Matrix3<f64> {
        let (s, c) = self.yaw.sin_cos();
        let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let flip = Matrix3::from_diagonal(&Vector3::new(
            if self.flip_x { -1.0 } else { 1.0 },
            if self.flip_y { -1.0 } else { 1.0 },
            1.0,
        ));
        flip * rot
    }

    /// Transforms every point and drops those inside the cuboid. Source indices follow their points.
    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        let m = self.linear_part();
        let mut points = Vec::with_capacity(cloud.len());
        let mut indices = Vec::with_capacity(cloud.len());
        for (p, &i) in cloud.points().iter().zip(cloud.source_index()) {
            let q = m * p;
            if self.drop.is_some_and(|c| c.contains(&q)) {
                continue;
            }
            points.push(q);
            indices.push(i);
        }
        PointCloud::with_indices(points, indices, cloud.timestamp())
    }
}

pub const DROP_SIDE_RANGE: (f64, f64) = (2.0, 10.0);

/// Draws rotation, flips and cuboid for `cloud`. The cuboid centre is uniform in the
/// bounding box of the rotated and flipped cloud.
pub fn sample_augmentation(cloud: &PointCloud, seed: u64) -> Result<Augmentation> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aug = Augmentation {
        yaw: rng.random_range(0.0..std::f64::consts::TAU),
        flip_x: rng.random_bool(0.5),
        flip_y: rng.random_bool(0.5),
        drop: None,
    };
    let m = aug.linear_part();
    let mut lo = Point3::repeat(f64::INFINITY);
    let mut hi = Point3::repeat(f64::NEG_INFINITY);
    for p in cloud.points() {
        let q = m * p;
        lo = lo.inf(&q);
        hi = hi.sup(&q);
    }
    let mut center = Point3::zeros();
    let mut half = Point3::zeros();
    for i in 0..3 {
        center[i] = if hi[i] > lo[i] { rng.random_range(lo[i]..=hi[i]) } else { lo[i] };
        half[i] = rng.random_range(DROP_SIDE_RANGE.0..=DROP_SIDE_RANGE.1) / 2.0;
    }
    aug.drop = Some(Cuboid { min: center - half, max: center + half });
    Ok(aug)
}

pub fn augment(cloud: &PointCloud, seed: u64) -> Result<PointCloud> {
    sample_augmentation(cloud, seed)?.apply(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> PointCloud {
        let pts = (0..200).map(|i| Point3::new(i as f64 * 0.3, (i % 7) as f64, (i % 3) as f64 * 0.5)).collect();
        PointCloud::new(pts, 0.0).unwrap()
    }

    #[test]
    fn flip_x_only() {
        let c = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0)], 0.0).unwrap();
        let aug = Augmentation { flip_x: true, ..Augmentation::identity() };
        assert_eq!(aug.apply(&c).unwrap().points()[0], Point3::new(-1.0, 2.0, 3.0));
    }

    #[test]
    fn identity_keeps_everything() {
        let c = cloud();
        assert_eq!(Augmentation::identity().apply(&c).unwrap(), c);
    }

    #[test]
    fn seeded_and_subset() {
        let c = cloud();
        let a = augment(&c, 4).unwrap();
        assert_eq!(a, augment(&c, 4).unwrap());
        assert!(a.len() <= c.len());
        let aug = sample_augmentation(&c, 4).unwrap();
        let d = aug.drop.unwrap();
        for i in 0..3 {
            let side = d.max[i] - d.min[i];
            assert!((2.0..=10.0).contains(&side));
        }
    }

    #[test]
    fn empty_is_error() {
        let c = PointCloud::new(vec![], 0.0).unwrap();
        assert!(matches!(augment(&c, 0), Err(Error::EmptyCloud)));
    }
}
