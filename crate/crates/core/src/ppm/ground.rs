//! Single-plane RANSAC ground segmentation.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::geom::{centroid, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundParams {
    /// Maximum point-to-plane distance for a ground inlier, meters.
    pub inlier_dist: f64,
    /// Maximum angle between the plane normal and +z, radians.
    pub max_tilt: f64,
    pub iterations: usize,
    pub min_points: usize,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self { inlier_dist: 0.2, max_tilt: 15f64.to_radians(), iterations: 200, min_points: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GroundStatus {
    /// Plane `normal · p = offset` in the cloud's own frame, `normal.z > 0`.
    Plane { normal: Vector3<f64>, offset: f64, inliers: usize },
    /// No sampled plane satisfied the tilt constraint; nothing is flagged.
    NoPlane,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundSegmentation {
    pub is_ground: Vec<bool>,
    pub status: GroundStatus,
}

impl GroundSegmentation {
    pub fn ground_fraction(&self) -> f64 {
        if self.is_ground.is_empty() {
            return 0.0;
        }
        self.is_ground.iter().filter(|&&g| g).count() as f64 / self.is_ground.len() as f64
    }
}

/// Fits the dominant near-horizontal plane and flags its inliers as ground.
///
/// The cloud mean is subtracted before fitting so the sampled planes are
/// expressed around the data rather than around a distant global origin.
pub fn ground_removal(cloud: &PointCloud, params: &GroundParams, seed: u64) -> Result<GroundSegmentation> {
    if cloud.len() < params.min_points.max(3) {
        return Err(Error::InsufficientPoints { needed: params.min_points.max(3), got: cloud.len() });
    }
    let mean = centroid(cloud.points()).unwrap();
    let centered: Vec<Vector3<f64>> = cloud.points().iter().map(|p| p - mean).collect();
    let n = centered.len();
    let min_nz = params.max_tilt.cos();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best: Option<(Vector3<f64>, f64, usize)> = None;
    for _ in 0..params.iterations {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let (a, b, c) = (centered[i], centered[j], centered[k]);
        let normal = (b - a).cross(&(c - a));
        let len = normal.norm();
        if len < 1e-12 {
            continue;
        }
        let mut normal = normal / len;
        if normal.z < 0.0 {
            normal = -normal;
        }
        if normal.z < min_nz {
            continue;
        }
        let offset = normal.dot(&a);
        let inliers = centered.iter().filter(|p| (normal.dot(p) - offset).abs() <= params.inlier_dist).count();
        if best.is_none_or(|(_, _, count)| inliers > count) {
            best = Some((normal, offset, inliers));
        }
    }

    match best {
        Some((normal, offset, inliers)) => {
            let is_ground = centered.iter().map(|p| (normal.dot(p) - offset).abs() <= params.inlier_dist).collect();
            Ok(GroundSegmentation {
                is_ground,
                status: GroundStatus::Plane { normal, offset: offset + normal.dot(&mean), inliers },
            })
        }
        None => {
            log::warn!("ground removal found no plane within {:.1}° of horizontal", params.max_tilt.to_degrees());
            Ok(GroundSegmentation { is_ground: vec![false; n], status: GroundStatus::NoPlane })
        }
    }
}
