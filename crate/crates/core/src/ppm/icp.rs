//! Point-to-point ICP with closed-form (SVD) rigid updates.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{centroid, Point3, RigidTransform};
use crate::spatial::PointIndex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iters: usize,
    /// Stop once an iteration improves the rmse by less than this, meters.
    pub tolerance: f64,
    /// Correspondences farther apart than this are ignored, meters.
    pub max_correspondence_dist: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self { max_iters: 50, tolerance: 1e-6, max_correspondence_dist: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IcpStatus {
    Converged,
    MaxIterations,
    /// The cross-covariance was rank deficient (e.g. collinear points); the initial guess is returned.
    Degenerate,
    /// Fewer than three correspondences survived the distance gate.
    NoCorrespondences,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub rmse: f64,
    pub iterations: usize,
    pub status: IcpStatus,
    /// Rmse of every accepted iterate, in order; an iterate worse than its predecessor ends the run.
    pub rmse_history: Vec<f64>,
}

/// Least-squares rigid fit `R·src + t ≈ dst` (Kabsch). `None` when the
/// cross-covariance has rank below two.
pub fn fit_rigid(src: &[Point3], dst: &[Point3]) -> Option<RigidTransform> {
    let cs = centroid(src)?;
    let cd = centroid(dst)?;
    let mut h = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        h += (a - cs) * (b - cd).transpose();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let (smax, smid) = {
        let mut s = [sv[0], sv[1], sv[2]];
        s.sort_by(|a, b| b.total_cmp(a));
        (s[0], s[1])
    };
    if !(smax > 0.0) || smid <= smax * 1e-10 {
        return None;
    }
    let u = svd.u?;
    let v = svd.v_t?.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = cd - rotation * cs;
    Some(RigidTransform::from_parts_unchecked(rotation, translation))
}

struct Association {
    src: Vec<Point3>,
    dst: Vec<Point3>,
    rmse: f64,
}

fn associate(source: &[Point3], target: &[Point3], index: &PointIndex, t: &RigidTransform, max_d2: f64) -> Association {
    let mut src = Vec::with_capacity(source.len());
    let mut dst = Vec::with_capacity(source.len());
    let mut sq = 0.0;
    for p in source {
        let q = t.transform_point(p);
        let (j, d2) = index.nearest(&q);
        if d2 <= max_d2 {
            src.push(q);
            dst.push(target[j]);
            sq += d2;
        }
    }
    let rmse = if src.is_empty() { f64::INFINITY } else { (sq / src.len() as f64).sqrt() };
    Association { src, dst, rmse }
}

/// Registers `source` onto `target` starting from `init`; returns the best transform seen.
pub fn icp_register(source: &[Point3], target: &[Point3], init: &RigidTransform, params: &IcpParams) -> Result<IcpResult> {
    for pts in [source, target] {
        if pts.len() < 3 {
            return Err(Error::InsufficientPoints { needed: 3, got: pts.len() });
        }
    }
    let index = PointIndex::new(target);
    let max_d2 = params.max_correspondence_dist * params.max_correspondence_dist;

    let mut current = *init;
    let mut best = (current, f64::INFINITY);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut status = IcpStatus::MaxIterations;

    loop {
        let assoc = associate(source, target, &index, &current, max_d2);
        if assoc.src.len() < 3 {
            if history.is_empty() {
                return Ok(IcpResult {
                    transform: *init,
                    rmse: assoc.rmse,
                    iterations: 0,
                    status: IcpStatus::NoCorrespondences,
                    rmse_history: history,
                });
            }
            status = IcpStatus::NoCorrespondences;
            break;
        }
        let previous = history.last().copied().unwrap_or(f64::INFINITY);
        if assoc.rmse > previous {
            // A worse iterate is discarded; the previous one is kept as the result.
            status = IcpStatus::Converged;
            break;
        }
        history.push(assoc.rmse);
        if assoc.rmse < best.1 {
            best = (current, assoc.rmse);
        }
        if previous - assoc.rmse < params.tolerance {
            status = IcpStatus::Converged;
            break;
        }
        if iterations == params.max_iters {
            break;
        }
        let Some(step) = fit_rigid(&assoc.src, &assoc.dst) else {
            let rmse = associate(source, target, &index, init, max_d2).rmse;
            return Ok(IcpResult {
                transform: *init,
                rmse,
                iterations,
                status: IcpStatus::Degenerate,
                rmse_history: history,
            });
        };
        current = step.compose(&current);
        iterations += 1;
    }

    Ok(IcpResult { transform: best.0, rmse: best.1, iterations, status, rmse_history: history })
}
