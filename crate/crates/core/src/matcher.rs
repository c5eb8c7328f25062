//! Point-to-pixel correspondences at a camera keyframe.
//!
//! Synced points are projected directly; points from an unsynced sweep are
//! first moved by their per-point transform and then projected. There is no
//! occlusion handling: every point that lands inside the image is matched.

use crate::error::{Error, Result};
use crate::geom::{CameraModel, FrameSequence, Point3, PointCloud, RigidTransform};

/// Points closer to the image plane than this (camera-frame depth, meters) are out of view.
pub const DEPTH_MIN: f64 = 1e-3;

/// Label value marking pixels that belong to no superpixel.
pub const UNLABELED: u32 = u32::MAX;

/// Row-major grid of superpixel ids, `height` rows of `width` labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    count: u32,
}

impl SuperpixelMap {
    /// Validates that the labels fill the grid and that the ids, ignoring
    /// [`UNLABELED`], are exactly `0..K`.
    pub fn new(width: u32, height: u32, labels: Vec<u32>) -> Result<Self> {
        let expected = width as usize * height as usize;
        if labels.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{width}x{height} = {expected} labels"),
                actual: format!("{} labels", labels.len()),
            });
        }
        let max = labels.iter().copied().filter(|&l| l != UNLABELED).max();
        let count = max.map_or(0, |m| m + 1);
        let mut present = vec![false; count as usize];
        for &l in labels.iter().filter(|&&l| l != UNLABELED) {
            present[l as usize] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::Format(format!("superpixel ids are not contiguous: id {missing} is missing")));
        }
        Ok(Self { width, height, labels, count })
    }

    /// A map where every pixel carries id 0.
    pub fn uniform(width: u32, height: u32) -> Self {
        Self { width, height, labels: vec![0; width as usize * height as usize], count: 1 }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of distinct superpixel ids.
    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn label_at(&self, col: u32, row: u32) -> Option<u32> {
        if col >= self.width || row >= self.height {
            return None;
        }
        let l = self.labels[row as usize * self.width as usize + col as usize];
        (l != UNLABELED).then_some(l)
    }

    pub(crate) fn check_dimensions(&self, camera: &CameraModel) -> Result<()> {
        if self.width != camera.width() || self.height != camera.height() {
            return Err(Error::Config(format!(
                "superpixel map is {}x{} but the camera image is {}x{}",
                self.width,
                self.height,
                camera.width(),
                camera.height()
            )));
        }
        Ok(())
    }
}

/// Image coordinates of a projected point plus its camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects a single sensor-frame point; `None` when behind the near plane or off the image.
pub fn project_point(camera: &CameraModel, p: &Point3) -> Option<Projection> {
    let pc = camera.extrinsics().transform_point(p);
    if pc.z <= DEPTH_MIN {
        return None;
    }
    let k = camera.intrinsics();
    let h = k * pc;
    let (u, v) = (h.x / h.z, h.y / h.z);
    let inside = (0.0..camera.width() as f64).contains(&u) && (0.0..camera.height() as f64).contains(&v);
    inside.then_some(Projection { u, v, depth: pc.z })
}

/// Per-point projection of a keyframe sensor-frame cloud.
pub fn project(camera: &CameraModel, cloud: &PointCloud) -> Vec<Option<Projection>> {
    cloud.points().iter().map(|p| project_point(camera, p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// `source_index` of the matched point.
    pub point_index: usize,
    pub u: f64,
    pub v: f64,
    pub superpixel: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub entries: Vec<Correspondence>,
    pub frame_of_points: f64,
    pub frame_of_image: f64,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn point_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.point_index).collect()
    }
}

fn build(
    camera: &CameraModel,
    cloud: &PointCloud,
    transforms: Option<&[RigidTransform]>,
    superpixels: Option<&SuperpixelMap>,
    frame_of_image: f64,
) -> Result<CorrespondenceSet> {
    if let Some(sp) = superpixels {
        sp.check_dimensions(camera)?;
    }
    let mut entries = Vec::new();
    for (i, (p, &point_index)) in cloud.points().iter().zip(cloud.source_index()).enumerate() {
        let moved;
        let p = match transforms.map(|z| &z[i]) {
            Some(z) if !z.is_identity() => {
                moved = z.transform_point(p);
                &moved
            }
            _ => p,
        };
        let Some(proj) = project_point(camera, p) else { continue };
        let superpixel = match superpixels {
            Some(sp) => match sp.label_at(proj.u.floor() as u32, proj.v.floor() as u32) {
                Some(id) => Some(id),
                None => continue,
            },
            None => None,
        };
        entries.push(Correspondence { point_index, u: proj.u, v: proj.v, superpixel });
    }
    entries.sort_by_key(|e| e.point_index);
    Ok(CorrespondenceSet { entries, frame_of_points: cloud.timestamp(), frame_of_image })
}

/// Matches a cloud captured at the camera's own timestamp.
pub fn match_synced(camera: &CameraModel, cloud: &PointCloud, superpixels: Option<&SuperpixelMap>) -> Result<CorrespondenceSet> {
    build(camera, cloud, None, superpixels, cloud.timestamp())
}

/// Matches an unsynced sweep (already expressed in the keyframe sensor frame)
/// after moving each point by its transform.
pub fn match_unsynced(
    camera: &CameraModel,
    cloud: &PointCloud,
    transforms: &[RigidTransform],
    superpixels: Option<&SuperpixelMap>,
    image_timestamp: f64,
) -> Result<CorrespondenceSet> {
    if transforms.len() != cloud.len() {
        return Err(Error::Contract(format!(
            "{} transforms supplied for {} points",
            transforms.len(),
            cloud.len()
        )));
    }
    build(camera, cloud, Some(transforms), superpixels, image_timestamp)
}

/// For every LiDAR timestamp, the index of the image closest in time; ties go
/// to the earlier image. Both lists must be non-empty and sorted.
pub fn nearest_alignment_times(lidar: &[f64], images: &[f64]) -> Result<Vec<usize>> {
    if lidar.is_empty() || images.is_empty() {
        return Err(Error::Contract("timestamp lists must be non-empty".into()));
    }
    for (name, ts) in [("lidar", lidar), ("image", images)] {
        if ts.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::Contract(format!("{name} timestamps are not sorted")));
        }
    }
    Ok(lidar
        .iter()
        .map(|&t| {
            let after = images.partition_point(|&s| s < t);
            match (after.checked_sub(1), images.get(after)) {
                (Some(before), Some(&next)) => {
                    if next - t < t - images[before] {
                        after
                    } else {
                        before
                    }
                }
                (Some(before), None) => before,
                (None, _) => after,
            }
        })
        .collect())
}

/// The "nearest alignment" baseline: pair each sweep with the temporally closest image.
pub fn nearest_alignment(frames: &FrameSequence, image_timestamps: &[f64]) -> Result<Vec<usize>> {
    nearest_alignment_times(&frames.timestamps(), image_timestamps)
}
