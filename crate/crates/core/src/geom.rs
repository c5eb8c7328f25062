//! Geometric primitives shared by every stage: points, clouds, rigid poses
//! and the pinhole camera.
//!
//! Frames follow the x-forward, y-left, z-up convention for the LiDAR sensor
//! and the usual x-right, y-down, z-forward convention for the camera.

use std::collections::HashSet;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::matcher::SuperpixelMap;

/// A 3D position in meters.
pub type Point3 = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-9;

/// An ordered set of points captured at one timestamp.
///
/// `source_index` carries each point's original index so that filtering,
/// deduplication and aggregation can always be traced back to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    source_index: Vec<usize>,
    timestamp: f64,
}

impl PointCloud {
    /// Builds a cloud whose source indices are `0..points.len()`.
    pub fn new(points: Vec<Point3>, timestamp: f64) -> Result<Self> {
        let source_index = (0..points.len()).collect();
        Self::with_indices(points, source_index, timestamp)
    }

    pub fn with_indices(points: Vec<Point3>, source_index: Vec<usize>, timestamp: f64) -> Result<Self> {
        if points.len() != source_index.len() {
            return Err(Error::InvalidGeometry(format!(
                "{} points but {} source indices",
                points.len(),
                source_index.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidGeometry(format!("point {i} is not finite")));
        }
        let mut seen = HashSet::with_capacity(source_index.len());
        if let Some(dup) = source_index.iter().find(|&&s| !seen.insert(s)) {
            return Err(Error::InvalidGeometry(format!("duplicate source index {dup}")));
        }
        Ok(Self { points, source_index, timestamp })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn source_index(&self) -> &[usize] {
        &self.source_index
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points whose mask entry is true, preserving order and indices.
    pub fn select(&self, mask: &[bool]) -> PointCloud {
        debug_assert_eq!(mask.len(), self.len());
        let (points, source_index) = self
            .points
            .iter()
            .zip(&self.source_index)
            .zip(mask)
            .filter(|(_, &keep)| keep)
            .map(|((p, s), _)| (*p, *s))
            .unzip();
        PointCloud { points, source_index, timestamp: self.timestamp }
    }

    /// Same indices and timestamp, new positions. Used by transforms that are
    /// known to keep every coordinate finite.
    pub(crate) fn with_points(&self, points: Vec<Point3>) -> PointCloud {
        debug_assert_eq!(points.len(), self.len());
        PointCloud { points, source_index: self.source_index.clone(), timestamp: self.timestamp }
    }

    pub fn centroid(&self) -> Option<Point3> {
        centroid(&self.points)
    }
}

pub(crate) fn centroid(points: &[Point3]) -> Option<Point3> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p);
    Some(sum / points.len() as f64)
}

/// A proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidGeometry("transform has non-finite entries".into()));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if gram_err > ORTHO_TOL {
            return Err(Error::InvalidGeometry(format!(
                "rotation is not orthonormal (|RᵀR - I| = {gram_err:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidGeometry(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self { rotation, translation })
    }

    /// Skips validation; callers guarantee `rotation` came from products of valid rotations.
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Rotation about +z by `angle` radians, followed by `translation`.
    pub fn from_yaw(angle: f64, translation: Vector3<f64>) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle, translation)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        let rotation = nalgebra::Rotation3::from_axis_angle(&axis, angle).into_inner();
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    /// `a ∘ b`: applies `b` first, then `a`.
    pub fn compose(&self, b: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * b.rotation,
            translation: self.rotation * b.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        cloud.with_points(cloud.points.iter().map(|p| self.transform_point(p)).collect())
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Parses a row-major homogeneous 4×4 matrix. The bottom row must be `[0 0 0 1]`.
    pub fn from_row_major_4x4(m: &[f64]) -> Result<Self> {
        if m.len() != 16 {
            return Err(Error::Format(format!("pose needs 16 values, got {}", m.len())));
        }
        let bottom = &m[12..16];
        if bottom.iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > ORTHO_TOL) {
            return Err(Error::InvalidGeometry(format!("pose bottom row is {bottom:?}")));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }

    pub fn to_row_major_4x4(&self) -> [f64; 16] {
        let m = self.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Row-major `[R | t]`, the on-disk layout of transform files.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rotation[(r, c)];
            }
            out[r * 4 + 3] = self.translation[r];
        }
        out
    }

    pub fn from_row_major_3x4(m: &[f64]) -> Result<Self> {
        if m.len() != 12 {
            return Err(Error::Format(format!("transform needs 12 values, got {}", m.len())));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        Self::new(rotation, Vector3::new(m[3], m[7], m[11]))
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn apply(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    t.apply(cloud)
}

/// Expresses a sensor-frame cloud in the global frame given the sensor→global pose.
pub fn sensor_to_global(frame: &PointCloud, pose: &RigidTransform) -> PointCloud {
    pose.apply(frame)
}

pub fn global_to_sensor(cloud: &PointCloud, pose: &RigidTransform) -> PointCloud {
    pose.inverse().apply(cloud)
}

/// Pinhole camera with LiDAR→camera extrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    extrinsics: RigidTransform,
    width: u32,
    height: u32,
}

impl CameraModel {
    pub fn new(intrinsics: Matrix3<f64>, extrinsics: RigidTransform, width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGeometry(format!("image size {width}x{height}")));
        }
        let (fx, fy, cx, cy) = (intrinsics[(0, 0)], intrinsics[(1, 1)], intrinsics[(0, 2)], intrinsics[(1, 2)]);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidGeometry(format!("focal lengths must be positive, got ({fx}, {fy})")));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidGeometry(format!("principal point ({cx}, {cy}) outside image")));
        }
        if intrinsics[(1, 0)] != 0.0 || intrinsics[(2, 0)] != 0.0 || intrinsics[(2, 1)] != 0.0 || intrinsics[(2, 2)] != 1.0 {
            return Err(Error::InvalidGeometry("intrinsics must be upper triangular with K[2,2] = 1".into()));
        }
        Ok(Self { intrinsics, extrinsics, width, height })
    }

    /// Convenience constructor for a skew-free camera.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32, extrinsics: RigidTransform) -> Result<Self> {
        Self::new(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0), extrinsics, width, height)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn extrinsics(&self) -> &RigidTransform {
        &self.extrinsics
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }
}

/// Rotation taking x-forward/y-left/z-up sensor axes to x-right/y-down/z-forward camera axes.
pub fn lidar_to_camera_axes() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

/// One LiDAR sweep together with its sensor→global pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub cloud: PointCloud,
    pub pose: RigidTransform,
}

/// Consecutive sweeps around a camera-synced keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    keyframe_index: usize,
    camera: CameraModel,
    superpixels: Option<SuperpixelMap>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, keyframe_index: usize, camera: CameraModel) -> Result<Self> {
        if keyframe_index >= frames.len() {
            return Err(Error::Config(format!(
                "keyframe index {keyframe_index} out of range for {} frames",
                frames.len()
            )));
        }
        if frames.windows(2).any(|w| w[0].cloud.timestamp() > w[1].cloud.timestamp()) {
            return Err(Error::Config("frames are not in temporal order".into()));
        }
        Ok(Self { frames, keyframe_index, camera, superpixels: None })
    }

    pub fn with_superpixels(mut self, map: SuperpixelMap) -> Result<Self> {
        map.check_dimensions(&self.camera)?;
        self.superpixels = Some(map);
        Ok(self)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn keyframe_index(&self) -> usize {
        self.keyframe_index
    }

    pub fn keyframe(&self) -> &Frame {
        &self.frames[self.keyframe_index]
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn superpixels(&self) -> Option<&SuperpixelMap> {
        self.superpixels.as_ref()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.cloud.timestamp()).collect()
    }

    /// Frame `index` re-expressed in the keyframe's sensor frame (ego-motion compensated).
    pub fn in_keyframe_sensor(&self, index: usize) -> PointCloud {
        let frame = &self.frames[index];
        let to_key = self.keyframe().pose.inverse().compose(&frame.pose);
        to_key.apply(&frame.cloud)
    }
}
