//! Synthetic LiDAR scenes with known rigid motion, used to validate mining
//! and matching end to end.
//!
//! Objects are sampled once on their surface in their own frame, so every
//! sweep sees the same object points moved rigidly. The ground is resampled
//! around the ego vehicle each sweep. The sensor frame is x-forward, y-left,
//! z-up, mounted `sensor_height` meters above the flat ground plane `z = 0`.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{lidar_to_camera_axes, CameraModel, Frame, FrameSequence, Point3, PointCloud, RigidTransform};
use crate::matcher::SuperpixelMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
}

impl Shape {
    fn area(&self) -> f64 {
        match *self {
            Shape::Box { size: [a, b, c] } => 2.0 * (a * b + a * c + b * c),
            Shape::Cylinder { radius, height } => 2.0 * std::f64::consts::PI * radius * (radius + height),
        }
    }

    /// Uniform point on the surface, centred on the origin.
    fn sample_surface(&self, rng: &mut ChaCha8Rng) -> Point3 {
        match *self {
            Shape::Box { size: [a, b, c] } => {
                let faces = [b * c, b * c, a * c, a * c, a * b, a * b];
                let total: f64 = faces.iter().sum();
                let mut pick = rng.random_range(0.0..total);
                let face = faces.iter().position(|&f| {
                    pick -= f;
                    pick < 0.0
                });
                let (u, v) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
                match face.unwrap_or(5) {
                    0 => Point3::new(-a / 2.0, u * b, v * c),
                    1 => Point3::new(a / 2.0, u * b, v * c),
                    2 => Point3::new(u * a, -b / 2.0, v * c),
                    3 => Point3::new(u * a, b / 2.0, v * c),
                    4 => Point3::new(u * a, v * b, -c / 2.0),
                    _ => Point3::new(u * a, v * b, c / 2.0),
                }
            }
            Shape::Cylinder { radius, height } => {
                let side = 2.0 * radius * height;
                let caps = radius * radius;
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                if rng.random_range(0.0..side + caps) < side {
                    let z = rng.random_range(-0.5..0.5) * height;
                    Point3::new(radius * theta.cos(), radius * theta.sin(), z)
                } else {
                    let r = radius * rng.random_range(0.0f64..1.0).sqrt();
                    let z = if rng.random_bool(0.5) { height / 2.0 } else { -height / 2.0 };
                    Point3::new(r * theta.cos(), r * theta.sin(), z)
                }
            }
        }
    }

    fn is_valid(&self) -> bool {
        match self {
            Shape::Box { size } => size.iter().all(|s| *s > 0.0),
            Shape::Cylinder { radius, height } => *radius > 0.0 && *height > 0.0,
        }
    }
}

/// Planar motion starting at `t = 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Motion {
    #[default]
    Stationary,
    /// Global-frame velocity, m/s. Heading is kept.
    ConstantVelocity { velocity: [f64; 3] },
    /// Forward `speed` (m/s) along the current heading while turning at `yaw_rate` (rad/s).
    ConstantTurn { speed: f64, yaw_rate: f64 },
}

impl Motion {
    /// Pose at time `t` of a body that starts at `position` with heading `yaw`.
    pub fn pose_at(&self, position: Vector3<f64>, yaw: f64, t: f64) -> RigidTransform {
        match *self {
            Motion::Stationary => RigidTransform::from_yaw(yaw, position),
            Motion::ConstantVelocity { velocity } => RigidTransform::from_yaw(yaw, position + Vector3::from(velocity) * t),
            Motion::ConstantTurn { speed, yaw_rate } => {
                let heading = yaw + yaw_rate * t;
                let offset = if yaw_rate.abs() < 1e-12 {
                    Vector3::new(yaw.cos(), yaw.sin(), 0.0) * speed * t
                } else {
                    let k = speed / yaw_rate;
                    Vector3::new(k * (heading.sin() - yaw.sin()), -k * (heading.cos() - yaw.cos()), 0.0)
                };
                RigidTransform::from_yaw(heading, position + offset)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Initial centre in the global frame, meters.
    pub center: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    /// Surface samples per square meter.
    pub density: f64,
    #[serde(default)]
    pub motion: Motion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundSpec {
    /// Radius around the ego vehicle that is sampled, meters.
    pub extent: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    pub points_per_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoSpec {
    #[serde(default)]
    pub start: [f64; 2],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub motion: Motion,
    #[serde(default = "default_sensor_height")]
    pub sensor_height: f64,
}

fn default_sensor_height() -> f64 {
    1.8
}

impl Default for EgoSpec {
    fn default() -> Self {
        Self { start: [0.0, 0.0], yaw: 0.0, motion: Motion::Stationary, sensor_height: default_sensor_height() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Camera position in the LiDAR frame, meters.
    #[serde(default)]
    pub offset: [f64; 3],
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self { fx: 1266.0, fy: 1266.0, cx: 800.0, cy: 450.0, width: 1600, height: 900, offset: [0.0; 3] }
    }
}

impl CameraSpec {
    pub fn build(&self) -> Result<CameraModel> {
        let rotation = lidar_to_camera_axes();
        let translation = -(rotation * Vector3::from(self.offset));
        let extrinsics = RigidTransform::new(rotation, translation)?;
        CameraModel::pinhole(self.fx, self.fy, self.cx, self.cy, self.width, self.height, extrinsics)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    #[serde(default)]
    pub seed: u64,
    pub frame_count: usize,
    /// Seconds between sweeps.
    pub frame_period: f64,
    pub keyframe_index: usize,
    pub ground: GroundSpec,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub ego: EgoSpec,
    /// Horizontal LiDAR range, meters.
    pub lidar_range: f64,
    #[serde(default)]
    pub camera: CameraSpec,
    /// Attach an all-zero superpixel map to the keyframe.
    #[serde(default)]
    pub uniform_superpixels: bool,
}

impl SceneScript {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.frame_count == 0 || self.keyframe_index >= self.frame_count {
            return bad(format!("keyframe {} outside {} frames", self.keyframe_index, self.frame_count));
        }
        if !(self.frame_period > 0.0) {
            return bad(format!("frame period must be positive, got {}", self.frame_period));
        }
        if !(self.ground.extent > 0.0) || !(self.ground.noise_sigma >= 0.0) {
            return bad("ground extent must be positive and noise non-negative".into());
        }
        if !(self.lidar_range > 0.0) {
            return bad("lidar range must be positive".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.density > 0.0) || !o.shape.is_valid() {
                return bad(format!("object {i} needs positive density and dimensions"));
            }
        }
        Ok(())
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 * self.frame_period
    }

    pub fn ego_pose(&self, frame: usize) -> RigidTransform {
        let e = &self.ego;
        let start = Vector3::new(e.start[0], e.start[1], e.sensor_height);
        e.motion.pose_at(start, e.yaw, self.timestamp(frame))
    }

    pub fn object_pose(&self, object: usize, frame: usize) -> RigidTransform {
        let o = &self.objects[object];
        o.motion.pose_at(Vector3::from(o.center), o.yaw, self.timestamp(frame))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointLabel {
    Ground,
    Static,
    Dynamic,
}

impl PointLabel {
    pub fn code(self) -> u8 {
        match self {
            PointLabel::Ground => 0,
            PointLabel::Static => 1,
            PointLabel::Dynamic => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PointLabel::Ground),
            1 => Some(PointLabel::Static),
            2 => Some(PointLabel::Dynamic),
            _ => None,
        }
    }
}

/// A generated scene plus its ground truth, laid out sweep after sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub frames: FrameSequence,
    /// Displacement carrying each point to its keyframe-time position, in the keyframe sensor frame.
    pub flow: Vec<Vector3<f64>>,
    pub labels: Vec<PointLabel>,
    /// Which scripted object produced each point.
    pub object: Vec<Option<usize>>,
}

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds the sweeps described by the script. Deterministic in `script.seed`.
pub fn generate(script: &SceneScript) -> Result<GeneratedScene> {
    script.validate()?;
    let camera = script.camera.build()?;

    let templates: Vec<Vec<Point3>> = script
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut rng = derived_rng(script.seed, 1_000_000 + i as u64);
            let n = (o.shape.area() * o.density).ceil() as usize;
            (0..n).map(|_| o.shape.sample_surface(&mut rng)).collect()
        })
        .collect();

    let key = script.keyframe_index;
    let key_pose = script.ego_pose(key);
    let key_rot_t = key_pose.rotation().transpose();
    let ground_noise = Normal::new(0.0, script.ground.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let radius = script.ground.extent.min(script.lidar_range);

    let mut frames = Vec::with_capacity(script.frame_count);
    let mut flow = Vec::new();
    let mut labels = Vec::new();
    let mut object = Vec::new();
    for k in 0..script.frame_count {
        let pose = script.ego_pose(k);
        let to_sensor = pose.inverse();
        let sensor_origin = *pose.translation();
        let mut rng = derived_rng(script.seed, k as u64);
        let mut points = Vec::new();

        for _ in 0..script.ground.points_per_frame {
            let r = radius * rng.random_range(0.0f64..1.0).sqrt();
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let z = if script.ground.noise_sigma > 0.0 { ground_noise.sample(&mut rng) } else { 0.0 };
            let g = Point3::new(sensor_origin.x + r * theta.cos(), sensor_origin.y + r * theta.sin(), z);
            points.push(to_sensor.transform_point(&g));
            flow.push(Vector3::zeros());
            labels.push(PointLabel::Ground);
            object.push(None);
        }

        for (i, template) in templates.iter().enumerate() {
            let now = script.object_pose(i, k);
            let at_key = script.object_pose(i, key);
            let moving = script.objects[i].motion != Motion::Stationary;
            for q in template {
                let g = now.transform_point(q);
                if (g - sensor_origin).xy().norm() > script.lidar_range {
                    continue;
                }
                points.push(to_sensor.transform_point(&g));
                let f = if moving { key_rot_t * (at_key.transform_point(q) - g) } else { Vector3::zeros() };
                flow.push(f);
                labels.push(if moving { PointLabel::Dynamic } else { PointLabel::Static });
                object.push(Some(i));
            }
        }

        frames.push(Frame { cloud: PointCloud::new(points, script.timestamp(k))?, pose });
    }

    let mut sequence = FrameSequence::new(frames, key, camera)?;
    if script.uniform_superpixels {
        sequence = sequence.with_superpixels(SuperpixelMap::uniform(script.camera.width, script.camera.height))?;
    }
    Ok(GeneratedScene { frames: sequence, flow, labels, object })
}

/// `count` points uniform in the axis-aligned cube `[0, extent]³`.
pub fn uniform_cube(count: usize, extent: f64, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..count)
        .map(|_| Point3::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent), rng.random_range(0.0..extent)))
        .collect();
    PointCloud::new(points, 0.0)
}

/// The scene used throughout the tests: flat ground, two parked objects and
/// one vehicle-sized box moving at `velocity`, observed for 11 sweeps at 20 Hz
/// with the keyframe in the middle.
pub fn reference_script(velocity: [f64; 3], seed: u64) -> SceneScript {
    SceneScript {
        seed,
        frame_count: 11,
        frame_period: 0.05,
        keyframe_index: 5,
        ground: GroundSpec { extent: 40.0, noise_sigma: 0.0, points_per_frame: 4000 },
        objects: vec![
            ObjectSpec {
                shape: Shape::Box { size: [2.0, 2.0, 2.0] },
                center: [12.0, 8.0, 1.0],
                yaw: 0.3,
                density: 40.0,
                motion: Motion::Stationary,
            },
            ObjectSpec {
                shape: Shape::Cylinder { radius: 0.4, height: 3.0 },
                center: [15.0, -7.0, 1.5],
                yaw: 0.0,
                density: 40.0,
                motion: Motion::Stationary,
            },
            ObjectSpec {
                shape: Shape::Box { size: [4.5, 1.8, 1.5] },
                center: [20.0, -1.0, 1.3],
                yaw: 0.0,
                density: 60.0,
                motion: Motion::ConstantVelocity { velocity },
            },
        ],
        ego: EgoSpec::default(),
        lidar_range: 60.0,
        camera: CameraSpec::default(),
        uniform_superpixels: false,
    }
}
