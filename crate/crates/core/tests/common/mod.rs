#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use nalgebra::Vector3;
use pointpair::matcher::{match_unsynced, project_point};
use pointpair::ppm::{aggregate_in_keyframe, mine, MineOutput, PpmParams, NOISE};
use pointpair::synth::{generate, reference_script, EgoSpec, GeneratedScene, Motion, PointLabel, SceneScript};
use pointpair::{Point3, PointCloud, RigidTransform};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Threshold used for the 2 m/s scene: one 20 Hz step moves the object 0.1 m.
pub const SLOW_MOVER_THRESHOLD: f64 = 0.05;

/// Noiseless scene: ground, two parked objects and one box crossing the view
/// laterally at 2 m/s about 20 m ahead, 11 sweeps at 20 Hz, ego driving forward.
pub fn slow_mover_script(seed: u64) -> SceneScript {
    let mut s = reference_script([0.0, 2.0, 0.0], seed);
    s.ego = EgoSpec { motion: Motion::ConstantVelocity { velocity: [3.0, 0.0, 0.0] }, ..EgoSpec::default() };
    s
}

pub fn slow_mover_params() -> PpmParams {
    let mut p = PpmParams::default();
    p.track.threshold = SLOW_MOVER_THRESHOLD;
    p
}

pub struct SceneRun {
    pub scene: GeneratedScene,
    pub output: MineOutput,
    /// Aggregate of all sweeps in the keyframe sensor frame.
    pub points: Vec<Point3>,
}

pub fn run(script: &SceneScript, params: &PpmParams) -> SceneRun {
    let scene = generate(script).unwrap();
    let output = mine(&scene.frames, params).unwrap();
    let points = aggregate_in_keyframe(&scene.frames).unwrap().cloud.points().to_vec();
    SceneRun { scene, output, points }
}

impl SceneRun {
    /// Ground-truth transform (keyframe sensor frame) for object `object` in sweep `frame`.
    pub fn truth_transform(&self, script: &SceneScript, object: usize, frame: usize) -> RigidTransform {
        let key = script.keyframe_index;
        let kp = script.ego_pose(key);
        let motion = script.object_pose(object, key).compose(&script.object_pose(object, frame).inverse());
        kp.inverse().compose(&motion).compose(&kp)
    }

    /// Largest translation error of the mined transforms over every dynamic point, per sweep.
    pub fn translation_errors(&self, script: &SceneScript) -> Vec<f64> {
        let z = &self.output.z;
        (0..script.frame_count)
            .map(|k| {
                z.frame_ranges[k]
                    .clone()
                    .filter(|&i| self.scene.labels[i] == PointLabel::Dynamic)
                    .map(|i| {
                        let truth = self.truth_transform(script, self.scene.object[i].unwrap(), k);
                        (z.transforms[i].translation() - truth.translation()).norm()
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Pixel distance between each matched dynamic point of sweep `frame` and the
    /// projection of its true keyframe position.
    pub fn reprojection_errors(&self, frame: usize) -> Vec<f64> {
        let seq = &self.scene.frames;
        let range = self.output.z.frame_ranges[frame].clone();
        let cloud = PointCloud::new(self.points[range.clone()].to_vec(), seq.frames()[frame].cloud.timestamp()).unwrap();
        let corr = match_unsynced(seq.camera(), &cloud, self.output.z.frame(frame), None, seq.keyframe().cloud.timestamp())
            .unwrap();
        corr.entries
            .iter()
            .filter_map(|c| {
                let i = range.start + c.point_index;
                if self.scene.labels[i] != PointLabel::Dynamic {
                    return None;
                }
                let truth = project_point(seq.camera(), &(self.points[i] + self.scene.flow[i]))?;
                Some(((c.u - truth.u).powi(2) + (c.v - truth.v).powi(2)).sqrt())
            })
            .collect()
    }

    pub fn predicted_flow(&self) -> Vec<Vector3<f64>> {
        pointpair::flow::predicted_flow(&self.points, &self.output.z).unwrap()
    }
}

/// Quadratic-time DBSCAN: breadth-first expansion over core points, border
/// points attached to the cluster of their lowest-index core neighbour.
pub fn brute_force_dbscan(points: &[Point3], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let neighbours: Vec<Vec<usize>> =
        (0..n).map(|i| (0..n).filter(|&j| (points[i] - points[j]).norm() <= eps).collect()).collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut label = vec![NOISE; n];
    let mut next = 0;
    for seed in 0..n {
        if !core[seed] || label[seed] != NOISE {
            continue;
        }
        let mut queue = VecDeque::from([seed]);
        label[seed] = next;
        while let Some(i) = queue.pop_front() {
            for &j in &neighbours[i] {
                if core[j] && label[j] == NOISE {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if !core[i] {
            if let Some(&c) = neighbours[i].iter().find(|&&j| core[j]) {
                label[i] = label[c];
            }
        }
    }
    label
}

pub fn same_up_to_permutation(a: &[i32], b: &[i32]) -> bool {
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| {
        if (x == NOISE) != (y == NOISE) {
            return false;
        }
        *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x
    })
}


/// 500 points: three random boxes of points plus uniform clutter.
pub fn random_blob_scene(rng: &mut ChaCha8Rng) -> Vec<Point3> {
    let mut pts = Vec::with_capacity(500);
    let blobs: Vec<(Point3, f64)> = (0..3)
        .map(|_| {
            let c = Point3::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), rng.random_range(0.0..2.0));
            (c, rng.random_range(0.3..1.5))
        })
        .collect();
    while pts.len() < 420 {
        let (c, r) = blobs[pts.len() % 3];
        pts.push(c + Point3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r)));
    }
    while pts.len() < 500 {
        pts.push(Point3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(0.0..3.0)));
    }
    pts
}


pub fn random_pose(rng: &mut ChaCha8Rng, max_deg: f64, max_t: f64) -> RigidTransform {
    let axis = loop {
        let a = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if a.norm() > 0.1 {
            break a;
        }
    };
    let dir = loop {
        let d = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if d.norm() > 0.1 {
            break d.normalize();
        }
    };
    let angle = rng.random_range(0.0..max_deg).to_radians();
    RigidTransform::from_axis_angle(&axis, angle, dir * rng.random_range(0.0..max_t))
}

pub fn blob(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| Point3::new(rng.random_range(-2.5..2.5), rng.random_range(-1.0..1.0), rng.random_range(-0.8..0.8)))
        .collect()
}

