//! Positive pair mining: per-point rigid transforms that carry moving-object
//! points of unsynced sweeps onto their position at the camera keyframe.
//!
//! Pipeline: aggregate the sweeps in the global frame, remove the ground,
//! cluster the rest, flag clusters whose centroid jumps between consecutive
//! sweeps, and register every sweep's slice of a moving cluster onto its
//! keyframe slice with ICP. Everything that is not part of a moving cluster
//! keeps the identity.

pub mod cluster;
pub mod ground;
pub mod icp;
pub mod track;

use std::collections::BTreeMap;
use std::ops::Range;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use cluster::{cluster, dbscan, ClusterLabeling, DbscanParams, NOISE};
pub use ground::{ground_removal, GroundParams, GroundSegmentation, GroundStatus};
pub use icp::{fit_rigid, icp_register, IcpParams, IcpResult, IcpStatus};
pub use track::{track_moving, ClusterTrack, TrackParams, TrackSample};

use crate::error::{Error, Result};
use crate::geom::{centroid, FrameSequence, Point3, PointCloud, RigidTransform};

/// Default number of sweeps aggregated around the keyframe (t−5 … t+5).
pub const DEFAULT_WINDOW: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpmParams {
    /// Number of sweeps centred on the keyframe that take part in mining.
    pub window: usize,
    pub ground: GroundParams,
    pub cluster: DbscanParams,
    pub track: TrackParams,
    pub icp: IcpParams,
    pub seed: u64,
}

impl Default for PpmParams {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            ground: GroundParams::default(),
            cluster: DbscanParams::default(),
            track: TrackParams::default(),
            icp: IcpParams::default(),
            seed: 0,
        }
    }
}

/// Sweeps concatenated in the global frame with per-point provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedCloud {
    /// Global-frame points; `source_index` is the position in the aggregate.
    pub cloud: PointCloud,
    pub frame_index: Vec<usize>,
    /// `source_index` of the point inside its own sweep.
    pub original_index: Vec<usize>,
    pub point_timestamp: Vec<f64>,
    /// Range of aggregate positions occupied by each sweep of the sequence.
    pub frame_ranges: Vec<Range<usize>>,
}

/// Concatenates every sweep of the sequence in the global frame.
pub fn aggregate(frames: &FrameSequence) -> Result<AggregatedCloud> {
    aggregate_frames(frames, 0..frames.frames().len())
}

fn aggregate_frames(frames: &FrameSequence, selected: Range<usize>) -> Result<AggregatedCloud> {
    let total: usize = frames.frames().iter().map(|f| f.cloud.len()).sum();
    let mut points = Vec::with_capacity(total);
    let mut frame_index = Vec::with_capacity(total);
    let mut original_index = Vec::with_capacity(total);
    let mut point_timestamp = Vec::with_capacity(total);
    let mut frame_ranges = Vec::with_capacity(frames.frames().len());
    for (k, frame) in frames.frames().iter().enumerate() {
        let start = points.len();
        if selected.contains(&k) {
            let global = frame.pose.apply(&frame.cloud);
            points.extend_from_slice(global.points());
            original_index.extend_from_slice(global.source_index());
            frame_index.extend(std::iter::repeat_n(k, global.len()));
            point_timestamp.extend(std::iter::repeat_n(frame.cloud.timestamp(), global.len()));
        }
        frame_ranges.push(start..points.len());
    }
    let cloud = PointCloud::new(points, frames.keyframe().cloud.timestamp())?;
    Ok(AggregatedCloud { cloud, frame_index, original_index, point_timestamp, frame_ranges })
}

/// Aggregate expressed in the keyframe's sensor frame.
pub fn aggregate_in_keyframe(frames: &FrameSequence) -> Result<AggregatedCloud> {
    let mut agg = aggregate(frames)?;
    agg.cloud = frames.keyframe().pose.inverse().apply(&agg.cloud);
    Ok(agg)
}

/// One transform per point of every sweep, laid out sweep after sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PerPointTransform {
    pub transforms: Vec<RigidTransform>,
    pub frame_ranges: Vec<Range<usize>>,
}

impl PerPointTransform {
    pub fn identity(frames: &FrameSequence) -> Self {
        let mut frame_ranges = Vec::new();
        let mut start = 0;
        for f in frames.frames() {
            frame_ranges.push(start..start + f.cloud.len());
            start += f.cloud.len();
        }
        Self { transforms: vec![RigidTransform::identity(); start], frame_ranges }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn frame(&self, index: usize) -> &[RigidTransform] {
        &self.transforms[self.frame_ranges[index].clone()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistrationReport {
    pub frame: usize,
    pub target_frame: usize,
    pub points: usize,
    pub rmse: f64,
    pub iterations: usize,
    pub status: IcpStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    pub cluster_id: usize,
    pub points: usize,
    pub is_moving: bool,
    pub max_l1_displacement: Option<f64>,
    /// Largest registration rmse over the cluster's sweeps, meters.
    pub rmse: Option<f64>,
    pub registrations: Vec<RegistrationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MineReport {
    pub point_count: usize,
    pub ground_fraction: f64,
    pub ground_plane_found: bool,
    pub cluster_count: usize,
    pub moving_cluster_count: usize,
    pub clusters: Vec<ClusterReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MineOutput {
    /// Transforms in the keyframe sensor frame.
    pub z: PerPointTransform,
    pub labeling: ClusterLabeling,
    pub tracks: Vec<ClusterTrack>,
    pub report: MineReport,
}

fn window_range(frames: &FrameSequence, window: usize) -> Range<usize> {
    let half = window.max(1) / 2;
    let key = frames.keyframe_index();
    key.saturating_sub(half)..(key + half + 1).min(frames.frames().len())
}

/// Runs the full mining pipeline; see the module docs.
pub fn mine(frames: &FrameSequence, params: &PpmParams) -> Result<MineOutput> {
    let agg = aggregate_frames(frames, window_range(frames, params.window))?;
    let n = agg.cloud.len();
    let mut warnings = Vec::new();

    let ground = ground_removal(&agg.cloud, &params.ground, params.seed)?;
    if ground.status == GroundStatus::NoPlane {
        warnings.push("no ground plane found; all points treated as non-ground".to_string());
    }
    let labeling = cluster(&agg.cloud, &ground.is_ground, &params.cluster);
    let tracks = track_moving(&agg.cloud, &labeling, &agg.point_timestamp, &params.track);

    // cluster -> frame -> member positions in the aggregate
    let mut members: Vec<BTreeMap<usize, Vec<usize>>> = vec![BTreeMap::new(); labeling.cluster_count];
    for (i, &label) in labeling.label.iter().enumerate() {
        if label >= 0 {
            members[label as usize].entry(agg.frame_index[i]).or_default().push(i);
        }
    }

    let key = frames.keyframe_index();
    let timestamps = frames.timestamps();
    let results: Vec<ClusterRegistration> = tracks
        .par_iter()
        .filter(|t| t.is_moving)
        .map(|t| register_cluster(t.cluster_id, &members[t.cluster_id], &agg.cloud, key, &timestamps, params))
        .collect::<Result<_>>()?;

    let mut global = vec![RigidTransform::identity(); n];
    let mut cluster_reports: Vec<ClusterReport> = tracks
        .iter()
        .map(|t| ClusterReport {
            cluster_id: t.cluster_id,
            points: members[t.cluster_id].values().map(Vec::len).sum(),
            is_moving: t.is_moving,
            max_l1_displacement: t.max_displacement(),
            rmse: None,
            registrations: Vec::new(),
        })
        .collect();
    for reg in results {
        for (frame, z) in &reg.transforms {
            for &i in &members[reg.cluster_id][frame] {
                global[i] = *z;
            }
        }
        warnings.extend(reg.warnings);
        let report = &mut cluster_reports[reg.cluster_id];
        report.rmse = reg.reports.iter().map(|r| r.rmse).reduce(f64::max);
        report.registrations = reg.reports;
    }

    // Conjugate into the keyframe sensor frame; identities stay exact.
    let key_pose = frames.keyframe().pose;
    let key_pose_inv = key_pose.inverse();
    let mut z = PerPointTransform::identity(frames);
    for (k, range) in agg.frame_ranges.iter().enumerate() {
        let out = z.frame_ranges[k].clone();
        debug_assert!(range.is_empty() || range.len() == out.len());
        for (dst, src) in out.zip(range.clone()) {
            let g = &global[src];
            if !g.is_identity() {
                z.transforms[dst] = key_pose_inv.compose(g).compose(&key_pose);
            }
        }
    }

    for w in &warnings {
        log::warn!("{w}");
    }
    let moving_cluster_count = tracks.iter().filter(|t| t.is_moving).count();
    let report = MineReport {
        point_count: n,
        ground_fraction: ground.ground_fraction(),
        ground_plane_found: ground.status != GroundStatus::NoPlane,
        cluster_count: labeling.cluster_count,
        moving_cluster_count,
        clusters: cluster_reports,
        warnings,
    };
    Ok(MineOutput { z, labeling, tracks, report })
}

struct ClusterRegistration {
    cluster_id: usize,
    /// Global-frame transform per sweep index.
    transforms: Vec<(usize, RigidTransform)>,
    reports: Vec<RegistrationReport>,
    warnings: Vec<String>,
}

fn register_pair(
    cloud: &PointCloud,
    source: &[usize],
    target: &[usize],
    params: &IcpParams,
) -> Result<IcpResult> {
    let src: Vec<Point3> = source.iter().map(|&i| cloud.points()[i]).collect();
    let dst: Vec<Point3> = target.iter().map(|&i| cloud.points()[i]).collect();
    let init = RigidTransform::from_translation(centroid(&dst).unwrap() - centroid(&src).unwrap());
    icp_register(&src, &dst, &init, params)
}

fn register_cluster(
    cluster_id: usize,
    slices: &BTreeMap<usize, Vec<usize>>,
    cloud: &PointCloud,
    key: usize,
    timestamps: &[f64],
    params: &PpmParams,
) -> Result<ClusterRegistration> {
    let mut out = ClusterRegistration { cluster_id, transforms: Vec::new(), reports: Vec::new(), warnings: Vec::new() };
    let trusted: Vec<usize> = slices
        .iter()
        .filter(|(_, m)| m.len() >= params.track.min_track_points)
        .map(|(&f, _)| f)
        .collect();
    let report = |frame: usize, target: usize, r: &IcpResult, points: usize| RegistrationReport {
        frame,
        target_frame: target,
        points,
        rmse: r.rmse,
        iterations: r.iterations,
        status: r.status,
    };

    if trusted.contains(&key) {
        for &f in trusted.iter().filter(|&&f| f != key) {
            let r = register_pair(cloud, &slices[&f], &slices[&key], &params.icp)?;
            out.reports.push(report(f, key, &r, slices[&f].len()));
            out.transforms.push((f, r.transform));
        }
        return Ok(out);
    }

    // Absent at the keyframe: anchor on the trusted sweep closest in time and
    // chain neighbouring registrations toward it.
    let key_time = timestamps[key];
    let Some(&anchor) = trusted
        .iter()
        .min_by(|&&a, &&b| (timestamps[a] - key_time).abs().total_cmp(&(timestamps[b] - key_time).abs()))
    else {
        out.warnings.push(format!("moving cluster {cluster_id} has no sweep with enough points; left untransformed"));
        return Ok(out);
    };
    out.warnings.push(format!(
        "moving cluster {cluster_id} is not observed at the keyframe; registered to sweep {anchor} instead"
    ));
    let pos = trusted.iter().position(|&f| f == anchor).unwrap();
    for side in [trusted[..pos].iter().rev().copied().collect::<Vec<_>>(), trusted[pos + 1..].to_vec()] {
        let mut to_anchor = RigidTransform::identity();
        let mut toward = anchor;
        for f in side {
            let r = register_pair(cloud, &slices[&f], &slices[&toward], &params.icp)?;
            out.reports.push(report(f, toward, &r, slices[&f].len()));
            to_anchor = to_anchor.compose(&r.transform);
            out.transforms.push((f, to_anchor));
            toward = f;
        }
    }
    Ok(out)
}

/// Draws inter-frames with probability proportional to their time offset from the keyframe.
pub struct InterframeSampler {
    candidates: Vec<usize>,
    weights: Option<WeightedIndex<f64>>,
    rng: ChaCha8Rng,
}

impl InterframeSampler {
    pub fn new(frames: &FrameSequence, seed: u64) -> Result<Self> {
        let key = frames.keyframe_index();
        let key_time = frames.keyframe().cloud.timestamp();
        let candidates: Vec<usize> = (0..frames.frames().len()).filter(|&i| i != key).collect();
        let offsets: Vec<f64> = candidates.iter().map(|&i| (frames.frames()[i].cloud.timestamp() - key_time).abs()).collect();
        Self::from_offsets(candidates, &offsets, seed)
    }

    fn from_offsets(candidates: Vec<usize>, offsets: &[f64], seed: u64) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Contract("no inter-frame to sample".into()));
        }
        // All offsets zero: fall back to a uniform draw.
        let weights = WeightedIndex::new(offsets).ok();
        Ok(Self { candidates, weights, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn next_index(&mut self) -> usize {
        use rand::Rng;
        let slot = match &self.weights {
            Some(w) => w.sample(&mut self.rng),
            None => self.rng.random_range(0..self.candidates.len()),
        };
        self.candidates[slot]
    }
}

/// A single seeded draw of an inter-frame index.
pub fn sample_interframe(frames: &FrameSequence, seed: u64) -> Result<usize> {
    Ok(InterframeSampler::new(frames, seed)?.next_index())
}

/// Sweep `index` in the keyframe sensor frame, with its mined transforms applied.
pub fn transform_interframe(frames: &FrameSequence, z: &PerPointTransform, index: usize) -> PointCloud {
    let cloud = frames.in_keyframe_sensor(index);
    let moved = cloud.points().iter().zip(z.frame(index)).map(|(p, t)| t.transform_point(p)).collect();
    PointCloud::with_indices(moved, cloud.source_index().to_vec(), cloud.timestamp())
        .expect("rigid transforms keep points finite")
}
