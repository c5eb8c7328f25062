//! Moving-cluster detection from per-timestamp cluster centroids.

use std::collections::BTreeMap;

use serde::Serialize;

use super::cluster::ClusterLabeling;
use crate::geom::{Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackParams {
    /// L1 displacement (meters) between consecutive centroids above which a cluster is moving.
    pub threshold: f64,
    /// Minimum member count for a timestamp's centroid to be trusted.
    pub min_track_points: usize,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self { threshold: 0.5, min_track_points: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackSample {
    pub timestamp: f64,
    pub count: usize,
    /// Present only when `count >= min_track_points`.
    pub center: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterTrack {
    pub cluster_id: usize,
    pub samples: Vec<TrackSample>,
    pub consecutive_l1_displacements: Vec<f64>,
    pub is_moving: bool,
}

impl ClusterTrack {
    pub fn max_displacement(&self) -> Option<f64> {
        self.consecutive_l1_displacements.iter().copied().reduce(f64::max)
    }
}

/// Builds one track per cluster. `timestamps` holds each point's capture time.
pub fn track_moving(cloud: &PointCloud, labeling: &ClusterLabeling, timestamps: &[f64], params: &TrackParams) -> Vec<ClusterTrack> {
    debug_assert_eq!(timestamps.len(), cloud.len());
    // cluster -> timestamp bits -> (count, sum)
    let mut acc: Vec<BTreeMap<OrderedTime, (usize, Point3)>> = vec![BTreeMap::new(); labeling.cluster_count];
    for ((p, &label), &t) in cloud.points().iter().zip(&labeling.label).zip(timestamps) {
        if label < 0 {
            continue;
        }
        let slot = acc[label as usize].entry(OrderedTime(t)).or_insert((0, Point3::zeros()));
        slot.0 += 1;
        slot.1 += p;
    }

    acc.into_iter()
        .enumerate()
        .map(|(cluster_id, per_time)| {
            let samples: Vec<TrackSample> = per_time
                .into_iter()
                .map(|(t, (count, sum))| TrackSample {
                    timestamp: t.0,
                    count,
                    center: (count >= params.min_track_points).then(|| (sum / count as f64).into()),
                })
                .collect();
            let centers: Vec<Point3> = samples.iter().filter_map(|s| s.center.map(Point3::from)).collect();
            let consecutive_l1_displacements: Vec<f64> = centers.windows(2).map(|w| (w[1] - w[0]).lp_norm(1)).collect();
            let is_moving = consecutive_l1_displacements.iter().any(|&d| d > params.threshold);
            ClusterTrack { cluster_id, samples, consecutive_l1_displacements, is_moving }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrderedTime(f64);

impl Eq for OrderedTime {}

impl PartialOrd for OrderedTime {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedTime {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
