//! Euclidean DBSCAN over the non-ground points.
//!
//! A point's neighborhood is every point within `eps` (inclusive), itself
//! included; it is a core point when the neighborhood holds at least `min_pts`
//! points. Clusters are the connected components of core points. A border
//! point joins the cluster of its lowest-index core neighbor. Cluster ids are
//! numbered by the smallest core point index they contain.

use rayon::prelude::*;

use crate::geom::{Point3, PointCloud};
use crate::spatial::PointIndex;

pub const NOISE: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 0.5, min_pts: 10 }
    }
}

/// Per-point cluster id over a whole cloud; ground points are always [`NOISE`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLabeling {
    pub label: Vec<i32>,
    pub is_ground: Vec<bool>,
    pub cluster_count: usize,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Keep the smaller index as root so ids stay order-stable.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Labels for `points`; returns the labels and the number of clusters.
pub fn dbscan(points: &[Point3], params: &DbscanParams) -> (Vec<i32>, usize) {
    let n = points.len();
    if n == 0 {
        return (Vec::new(), 0);
    }
    let index = PointIndex::new(points);
    let neighbors = |i: usize| index.within(&points[i], params.eps);

    let is_core: Vec<bool> = (0..n).into_par_iter().map(|i| neighbors(i).len() >= params.min_pts).collect();

    let core_links: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| if is_core[i] { neighbors(i).into_iter().filter(|&j| is_core[j] && j > i).collect() } else { Vec::new() })
        .collect();
    let mut sets = DisjointSet::new(n);
    for (i, links) in core_links.iter().enumerate() {
        for &j in links {
            sets.union(i, j);
        }
    }

    let mut labels = vec![NOISE; n];
    let mut root_label = vec![NOISE; n];
    let mut count = 0usize;
    for i in (0..n).filter(|&i| is_core[i]) {
        let root = sets.find(i);
        if root_label[root] == NOISE {
            root_label[root] = count as i32;
            count += 1;
        }
        labels[i] = root_label[root];
    }

    let border: Vec<(usize, i32)> = (0..n)
        .into_par_iter()
        .filter(|&i| !is_core[i])
        .filter_map(|i| neighbors(i).into_iter().find(|&j| is_core[j]).map(|j| (i, labels[j])))
        .collect();
    for (i, label) in border {
        labels[i] = label;
    }
    (labels, count)
}

/// Clusters the points whose `is_ground` flag is false.
pub fn cluster(cloud: &PointCloud, is_ground: &[bool], params: &DbscanParams) -> ClusterLabeling {
    let (idx, pts): (Vec<usize>, Vec<Point3>) = cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(i, _)| !is_ground[*i])
        .map(|(i, p)| (i, *p))
        .unzip();
    let (sub_labels, cluster_count) = dbscan(&pts, params);
    let mut label = vec![NOISE; cloud.len()];
    for (i, l) in idx.into_iter().zip(sub_labels) {
        label[i] = l;
    }
    ClusterLabeling { label, is_ground: is_ground.to_vec(), cluster_count }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(center: Point3, n: usize, spacing: f64) -> Vec<Point3> {
        (0..n)
            .map(|i| center + Point3::new((i % 4) as f64, ((i / 4) % 4) as f64, (i / 16) as f64) * spacing)
            .collect()
    }

    #[test]
    fn two_separated_blobs() {
        let params = DbscanParams { eps: 0.5, min_pts: 5 };
        let mut pts = blob(Point3::zeros(), 32, 0.2);
        pts.extend(blob(Point3::new(5.0, 0.0, 0.0), 32, 0.2));
        let (labels, count) = dbscan(&pts, &params);
        assert_eq!(count, 2);
        assert!(labels[..32].iter().all(|&l| l == 0));
        assert!(labels[32..].iter().all(|&l| l == 1));
    }

    #[test]
    fn isolated_point_is_noise() {
        let (labels, count) = dbscan(&[Point3::zeros()], &DbscanParams { eps: 0.5, min_pts: 10 });
        assert_eq!((labels, count), (vec![NOISE], 0));
        let (labels, count) = dbscan(&[Point3::zeros()], &DbscanParams { eps: 0.5, min_pts: 1 });
        assert_eq!((labels, count), (vec![0], 1));
    }

    #[test]
    fn border_point_joins_cluster() {
        // A line of core points and one border point at the end.
        let mut pts: Vec<Point3> = (0..6).map(|i| Point3::new(i as f64 * 0.3, 0.0, 0.0)).collect();
        pts.push(Point3::new(5.0 * 0.3 + 0.45, 0.0, 0.0));
        let (labels, count) = dbscan(&pts, &DbscanParams { eps: 0.5, min_pts: 3 });
        assert_eq!(count, 1);
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn ground_points_stay_noise() {
        let pts = blob(Point3::zeros(), 32, 0.2);
        let cloud = PointCloud::new(pts, 0.0).unwrap();
        let mut ground = vec![false; 32];
        ground[..16].iter_mut().for_each(|g| *g = true);
        let lab = cluster(&cloud, &ground, &DbscanParams { eps: 0.5, min_pts: 3 });
        assert!(lab.label[..16].iter().all(|&l| l == NOISE));
        assert!(lab.label[16..].iter().all(|&l| l == 0));
        assert_eq!(lab.cluster_count, 1);
    }
}
