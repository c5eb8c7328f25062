//! Thin k-d tree wrapper used by clustering and registration.

use kiddo::{ImmutableKdTree, SquaredEuclidean};

use crate::geom::Point3;

pub struct PointIndex {
    tree: ImmutableKdTree<f64, 3>,
}

impl PointIndex {
    pub fn new(points: &[Point3]) -> Self {
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self { tree: ImmutableKdTree::new_from_slice(&coords) }
    }

    /// Index of the nearest stored point and its squared distance.
    pub fn nearest(&self, q: &Point3) -> (usize, f64) {
        let n = self.tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
        (n.item as usize, n.distance)
    }

    /// Indices of all stored points with distance ≤ `radius`, in increasing index order.
    pub fn within(&self, q: &Point3, radius: f64) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .tree
            .within_unsorted::<SquaredEuclidean>(&[q.x, q.y, q.z], radius * radius)
            .into_iter()
            .map(|n| n.item as usize)
            .collect();
        out.sort_unstable();
        out
    }
}
