//! Voxel quantization in Cartesian or cylindrical coordinates, deduplication
//! to one point per occupied cell, and the quantization error it induces.
//!
//! A point's cell key is `floor(coordinate / size)` per axis, evaluated in the
//! [`VoxelSpec`]'s coordinate system. The cell's anchor is its lower corner
//! (`key * size`), mapped back to Cartesian space for cylindrical cells; the
//! quantization error of a point is its Euclidean distance to that anchor.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateSystem {
    Cartesian,
    Cylindrical,
}

/// Integer cell coordinates.
pub type VoxelKey = [i32; 3];

/// Partitioning scheme: Cartesian `(δx, δy, δz)` in meters or cylindrical
/// `(δρ m, δφ rad, δz m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelSpec {
    system: CoordinateSystem,
    sizes: [f64; 3],
}

impl VoxelSpec {
    pub fn new(system: CoordinateSystem, sizes: [f64; 3]) -> Result<Self> {
        if !sizes.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidVoxelSpec(format!("sizes must be positive, got {sizes:?}")));
        }
        if system == CoordinateSystem::Cylindrical && sizes[1] >= TAU {
            return Err(Error::InvalidVoxelSpec(format!("angular size {} rad is not below 2π", sizes[1])));
        }
        Ok(Self { system, sizes })
    }

    pub fn cartesian(dx: f64, dy: f64, dz: f64) -> Result<Self> {
        Self::new(CoordinateSystem::Cartesian, [dx, dy, dz])
    }

    pub fn cylindrical(drho: f64, dphi_rad: f64, dz: f64) -> Result<Self> {
        Self::new(CoordinateSystem::Cylindrical, [drho, dphi_rad, dz])
    }

    pub fn cylindrical_deg(drho: f64, dphi_deg: f64, dz: f64) -> Result<Self> {
        Self::cylindrical(drho, dphi_deg.to_radians(), dz)
    }

    pub fn system(&self) -> CoordinateSystem {
        self.system
    }

    pub fn sizes(&self) -> [f64; 3] {
        self.sizes
    }

    /// Cell key of a point, or `None` when an index leaves the `i32` range.
    pub fn key_of(&self, p: &Point3) -> Option<VoxelKey> {
        let coords = match self.system {
            CoordinateSystem::Cartesian => [p.x, p.y, p.z],
            CoordinateSystem::Cylindrical => {
                let (rho, phi, z) = to_cylindrical(p);
                [rho, phi, z]
            }
        };
        let mut key = [0i32; 3];
        for axis in 0..3 {
            let cell = (coords[axis] / self.sizes[axis]).floor();
            if !(cell >= i32::MIN as f64 && cell <= i32::MAX as f64) {
                return None;
            }
            key[axis] = cell as i32;
        }
        Some(key)
    }

    /// Cartesian position of a cell's lower corner.
    pub fn anchor(&self, key: &VoxelKey) -> Point3 {
        let c = [
            key[0] as f64 * self.sizes[0],
            key[1] as f64 * self.sizes[1],
            key[2] as f64 * self.sizes[2],
        ];
        match self.system {
            CoordinateSystem::Cartesian => Point3::new(c[0], c[1], c[2]),
            CoordinateSystem::Cylindrical => {
                let (s, co) = c[1].sin_cos();
                Point3::new(c[0] * co, c[0] * s, c[2])
            }
        }
    }
}

/// `(ρ, φ, z)` with `φ ∈ [-π, π)`. The origin axis (`ρ = 0`) maps to `φ = 0`.
pub fn to_cylindrical(p: &Point3) -> (f64, f64, f64) {
    let rho = p.x.hypot(p.y);
    if rho == 0.0 {
        return (0.0, 0.0, p.z);
    }
    let mut phi = p.y.atan2(p.x);
    if phi >= PI {
        phi -= TAU;
    }
    (rho, phi, p.z)
}

pub fn from_cylindrical(rho: f64, phi: f64, z: f64) -> Point3 {
    let (s, c) = phi.sin_cos();
    Point3::new(rho * c, rho * s, z)
}

/// Keys for every point of the cloud, in cloud order.
pub fn voxel_keys(cloud: &PointCloud, spec: &VoxelSpec) -> Result<Vec<VoxelKey>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    cloud
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            spec.key_of(p).ok_or(Error::KeyOverflow { index: cloud.source_index()[i], value: p.abs().max() })
        })
        .collect()
}

/// Sparse-tensor input: one representative point per occupied cell.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCloud {
    voxel_keys: Vec<VoxelKey>,
    representative_index: Vec<usize>,
    quantized_positions: Vec<Point3>,
    dropped_count: usize,
}

impl QuantizedCloud {
    /// Cell key of each retained point, in increasing representative source index.
    pub fn voxel_keys(&self) -> &[VoxelKey] {
        &self.voxel_keys
    }

    pub fn representative_index(&self) -> &[usize] {
        &self.representative_index
    }

    pub fn quantized_positions(&self) -> &[Point3] {
        &self.quantized_positions
    }

    pub fn dropped_count(&self) -> usize {
        self.dropped_count
    }

    pub fn retained_count(&self) -> usize {
        self.voxel_keys.len()
    }

    pub fn input_count(&self) -> usize {
        self.retained_count() + self.dropped_count
    }

    /// The representatives' original points, as a cloud with their source indices.
    pub fn retained_cloud(&self, cloud: &PointCloud) -> PointCloud {
        let by_source: HashMap<usize, usize> =
            cloud.source_index().iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let mut mask = vec![false; cloud.len()];
        for s in &self.representative_index {
            if let Some(&i) = by_source.get(s) {
                mask[i] = true;
            }
        }
        cloud.select(&mask)
    }
}

/// Voxelizes `cloud` and keeps the lowest-`source_index` point of every cell.
pub fn quantize(cloud: &PointCloud, spec: &VoxelSpec) -> Result<QuantizedCloud> {
    let keys = voxel_keys(cloud, spec)?;
    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.sort_unstable_by_key(|&i| cloud.source_index()[i]);

    let mut occupied = HashMap::with_capacity(cloud.len());
    let mut out = QuantizedCloud {
        voxel_keys: Vec::new(),
        representative_index: Vec::new(),
        quantized_positions: Vec::new(),
        dropped_count: 0,
    };
    for i in order {
        let key = keys[i];
        if occupied.insert(key, ()).is_some() {
            out.dropped_count += 1;
            continue;
        }
        out.voxel_keys.push(key);
        out.representative_index.push(cloud.source_index()[i]);
        out.quantized_positions.push(spec.anchor(&key));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationError {
    /// Distance from each input point (cloud order) to its cell anchor, meters.
    pub per_point: Vec<f64>,
    pub mean: f64,
}

/// Distance from every input point to its cell's anchor, before deduplication.
pub fn quantization_error(cloud: &PointCloud, spec: &VoxelSpec) -> Result<QuantizationError> {
    let keys = voxel_keys(cloud, spec)?;
    let per_point: Vec<f64> = cloud
        .points()
        .par_iter()
        .zip(keys.par_iter())
        .map(|(p, k)| (p - spec.anchor(k)).norm())
        .collect();
    let mean = per_point.iter().sum::<f64>() / per_point.len() as f64;
    Ok(QuantizationError { per_point, mean })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_error: f64,
}

/// Mean quantization error per range bin of width `bin_width`, where range is
/// the point's 3D distance from the origin. Empty bins are omitted.
pub fn error_vs_distance_profile(cloud: &PointCloud, spec: &VoxelSpec, bin_width: f64) -> Result<Vec<ProfileBin>> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
    }
    let errors = quantization_error(cloud, spec)?;
    Ok(bin_by_range(cloud.points(), &errors.per_point, bin_width))
}

pub(crate) fn bin_by_range(points: &[Point3], values: &[f64], bin_width: f64) -> Vec<ProfileBin> {
    let mut bins: BTreeMap<u64, (usize, f64)> = BTreeMap::new();
    for (p, v) in points.iter().zip(values) {
        let b = (p.norm() / bin_width).floor() as u64;
        let entry = bins.entry(b).or_default();
        entry.0 += 1;
        entry.1 += v;
    }
    bins.into_iter()
        .map(|(b, (count, sum))| ProfileBin {
            lo: b as f64 * bin_width,
            hi: (b + 1) as f64 * bin_width,
            count,
            mean_error: sum / count as f64,
        })
        .collect()
}
