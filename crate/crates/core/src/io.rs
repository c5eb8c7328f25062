//! File formats.
//!
//! * Clouds: `LDPC` binary (magic, `u32` version 1, `u64` count, then
//!   `count × 3` little-endian `f64`) or CSV with header `x,y,z`.
//! * Per-point transforms: `LDZT` binary (magic, `u32` version 1, `u64`
//!   count, then `count × 12` little-endian `f64`, each a row-major 3×4 `[R|t]`).
//! * Superpixels: 16-bit binary PGM (65535 = unlabeled) or raw little-endian
//!   `u32` with a JSON sidecar `{"width":..,"height":..}`.
//! * Sequences: a JSON manifest listing sweeps, poses and the camera.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraModel, Frame, FrameSequence, Point3, PointCloud, RigidTransform};
use crate::matcher::{CorrespondenceSet, SuperpixelMap, UNLABELED};
use crate::ppm::PerPointTransform;
use crate::quantizer::ProfileBin;
use crate::synth::PointLabel;

pub const CLOUD_MAGIC: [u8; 4] = *b"LDPC";
pub const TRANSFORM_MAGIC: [u8; 4] = *b"LDZT";
const VERSION: u32 = 1;

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn read_header(r: &mut impl Read, magic: [u8; 4], what: &str) -> Result<u64> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(|_| Error::Format(format!("{what}: truncated header")))?;
    if head[..4] != magic {
        return Err(Error::Format(format!("{what}: bad magic")));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("{what}: unsupported version {version}")));
    }
    Ok(u64::from_le_bytes(head[8..16].try_into().unwrap()))
}

fn read_f64s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(|_| Error::Format(format!("{what}: truncated payload")))?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn payload_len(path: &Path, count: u64, per_item: u64, what: &str) -> Result<usize> {
    let size = fs::metadata(path)?.len();
    let expected = count.checked_mul(per_item * 8).and_then(|b| b.checked_add(16));
    if expected != Some(size) {
        return Err(Error::Format(format!("{what}: header claims {count} entries but file has {size} bytes")));
    }
    Ok(count as usize)
}

/// Reads points from a binary or `.csv` file. A zero-byte file is an empty cloud.
pub fn read_points(path: &Path) -> Result<Vec<Point3>> {
    if fs::metadata(path)?.len() == 0 {
        return Err(Error::EmptyCloud);
    }
    if is_csv(path) {
        return read_points_csv(path);
    }
    let mut r = BufReader::new(File::open(path)?);
    let count = read_header(&mut r, CLOUD_MAGIC, "cloud")?;
    let n = payload_len(path, count, 3, "cloud")?;
    let v = read_f64s(&mut r, n * 3, "cloud")?;
    Ok(v.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect())
}

#[derive(Serialize, Deserialize)]
struct XyzRow {
    x: f64,
    y: f64,
    z: f64,
}

fn read_points_csv(path: &Path) -> Result<Vec<Point3>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize::<XyzRow>()
        .map(|row| row.map(|p| Point3::new(p.x, p.y, p.z)).map_err(csv_error))
        .collect()
}

pub fn read_cloud(path: &Path, timestamp: f64) -> Result<PointCloud> {
    PointCloud::new(read_points(path)?, timestamp)
}

pub fn write_points(path: &Path, points: &[Point3]) -> Result<()> {
    if is_csv(path) {
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        for p in points {
            w.serialize(XyzRow { x: p.x, y: p.y, z: p.z }).map_err(csv_error)?;
        }
        w.flush()?;
        return Ok(());
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CLOUD_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(points.len() as u64).to_le_bytes())?;
    for p in points {
        for c in p.iter() {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("csv: {other:?}")),
        }
    } else {
        Error::Format(format!("csv: {e}"))
    }
}

pub fn write_transforms(path: &Path, transforms: &[RigidTransform]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&TRANSFORM_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(transforms.len() as u64).to_le_bytes())?;
    for t in transforms {
        for v in t.to_row_major_3x4() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_transforms(path: &Path) -> Result<Vec<RigidTransform>> {
    let mut r = BufReader::new(File::open(path)?);
    let count = read_header(&mut r, TRANSFORM_MAGIC, "transforms")?;
    let n = payload_len(path, count, 12, "transforms")?;
    let v = read_f64s(&mut r, n * 12, "transforms")?;
    v.chunks_exact(12).map(RigidTransform::from_row_major_3x4).collect()
}

/// Reads transforms and lays them out sweep by sweep for `frames`.
pub fn read_per_point_transform(path: &Path, frames: &FrameSequence) -> Result<PerPointTransform> {
    let transforms = read_transforms(path)?;
    let mut z = PerPointTransform::identity(frames);
    if transforms.len() != z.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} transforms", z.len()),
            actual: format!("{} transforms", transforms.len()),
        });
    }
    z.transforms = transforms;
    Ok(z)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    width: u32,
    height: u32,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// `.pgm` files are read as 16-bit PGM; anything else as raw `u32` with a JSON sidecar.
pub fn read_superpixels(path: &Path) -> Result<SuperpixelMap> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        return read_pgm16(path);
    }
    let side: Sidecar = serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?;
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format("raw superpixel map length is not a multiple of 4".into()));
    }
    let labels = bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    SuperpixelMap::new(side.width, side.height, labels)
}

pub fn write_superpixels(path: &Path, map: &SuperpixelMap) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        return write_pgm16(path, map);
    }
    let mut w = BufWriter::new(File::create(path)?);
    for l in map.labels() {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    let side = Sidecar { width: map.width(), height: map.height() };
    fs::write(sidecar_path(path), serde_json::to_vec(&side)?)?;
    Ok(())
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("pgm: truncated header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn read_pgm16(path: &Path) -> Result<SuperpixelMap> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    if pgm_token(&bytes, &mut pos)? != "P5" {
        return Err(Error::Format("pgm: expected binary P5".into()));
    }
    let mut num = || -> Result<u32> {
        pgm_token(&bytes, &mut pos)?.parse().map_err(|_| Error::Format("pgm: bad header number".into()))
    };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if maxval != 65535 {
        return Err(Error::Format(format!("pgm: expected maxval 65535, got {maxval}")));
    }
    let data = &bytes[pos + 1..];
    let n = width as usize * height as usize;
    if data.len() != 2 * n {
        return Err(Error::Format(format!("pgm: expected {} data bytes, got {}", 2 * n, data.len())));
    }
    let labels = data
        .chunks_exact(2)
        .map(|c| match u16::from_be_bytes([c[0], c[1]]) {
            u16::MAX => UNLABELED,
            l => l as u32,
        })
        .collect();
    SuperpixelMap::new(width, height, labels)
}

fn write_pgm16(path: &Path, map: &SuperpixelMap) -> Result<()> {
    if map.count() > u16::MAX as u32 {
        return Err(Error::Format(format!("pgm holds at most 65535 superpixels, map has {}", map.count())));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n65535\n", map.width(), map.height())?;
    for &l in map.labels() {
        let v = if l == UNLABELED { u16::MAX } else { l as u16 };
        w.write_all(&v.to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub cloud_path: String,
    pub timestamp: f64,
    /// Row-major 4×4 sensor-to-global transform.
    pub pose: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCamera {
    /// Row-major 3×3.
    pub intrinsics: Vec<f64>,
    /// Row-major 4×4 LiDAR-to-camera transform.
    pub extrinsics: Vec<f64>,
    pub width: u32,
    pub height: u32,
}

/// Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub frames: Vec<ManifestFrame>,
    pub keyframe_index: usize,
    pub camera: ManifestCamera,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superpixels: Option<String>,
}

fn relative_to(manifest: &Path, file: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(file)
}

pub fn load_sequence(manifest_path: &Path) -> Result<FrameSequence> {
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(manifest_path)?))?;
    let c = &manifest.camera;
    if c.intrinsics.len() != 9 {
        return Err(Error::Format(format!("intrinsics need 9 values, got {}", c.intrinsics.len())));
    }
    let k = Matrix3::from_row_slice(&c.intrinsics);
    let camera = CameraModel::new(k, RigidTransform::from_row_major_4x4(&c.extrinsics)?, c.width, c.height)?;
    let frames = manifest
        .frames
        .iter()
        .map(|f| {
            Ok(Frame {
                cloud: read_cloud(&relative_to(manifest_path, &f.cloud_path), f.timestamp)?,
                pose: RigidTransform::from_row_major_4x4(&f.pose)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let seq = FrameSequence::new(frames, manifest.keyframe_index, camera)?;
    match &manifest.superpixels {
        Some(p) => seq.with_superpixels(read_superpixels(&relative_to(manifest_path, p))?),
        None => Ok(seq),
    }
}

/// Writes every sweep as `frame_XXX.bin` next to `manifest_path`, plus the
/// superpixel map as `superpixels.pgm` when present.
pub fn save_sequence(manifest_path: &Path, seq: &FrameSequence) -> Result<()> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut frames = Vec::new();
    for (i, f) in seq.frames().iter().enumerate() {
        let name = format!("frame_{i:03}.bin");
        write_points(&dir.join(&name), f.cloud.points())?;
        frames.push(ManifestFrame { cloud_path: name, timestamp: f.cloud.timestamp(), pose: f.pose.to_row_major_4x4().to_vec() });
    }
    let cam = seq.camera();
    let superpixels = match seq.superpixels() {
        Some(map) => {
            write_superpixels(&dir.join("superpixels.pgm"), map)?;
            Some("superpixels.pgm".to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        frames,
        keyframe_index: seq.keyframe_index(),
        camera: ManifestCamera {
            intrinsics: cam.intrinsics().transpose().as_slice().to_vec(),
            extrinsics: cam.extrinsics().to_row_major_4x4().to_vec(),
            width: cam.width(),
            height: cam.height(),
        },
        superpixels,
    };
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Ground-truth flow and labels, laid out like the aggregate of all sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTruth {
    pub flow: Vec<Vector3<f64>>,
    pub labels: Vec<PointLabel>,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    flow_path: String,
    /// 0 ground, 1 static, 2 dynamic.
    labels: Vec<u8>,
}

pub fn write_truth(path: &Path, truth: &FlowTruth) -> Result<()> {
    let flow_name = format!(
        "{}_flow.bin",
        path.file_stem().and_then(|s| s.to_str()).unwrap_or("truth")
    );
    write_points(&relative_to(path, &flow_name), &truth.flow)?;
    let file = TruthFile { flow_path: flow_name, labels: truth.labels.iter().map(|l| l.code()).collect() };
    fs::write(path, serde_json::to_vec(&file)?)?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<FlowTruth> {
    let file: TruthFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let flow = read_points(&relative_to(path, &file.flow_path))?;
    let labels = file
        .labels
        .iter()
        .map(|&c| PointLabel::from_code(c).ok_or_else(|| Error::Format(format!("unknown point label {c}"))))
        .collect::<Result<Vec<_>>>()?;
    if labels.len() != flow.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", flow.len()),
            actual: format!("{} labels", labels.len()),
        });
    }
    Ok(FlowTruth { flow, labels })
}

pub fn write_correspondences(path: &Path, set: &CorrespondenceSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "point_index,u,v,superpixel_id,point_frame,image_frame")?;
    for c in &set.entries {
        let sp = c.superpixel.map(|s| s.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{},{}", c.point_index, c.u, c.v, sp, set.frame_of_points, set.frame_of_image)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_profile(path: &Path, bins: &[ProfileBin]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "bin_lo_m,bin_hi_m,count,mean_error_mm")?;
    for b in bins {
        writeln!(w, "{},{},{},{:.6}", b.lo, b.hi, b.count, b.mean_error * 1000.0)?;
    }
    w.flush()?;
    Ok(())
}

/// One feature vector per row. A first line that does not parse as numbers is taken as a header.
pub fn read_features(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path).map_err(csv_error)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Format(format!("{}: row {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(rows)
}
