//! Scene-flow style evaluation of mined transforms against ground truth.

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::ppm::PerPointTransform;
use crate::synth::PointLabel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowThresholds {
    /// (absolute m, relative) for strict accuracy.
    pub strict: (f64, f64),
    pub relaxed: (f64, f64),
    pub outlier: (f64, f64),
}

impl Default for FlowThresholds {
    fn default() -> Self {
        Self { strict: (0.05, 0.05), relaxed: (0.1, 0.1), outlier: (0.3, 0.3) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowMetrics {
    pub count: usize,
    pub epe_avg: f64,
    pub epe_med: f64,
    pub acc_s: f64,
    pub acc_r: f64,
    pub outlier_rate: f64,
}

/// Metrics per split; a split with no points has no metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowEval {
    /// Ground and parked objects.
    pub static_part: Option<FlowMetrics>,
    pub dynamic_foreground: Option<FlowMetrics>,
}

pub const CSV_HEADER: &str =
    "static_epe_avg,static_acc_s,static_acc_r,static_outlier,dynamic_epe_avg,dynamic_epe_med,dynamic_acc_s,dynamic_acc_r,dynamic_outlier";

impl FlowEval {
    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let s = self.static_part.as_ref();
        let d = self.dynamic_foreground.as_ref();
        [
            f(s.map(|m| m.epe_avg)),
            f(s.map(|m| m.acc_s)),
            f(s.map(|m| m.acc_r)),
            f(s.map(|m| m.outlier_rate)),
            f(d.map(|m| m.epe_avg)),
            f(d.map(|m| m.epe_med)),
            f(d.map(|m| m.acc_s)),
            f(d.map(|m| m.acc_r)),
            f(d.map(|m| m.outlier_rate)),
        ]
        .join(",")
    }
}

/// `Z_i(p_i) - p_i` for points already in the frame the transforms act in.
pub fn predicted_flow(points: &[Point3], z: &PerPointTransform) -> Result<Vec<Vector3<f64>>> {
    if points.len() != z.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} points", z.len()), actual: format!("{} points", points.len()) });
    }
    Ok(points.iter().zip(&z.transforms).map(|(p, t)| t.transform_point(p) - p).collect())
}

/// Endpoint error and relative error `EPE / |gt|`. A zero ground-truth flow
/// gives relative error 0 when matched exactly and infinity otherwise.
pub fn point_errors(predicted: &Vector3<f64>, truth: &Vector3<f64>) -> (f64, f64) {
    let epe = (predicted - truth).norm();
    let gt = truth.norm();
    let rel = if gt > 0.0 {
        epe / gt
    } else if epe == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    (epe, rel)
}

pub fn metrics(errors: &[(f64, f64)], thr: &FlowThresholds) -> Option<FlowMetrics> {
    if errors.is_empty() {
        return None;
    }
    let n = errors.len() as f64;
    let frac = |pred: &dyn Fn(f64, f64) -> bool| errors.iter().filter(|(e, r)| pred(*e, *r)).count() as f64 / n;
    let mut epes: Vec<f64> = errors.iter().map(|e| e.0).collect();
    epes.sort_by(f64::total_cmp);
    let mid = epes.len() / 2;
    let epe_med = if epes.len() % 2 == 1 { epes[mid] } else { 0.5 * (epes[mid - 1] + epes[mid]) };
    Some(FlowMetrics {
        count: errors.len(),
        epe_avg: epes.iter().sum::<f64>() / n,
        epe_med,
        acc_s: frac(&|e, r| e < thr.strict.0 || r < thr.strict.1),
        acc_r: frac(&|e, r| e < thr.relaxed.0 || r < thr.relaxed.1),
        outlier_rate: frac(&|e, r| e > thr.outlier.0 && r > thr.outlier.1),
    })
}

pub fn evaluate_flow(
    predicted: &[Vector3<f64>],
    truth: &[Vector3<f64>],
    labels: &[PointLabel],
    thr: &FlowThresholds,
) -> Result<FlowEval> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} flow vectors", truth.len()), actual: format!("{} predictions", predicted.len()) });
    }
    if labels.len() != truth.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} labels", truth.len()), actual: format!("{} labels", labels.len()) });
    }
    let mut stat = Vec::new();
    let mut dyn_ = Vec::new();
    for ((p, t), l) in predicted.iter().zip(truth).zip(labels) {
        let e = point_errors(p, t);
        match l {
            PointLabel::Dynamic => dyn_.push(e),
            PointLabel::Ground | PointLabel::Static => stat.push(e),
        }
    }
    Ok(FlowEval { static_part: metrics(&stat, thr), dynamic_foreground: metrics(&dyn_, thr) })
}
