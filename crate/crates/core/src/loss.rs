//! Image-to-LiDAR contrastive distillation loss over paired features.
//!
//! For `M` pairs `(f_k, g_k)` of l2-normalized rows and temperature `τ`:
//!
//! ```text
//! L = -(1/M) Σ_k log( exp(<f_k, g_k>/τ) / Σ_d exp(<f_d, g_k>/τ) )
//! ```
//!
//! The negatives for a pixel-side feature `g_k` are all point-side features
//! `f_d`. With `S[d][k] = <f_d, g_k>/τ` and `P` the softmax of `S` over `d`,
//! the gradients are `dL/dF = (P - I)·G / (Mτ)` and `dL/dG = (P - I)ᵀ·F / (Mτ)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matcher::CorrespondenceSet;

/// Temperature used when the caller does not choose one.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureRole {
    Point,
    Pixel,
}

/// `M × D` feature matrix, one row per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    vectors: DMatrix<f64>,
    role: FeatureRole,
}

impl FeatureSet {
    pub fn new(vectors: DMatrix<f64>, role: FeatureRole) -> Result<Self> {
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(Error::ShapeMismatch {
                expected: "at least 1x1".into(),
                actual: format!("{}x{}", vectors.nrows(), vectors.ncols()),
            });
        }
        if !vectors.iter().all(|v| v.is_finite()) {
            return Err(Error::Format("feature matrix has non-finite entries".into()));
        }
        Ok(Self { vectors, role })
    }

    pub fn from_rows(rows: &[Vec<f64>], role: FeatureRole) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::ShapeMismatch { expected: format!("{d} columns"), actual: format!("row {bad} has {}", rows[bad].len()) });
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]), role)
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn role(&self) -> FeatureRole {
        self.role
    }

    pub fn pairs(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(fs: &FeatureSet) -> Result<FeatureSet> {
    let mut out = fs.vectors.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let norm = row.norm();
        if norm < ZERO_NORM {
            return Err(Error::DegenerateFeature { row: i });
        }
        row /= norm;
    }
    Ok(FeatureSet { vectors: out, role: fs.role })
}

/// Back-propagates `grad_out` (gradient w.r.t. the normalized rows) through
/// [`l2_normalize`]: `dx = (dy - y·<y, dy>) / |x|` per row.
pub fn l2_normalize_backward(input: &FeatureSet, grad_out: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_same_shape(&input.vectors, grad_out)?;
    let mut grad = grad_out.clone();
    for (i, x) in input.vectors.row_iter().enumerate() {
        let norm = x.norm();
        if norm < ZERO_NORM {
            return Err(Error::DegenerateFeature { row: i });
        }
        let y = x / norm;
        let dy = grad_out.row(i);
        let proj = y.dot(&dy);
        grad.set_row(i, &((dy - y * proj) / norm));
    }
    Ok(grad)
}

fn check_same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", a.nrows(), a.ncols()),
            actual: format!("{}x{}", b.nrows(), b.ncols()),
        });
    }
    Ok(())
}

fn check_inputs(f: &FeatureSet, g: &FeatureSet, tau: f64) -> Result<()> {
    check_same_shape(&f.vectors, &g.vectors)?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Logits `S[d][k] = <f_d, g_k> / τ` and the column-wise log-sum-exp.
fn logits(f: &FeatureSet, g: &FeatureSet, tau: f64) -> (DMatrix<f64>, Vec<f64>) {
    let s = (&f.vectors * g.vectors.transpose()) / tau;
    let lse = s
        .column_iter()
        .map(|col| {
            let m = col.max();
            m + col.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
        })
        .collect();
    (s, lse)
}

/// Contrastive distillation loss of the paired rows of `f` (point side) and `g` (pixel side).
pub fn contrastive_loss(f: &FeatureSet, g: &FeatureSet, tau: f64) -> Result<f64> {
    check_inputs(f, g, tau)?;
    let (s, lse) = logits(f, g, tau);
    let m = f.pairs();
    let total: f64 = (0..m).map(|k| lse[k] - s[(k, k)]).sum();
    Ok(total / m as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub d_f: DMatrix<f64>,
    pub d_g: DMatrix<f64>,
}

/// Loss and its analytic gradient with respect to the (already normalized) rows.
pub fn contrastive_loss_grad(f: &FeatureSet, g: &FeatureSet, tau: f64) -> Result<LossGradient> {
    check_inputs(f, g, tau)?;
    let (s, lse) = logits(f, g, tau);
    let m = f.pairs();
    let loss = (0..m).map(|k| lse[k] - s[(k, k)]).sum::<f64>() / m as f64;

    // A[d][k] = P[d][k] - δ_dk
    let mut a = DMatrix::from_fn(m, m, |d, k| (s[(d, k)] - lse[k]).exp());
    for k in 0..m {
        a[(k, k)] -= 1.0;
    }
    let scale = 1.0 / (m as f64 * tau);
    let d_f = (&a * &g.vectors) * scale;
    let d_g = (a.transpose() * &f.vectors) * scale;
    Ok(LossGradient { loss, d_f, d_g })
}

/// Superpixel-averaged features. Row `i` of both inputs belongs to entry `i`
/// of the correspondence set; entries without a superpixel are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledPairs {
    pub superpixel_ids: Vec<u32>,
    pub point: FeatureSet,
    pub pixel: FeatureSet,
}

pub fn superpixel_pool(corr: &CorrespondenceSet, point_feats: &FeatureSet, pixel_feats: &FeatureSet) -> Result<PooledPairs> {
    for fs in [point_feats, pixel_feats] {
        if fs.pairs() != corr.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} feature rows", corr.len()),
                actual: format!("{}", fs.pairs()),
            });
        }
    }
    let mut groups: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, e) in corr.entries.iter().enumerate() {
        if let Some(id) = e.superpixel {
            groups.entry(id).or_default().push(i);
        }
    }
    if groups.is_empty() {
        return Err(Error::Contract("no correspondence carries a superpixel id".into()));
    }
    let groups: Vec<(u32, Vec<usize>)> = groups.into_iter().collect();
    let pool = |fs: &FeatureSet| {
        DMatrix::from_fn(groups.len(), fs.dim(), |r, c| {
            let members = &groups[r].1;
            members.iter().map(|&i| fs.vectors[(i, c)]).sum::<f64>() / members.len() as f64
        })
    };
    let point = FeatureSet::new(pool(point_feats), point_feats.role)?;
    let pixel = FeatureSet::new(pool(pixel_feats), pixel_feats.role)?;
    Ok(PooledPairs { superpixel_ids: groups.into_iter().map(|(id, _)| id).collect(), point, pixel })
}

/// Random `M × D` feature set with entries in `[-1, 1)`, rows normalized.
pub fn random_features(m: usize, d: usize, role: FeatureRole, rng: &mut impl Rng) -> Result<FeatureSet> {
    let raw = FeatureSet::new(DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0)), role)?;
    l2_normalize(&raw)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub m: usize,
    pub d: usize,
    pub tau: f64,
    pub seed: u64,
    pub loss: f64,
    pub max_relative_error: f64,
}

/// Compares the analytic gradient with central finite differences of the loss
/// on a seeded random instance.
pub fn gradient_check(m: usize, d: usize, tau: f64, seed: u64, step: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = random_features(m, d, FeatureRole::Point, &mut rng)?;
    let g = random_features(m, d, FeatureRole::Pixel, &mut rng)?;
    let analytic = contrastive_loss_grad(&f, &g, tau)?;
    let mut worst: f64 = 0.0;
    for (which, grad) in [(0, &analytic.d_f), (1, &analytic.d_g)] {
        for r in 0..m {
            for c in 0..d {
                let eval = |delta: f64| {
                    let (mut f2, mut g2) = (f.clone(), g.clone());
                    let target = if which == 0 { &mut f2.vectors } else { &mut g2.vectors };
                    target[(r, c)] += delta;
                    contrastive_loss(&f2, &g2, tau)
                };
                let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
                worst = worst.max(relative_error(grad[(r, c)], numeric));
            }
        }
    }
    Ok(GradCheckReport { m, d, tau, seed, loss: analytic.loss, max_relative_error: worst })
}

/// `|a - b| / max(|a|, |b|)`, falling back to the absolute difference when both are tiny.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::Correspondence;

    fn fs(rows: &[&[f64]], role: FeatureRole) -> FeatureSet {
        FeatureSet::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), role).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let n = l2_normalize(&fs(&[&[3.0, 4.0]], FeatureRole::Point)).unwrap();
        assert!((n.vectors()[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((n.vectors()[(0, 1)] - 0.8).abs() < 1e-15);
        let unit = fs(&[&[0.0, 1.0, 0.0]], FeatureRole::Point);
        assert!((l2_normalize(&unit).unwrap().vectors() - unit.vectors()).amax() < 1e-15);
        assert!(matches!(
            l2_normalize(&fs(&[&[1.0, 0.0], &[0.0, 0.0]], FeatureRole::Point)),
            Err(Error::DegenerateFeature { row: 1 })
        ));
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let f = fs(&[&[0.6, 0.8]], FeatureRole::Point);
        let g = fs(&[&[1.0, 0.0]], FeatureRole::Pixel);
        assert_eq!(contrastive_loss(&f, &g, 0.07).unwrap(), 0.0);
        let grad = contrastive_loss_grad(&f, &g, 0.07).unwrap();
        assert_eq!(grad.d_f.amax(), 0.0);
        assert_eq!(grad.d_g.amax(), 0.0);
    }

    #[test]
    fn orthonormal_pair_closed_form() {
        let e = fs(&[&[1.0, 0.0], &[0.0, 1.0]], FeatureRole::Point);
        let loss = contrastive_loss(&e, &e, 1.0).unwrap();
        assert!((loss - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
        assert!((loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn bad_inputs() {
        let a = fs(&[&[1.0, 0.0]], FeatureRole::Point);
        let b = fs(&[&[1.0, 0.0], &[0.0, 1.0]], FeatureRole::Pixel);
        assert!(matches!(contrastive_loss(&a, &b, 1.0), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(contrastive_loss(&a, &a, 0.0), Err(Error::Config(_))));
        assert!(matches!(contrastive_loss(&a, &a, -1.0), Err(Error::Config(_))));
        assert!(FeatureSet::new(DMatrix::zeros(0, 3), FeatureRole::Point).is_err());
    }

    fn corr(ids: &[Option<u32>]) -> CorrespondenceSet {
        CorrespondenceSet {
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, &s)| Correspondence { point_index: i, u: 0.0, v: 0.0, superpixel: s })
                .collect(),
            frame_of_points: 0.0,
            frame_of_image: 0.0,
        }
    }

    #[test]
    fn pooling_means() {
        let c = corr(&[Some(0), Some(0)]);
        let same = fs(&[&[0.3, 0.4], &[0.3, 0.4]], FeatureRole::Point);
        let pooled = superpixel_pool(&c, &same, &same).unwrap();
        assert_eq!(pooled.point.vectors().row(0).iter().copied().collect::<Vec<_>>(), vec![0.3, 0.4]);

        let basis = fs(&[&[1.0, 0.0], &[0.0, 1.0]], FeatureRole::Pixel);
        let pooled = superpixel_pool(&c, &basis, &basis).unwrap();
        assert_eq!(pooled.pixel.vectors().row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);
        assert_eq!(pooled.superpixel_ids, vec![0]);
    }

    #[test]
    fn pooling_skips_unlabeled_entries_and_checks_shape() {
        let c = corr(&[Some(1), None, Some(0)]);
        let f = fs(&[&[1.0], &[2.0], &[3.0]], FeatureRole::Point);
        let pooled = superpixel_pool(&c, &f, &f).unwrap();
        assert_eq!(pooled.superpixel_ids, vec![0, 1]);
        assert_eq!(pooled.point.vectors()[(0, 0)], 3.0);
        assert_eq!(pooled.point.vectors()[(1, 0)], 1.0);
        let short = fs(&[&[1.0]], FeatureRole::Point);
        assert!(superpixel_pool(&c, &short, &f).is_err());
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let x = fs(&[&[0.3, -1.2, 0.7], &[2.0, 0.1, -0.4]], FeatureRole::Point);
        let w = DMatrix::from_row_slice(2, 3, &[0.5, -0.2, 1.0, 0.3, 0.9, -0.7]);
        // Scalar objective: sum(w ∘ normalize(x)).
        let obj = |x: &FeatureSet| l2_normalize(x).unwrap().vectors().component_mul(&w).sum();
        let grad = l2_normalize_backward(&x, &w).unwrap();
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let (mut a, mut b) = (x.clone(), x.clone());
                a.vectors[(r, c)] += h;
                b.vectors[(r, c)] -= h;
                let numeric = (obj(&a) - obj(&b)) / (2.0 * h);
                assert!((numeric - grad[(r, c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gradient_check_report_is_tight() {
        let report = gradient_check(16, 8, 0.07, 1, 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }
}
