use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use super::features::FeatureSet;
use crate::error::{Error, Result};

/// Relative asymmetry tolerated by [`matrix_sqrt_psd`].
const SYMMETRY_TOL: f64 = 1e-8;
/// Eigenvalues below this fraction of the largest one are treated as zero.
const EIGEN_CLAMP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased (1/(N−1)) covariance, symmetrized. A single row
/// gives a zero covariance.
pub fn fit_gaussian(f: &FeatureSet) -> Result<GaussianStats> {
    let m = f.matrix();
    if m.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("NaN in feature matrix".into()));
    }
    let n = m.nrows();
    let mean: DVector<f64> = m.row_mean().transpose();
    if n < 2 {
        log::warn!("fitting a Gaussian to a single feature row; covariance is zero");
        return Ok(GaussianStats {
            cov: DMatrix::zeros(mean.len(), mean.len()),
            mean,
        });
    }
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov })
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Symmetric PSD square root by eigendecomposition. Eigenvalues below
/// `1e-8 · λ_max` (including small negative drift) are clamped to zero.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Math(format!("matrix sqrt needs a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    let scale = max_abs(m).max(1.0);
    let asym = max_abs(&(m - m.transpose()));
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Math(format!("matrix is not symmetric (max |M - Mᵀ| = {asym:.3e})")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Math("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let top = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v));
    let floor = EIGEN_CLAMP * top;
    let roots = eig.eigenvalues.map(|v| if v > floor { v.sqrt() } else { 0.0 });
    let v = &eig.eigenvectors;
    let root = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok((&root + root.transpose()) * 0.5)
}

/// `‖μa−μb‖² + Tr(Σa + Σb − 2·(Σa^½ Σb Σa^½)^½)`, clamped at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.nrows() != a.dim() || b.cov.nrows() != b.dim() {
        return Err(Error::Dimension(format!(
            "Fréchet distance needs matching dimensions, got {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let sa = matrix_sqrt_psd(&a.cov)?;
    let inner = &sa * &b.cov * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?.trace();
    let d = diff + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if d < -1e-6 * (1.0 + a.cov.trace() + b.cov.trace()) {
        log::warn!("Fréchet distance came out at {d:.3e}; clamping to 0");
    }
    Ok(d.max(0.0))
}

/// One line of a FID report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidRow {
    pub data: String,
    pub reference: String,
    pub fid: f64,
}

/// Scores every candidate set against `reference`. All sets must come from
/// the same extractor.
pub fn fid_report(reference: &FeatureSet, candidates: &[FeatureSet]) -> Result<Vec<FidRow>> {
    if let Some(c) = candidates.iter().find(|c| c.descriptor() != reference.descriptor()) {
        return Err(Error::Config(format!(
            "extractor mismatch: reference uses '{}', candidate {} uses '{}'",
            reference.descriptor(),
            c.label(),
            c.descriptor()
        )));
    }
    let ref_stats = fit_gaussian(reference)?;
    candidates
        .iter()
        .map(|c| {
            Ok(FidRow {
                data: c.label(),
                reference: reference.label(),
                fid: frechet_distance(&fit_gaussian(c)?, &ref_stats)?,
            })
        })
        .collect()
}

pub fn write_fid_csv(rows: &[FidRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["data", "reference", "fid"])?;
    for r in rows {
        w.write_record([r.data.clone(), r.reference.clone(), format!("{:.4}", r.fid)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
