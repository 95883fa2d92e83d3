//! Fréchet Distance between Gaussians fitted to experience embeddings.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::feature_store::FeatureSet;

/// Diagonal jitter added before every matrix square root.
pub const SQRT_JITTER: f64 = 1e-10;

const EIGEN_EPS: f64 = 1e-14;
const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    count: usize,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeta {
    pub dim: usize,
    pub count: usize,
}

impl GaussianSummary {
    /// Wraps a precomputed mean and covariance. The covariance must be
    /// symmetric within 1e-9 with a non-negative diagonal.
    pub fn new(count: usize, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimMismatch {
                expected: d,
                found: covariance.nrows(),
            });
        }
        if count < 2 {
            return Err(Error::TooFewImages(count));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("gaussian parameters".into()));
        }
        for i in 0..d {
            if covariance[(i, i)] < 0.0 {
                return Err(Error::InvalidInput(format!("negative variance at {i}")));
            }
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-9 {
                    return Err(Error::InvalidInput("covariance is not symmetric".into()));
                }
            }
        }
        Ok(Self {
            count,
            mean,
            covariance,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn meta(&self) -> GaussianMeta {
        GaussianMeta {
            dim: self.dim(),
            count: self.count,
        }
    }

    /// `gaussian.bin`: D mean values then D×D covariance, row-major f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut buf = Vec::with_capacity((d + d * d) * 8);
        binio::put_f64s(&mut buf, self.mean.as_slice());
        // nalgebra is column-major; the covariance is symmetric but write
        // row-major anyway so the layout holds for any matrix.
        let rows: Vec<f64> = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|ij| self.covariance[ij])
            .collect();
        binio::put_f64s(&mut buf, &rows);
        buf
    }

    pub fn from_bytes(meta: &GaussianMeta, bytes: &[u8]) -> Result<Self> {
        let d = meta.dim;
        let mut r = Reader::new(bytes);
        let mean = DVector::from_vec(r.f64s(d)?);
        let cov = DMatrix::from_row_slice(d, d, &r.f64s(d * d)?);
        r.finish()?;
        GaussianSummary::new(meta.count, mean, cov)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        binio::write_json(&dir.join("gaussian.json"), &self.meta())?;
        binio::write_file(&dir.join("gaussian.bin"), &self.to_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: GaussianMeta = binio::read_json(&dir.join("gaussian.json"))?;
        Self::from_bytes(&meta, &binio::read_file(&dir.join("gaussian.bin"))?)
    }
}

/// Sample mean and unbiased (N−1) covariance of the embeddings.
pub fn fit_gaussian(fs: &FeatureSet) -> Result<GaussianSummary> {
    let n = fs.image_count();
    if n < 2 {
        return Err(Error::TooFewImages(n));
    }
    let d = fs.embedding_dim();
    let x = DMatrix::from_row_iterator(n, d, fs.embeddings().iter().map(|&v| v as f64));
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.tr_mul(&centered) / (n - 1) as f64;
    symmetrize(&mut cov);
    GaussianSummary::new(n, mean, cov)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Square root of a symmetric PSD matrix: `ε` is added to the diagonal,
/// negative eigenvalues are clipped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::DimMismatch {
            expected: d,
            found: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure);
    }
    let mut m = a.clone();
    symmetrize(&mut m);
    for i in 0..d {
        m[(i, i)] += SQRT_JITTER;
    }
    let eig = SymmetricEigen::try_new(m, EIGEN_EPS, EIGEN_MAX_ITER).ok_or(Error::EigenFailure)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (mut col, r) in scaled.column_iter_mut().zip(roots.iter()) {
        col *= *r;
    }
    let mut out = scaled * v.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// `sqrt(‖μ1−μ2‖² + tr(Σ1 + Σ2 − 2 (Σ1^½ Σ2 Σ1^½)^½))`.
///
/// The trace term is a squared 2-Wasserstein distance and is clamped at zero
/// so rounding cannot push the result below `‖μ1−μ2‖`.
pub fn frechet_distance(g1: &GaussianSummary, g2: &GaussianSummary) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimMismatch {
            expected: g1.dim(),
            found: g2.dim(),
        });
    }
    let mean_term = (&g1.mean - &g2.mean).norm_squared();
    let s1 = psd_sqrt(&g1.covariance)?;
    let inner = &s1 * &g2.covariance * &s1;
    let cross = psd_sqrt(&inner)?;
    let trace_term = g1.covariance.trace() + g2.covariance.trace() - 2.0 * cross.trace();
    let fd2 = mean_term + trace_term.max(0.0);
    if !fd2.is_finite() {
        return Err(Error::EigenFailure);
    }
    Ok(fd2.max(0.0).sqrt())
}
