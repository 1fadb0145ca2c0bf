use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{CodaError, Result};

/// Centred linear projection of ICI vectors onto their leading principal axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `W` rows by `Q` columns; column `j` is the `j`-th principal axis.
    pub basis: Vec<Vec<f64>>,
    pub q: usize,
}

/// Eigen-decomposition of the sample covariance, axes sorted by descending variance.
#[derive(Debug, Clone)]
pub struct PrincipalAxes {
    pub mean: DVector<f64>,
    pub variances: Vec<f64>,
    pub axes: DMatrix<f64>,
}

pub fn principal_axes(rows: &[&[f64]]) -> Result<PrincipalAxes> {
    let n = rows.len();
    let w = rows.first().map(|r| r.len()).unwrap_or(0);
    if n < 2 || w == 0 {
        return Err(CodaError::arg(format!("PCA needs at least 2 non-empty rows, got {n}")));
    }
    if rows.iter().any(|r| r.len() != w) {
        return Err(CodaError::arg("PCA rows differ in length"));
    }
    let data = DMatrix::from_fn(n, w, |i, j| rows[i][j]);
    let mean = DVector::from_fn(w, |j, _| data.column(j).mean());
    let centred = DMatrix::from_fn(n, w, |i, j| data[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..w).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = DMatrix::zeros(w, w);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        // deterministic sign: largest-magnitude entry positive
        let lead = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if lead < 0.0 {
            col.neg_mut();
        }
        axes.set_column(dst, &col);
    }
    let variances = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    Ok(PrincipalAxes { mean, variances, axes })
}

/// Smallest `Q` whose leading axes explain at least `threshold` of the total
/// variance, capped at `cap`.
pub fn choose_dimension(variances: &[f64], threshold: f64, cap: usize) -> usize {
    let total: f64 = variances.iter().sum();
    let cap = cap.clamp(1, variances.len().max(1));
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, v) in variances.iter().enumerate() {
        acc += v;
        if acc / total >= threshold || i + 1 >= cap {
            return i + 1;
        }
    }
    cap
}

/// Fit a `q`-dimensional basis to rows of equal length.
pub fn fit_pca(rows: &[&[f64]], q: usize) -> Result<PcaBasis> {
    if q == 0 {
        return Err(CodaError::arg("PCA dimension must be at least 1"));
    }
    if rows.len() <= q {
        return Err(CodaError::arg(format!("PCA with Q = {q} needs more than {q} rows, got {}", rows.len())));
    }
    let w = rows[0].len();
    if q > w {
        return Err(CodaError::arg(format!("PCA dimension {q} exceeds vector length {w}")));
    }
    let pa = principal_axes(rows)?;
    Ok(PcaBasis::from_axes(&pa, q))
}

impl PcaBasis {
    pub fn from_axes(pa: &PrincipalAxes, q: usize) -> Self {
        let w = pa.mean.len();
        Self {
            mean: pa.mean.iter().copied().collect(),
            basis: (0..w).map(|i| (0..q).map(|j| pa.axes[(i, j)]).collect()).collect(),
            q,
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.width(), self.q, |i, j| self.basis[i][j])
    }

    /// `(ici - mean) . basis`.
    pub fn project(&self, ici: &[f64]) -> Result<DVector<f64>> {
        if ici.len() != self.width() {
            return Err(CodaError::arg(format!(
                "ICI vector of length {} projected on a basis for length {}",
                ici.len(),
                self.width()
            )));
        }
        let mut out = DVector::zeros(self.q);
        for (i, row) in self.basis.iter().enumerate() {
            let d = ici[i] - self.mean[i];
            for (o, b) in out.iter_mut().zip(row) {
                *o += d * b;
            }
        }
        Ok(out)
    }

    /// Map PCA coordinates back to an ICI vector.
    pub fn back_project(&self, coords: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .zip(&self.mean)
            .map(|(row, m)| m + row.iter().zip(coords).map(|(b, c)| b * c).sum::<f64>())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.width();
        if self.q == 0 || self.q > w || self.basis.len() != w || self.basis.iter().any(|r| r.len() != self.q) {
            return Err(CodaError::Model(format!("basis shape does not match W = {w}, Q = {}", self.q)));
        }
        let u = self.matrix();
        let gram = u.transpose() * &u;
        let err = (gram - DMatrix::identity(self.q, self.q)).abs().max();
        if err > 1e-6 {
            return Err(CodaError::Model(format!("basis columns are not orthonormal (error {err:.2e})")));
        }
        Ok(())
    }
}
