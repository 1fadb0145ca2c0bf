use std::f64::consts::{LN_2, PI};
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{CodaError, Result};

/// One elliptical generalised-Gaussian mixture component.
///
/// Density:
/// `Γ(Q/2) β / (π^{Q/2} Γ(Q/2β) 2^{Q/2β} m^{Q/2} |Σ|^{1/2}) · exp(-(dᵀΣ⁻¹d)^β / (2 m^β))`
/// with `d = h - μ`. `β = 1`, `m = 1` is the multivariate normal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GgdComponent {
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub beta: f64,
    #[serde(default = "unit")]
    pub m: f64,
    pub phi: f64,
    #[serde(skip)]
    prepared: OnceLock<std::result::Result<Prepared, String>>,
}

fn unit() -> f64 {
    1.0
}

impl PartialEq for GgdComponent {
    fn eq(&self, other: &Self) -> bool {
        self.mu == other.mu && self.sigma == other.sigma && self.beta == other.beta && self.m == other.m && self.phi == other.phi
    }
}

#[derive(Debug, Clone)]
struct Prepared {
    mu: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

/// Log of the normalising constant for dimension `q`.
pub fn ggd_log_norm(q: usize, beta: f64, m: f64, log_det_sigma: f64) -> f64 {
    let q = q as f64;
    ln_gamma(q / 2.0) - q / 2.0 * PI.ln() - ln_gamma(q / (2.0 * beta)) - q / (2.0 * beta) * LN_2 + beta.ln()
        - q / 2.0 * m.ln()
        - 0.5 * log_det_sigma
}

impl GgdComponent {
    pub fn new(mu: Vec<f64>, sigma: Vec<Vec<f64>>, beta: f64, m: f64, phi: f64) -> Result<Self> {
        let c = Self {
            mu,
            sigma,
            beta,
            m,
            phi,
            prepared: OnceLock::new(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_matrices(mu: &DVector<f64>, sigma: &DMatrix<f64>, beta: f64, m: f64, phi: f64) -> Result<Self> {
        let rows = (0..sigma.nrows()).map(|i| sigma.row(i).iter().copied().collect()).collect();
        Self::new(mu.iter().copied().collect(), rows, beta, m, phi)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let q = self.dim();
        DMatrix::from_fn(q, q, |i, j| self.sigma[i][j])
    }

    pub fn mu_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu)
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.dim();
        if q == 0 || self.sigma.len() != q || self.sigma.iter().any(|r| r.len() != q) {
            return Err(CodaError::Model(format!("component covariance is not {q}x{q}")));
        }
        if !(self.beta > 0.0) || !(self.m > 0.0) {
            return Err(CodaError::Model(format!("component needs beta > 0 and m > 0, got {} and {}", self.beta, self.m)));
        }
        if !(self.phi > 0.0 && self.phi <= 1.0 + 1e-12) {
            return Err(CodaError::Model(format!("component prior {} outside (0, 1]", self.phi)));
        }
        for i in 0..q {
            for j in 0..i {
                let (a, b) = (self.sigma[i][j], self.sigma[j][i]);
                if (a - b).abs() > 1e-9 * (a.abs() + b.abs()).max(1e-300) {
                    return Err(CodaError::Model("component covariance is not symmetric".into()));
                }
            }
        }
        self.prepared().map(|_| ())
    }

    fn prepared(&self) -> Result<&Prepared> {
        self.prepared
            .get_or_init(|| {
                let sigma = self.sigma_matrix();
                let chol = Cholesky::new(sigma).ok_or_else(|| "covariance is not positive definite".to_string())?;
                let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                if !log_det.is_finite() {
                    return Err("covariance is singular".to_string());
                }
                Ok(Prepared {
                    mu: self.mu_vector(),
                    chol,
                    log_norm: ggd_log_norm(self.dim(), self.beta, self.m, log_det),
                })
            })
            .as_ref()
            .map_err(|e| CodaError::Numeric(e.clone()))
    }

    /// Squared Mahalanobis distance `dᵀΣ⁻¹d` of `h` from the mean.
    pub fn mahalanobis_sq(&self, h: &DVector<f64>) -> Result<f64> {
        let p = self.prepared()?;
        if h.len() != p.mu.len() {
            return Err(CodaError::arg(format!("point of dimension {} for a {}-D component", h.len(), p.mu.len())));
        }
        self.offset_mahalanobis_sq(&(h - &p.mu))
    }

    fn offset_mahalanobis_sq(&self, d: &DVector<f64>) -> Result<f64> {
        let p = self.prepared()?;
        if d.len() != p.mu.len() {
            return Err(CodaError::arg(format!("offset of dimension {} for a {}-D component", d.len(), p.mu.len())));
        }
        let y = p.chol.l_dirty().solve_lower_triangular(d).ok_or_else(|| CodaError::Numeric("triangular solve failed".into()))?;
        Ok(y.norm_squared())
    }

    pub fn log_pdf(&self, h: &DVector<f64>) -> Result<f64> {
        let delta = self.mahalanobis_sq(h)?;
        Ok(self.log_norm()? - 0.5 * (delta / self.m).powf(self.beta))
    }

    /// Density at `μ + d`, evaluated from the offset directly.
    pub fn pdf_at_offset(&self, d: &DVector<f64>) -> Result<f64> {
        let delta = self.offset_mahalanobis_sq(d)?;
        Ok((self.log_norm()? - 0.5 * (delta / self.m).powf(self.beta)).exp())
    }

    pub fn log_norm(&self) -> Result<f64> {
        Ok(self.prepared()?.log_norm)
    }
}

impl GgdComponent {
    /// Draw one point: `d = R·L·u` with `u` uniform on the sphere and
    /// `(R²/m)^β ~ Gamma(Q/2β, 2)`.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        use rand_distr::{Distribution, Gamma, StandardNormal};
        let p = self.prepared()?;
        let q = self.dim();
        let t: f64 = Gamma::new(q as f64 / (2.0 * self.beta), 2.0)
            .map_err(|e| CodaError::Numeric(e.to_string()))?
            .sample(rng);
        let r = (self.m * t.powf(1.0 / self.beta)).sqrt();
        let mut u = DVector::from_fn(q, |_, _| StandardNormal.sample(rng));
        let n = u.norm();
        u /= n;
        Ok(&p.mu + p.chol.l_dirty().lower_triangle() * u * r)
    }
}

/// Density of `h` under one component.
pub fn ggd_pdf(h: &DVector<f64>, component: &GgdComponent) -> Result<f64> {
    component.log_pdf(h).map(f64::exp)
}

/// Mixture density `Σ_k φ_k f_k(h)`.
pub fn mixture_pdf(h: &DVector<f64>, components: &[GgdComponent]) -> Result<f64> {
    components.iter().map(|c| Ok(c.phi * ggd_pdf(h, c)?)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn comp(mu: Vec<f64>, sigma: Vec<Vec<f64>>, beta: f64) -> GgdComponent {
        GgdComponent::new(mu, sigma, beta, 1.0, 1.0).unwrap()
    }

    #[test]
    fn standard_normal_1d() {
        let c = comp(vec![0.0], vec![vec![1.0]], 1.0);
        let p = ggd_pdf(&DVector::from_vec(vec![1.0]), &c).unwrap();
        let want = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert!((p - want).abs() <= 1e-14 * want);
    }

    #[test]
    fn symmetric_about_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let c = comp(vec![0.3, -1.0], vec![vec![2.0, 0.4], vec![0.4, 0.7]], rng.random_range(0.3..3.0));
            let d = DVector::from_vec(vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            assert_eq!(c.pdf_at_offset(&d).unwrap(), c.pdf_at_offset(&-&d).unwrap());
            let h = c.mu_vector() + &d;
            assert!((ggd_pdf(&h, &c).unwrap() - c.pdf_at_offset(&d).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dim_integrates_to_one() {
        for beta in [0.5, 1.0, 2.0, 4.0] {
            let c = comp(vec![0.0], vec![vec![1.0]], beta);
            // heavy tails for small beta need a wider range
            let half = if beta < 1.0 { 200.0 } else { 10.0 };
            let n = 400_000;
            let h = 2.0 * half / n as f64;
            let total: f64 = (0..=n)
                .map(|i| {
                    let x = -half + i as f64 * h;
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    w * ggd_pdf(&DVector::from_vec(vec![x]), &c).unwrap()
                })
                .sum::<f64>()
                * h;
            assert!((total - 1.0).abs() < 1e-6, "beta {beta}: {total}");
        }
    }

    #[test]
    fn scale_m_matches_scaled_sigma() {
        let a = GgdComponent::new(vec![0.0, 0.0], vec![vec![2.0, 0.0], vec![0.0, 2.0]], 1.7, 1.0, 1.0).unwrap();
        let b = GgdComponent::new(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.7, 2.0, 1.0).unwrap();
        let h = DVector::from_vec(vec![0.4, -1.1]);
        let (pa, pb) = (ggd_pdf(&h, &a).unwrap(), ggd_pdf(&h, &b).unwrap());
        assert!((pa - pb).abs() < 1e-14 * pa);
    }

    #[test]
    fn singular_covariance_is_numeric_error() {
        let c = GgdComponent {
            mu: vec![0.0, 0.0],
            sigma: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            beta: 1.0,
            m: 1.0,
            phi: 1.0,
            prepared: OnceLock::new(),
        };
        assert!(matches!(ggd_pdf(&DVector::zeros(2), &c), Err(CodaError::Numeric(_))));
    }

    #[test]
    fn json_round_trip_keeps_density() {
        let c = comp(vec![0.1, 0.2], vec![vec![1.0, 0.2], vec![0.2, 0.5]], 0.8);
        let back: GgdComponent = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let h = DVector::from_vec(vec![0.3, 0.3]);
        assert_eq!(ggd_pdf(&h, &back).unwrap(), ggd_pdf(&h, &c).unwrap());
    }
}
