//! Maximum-likelihood fitting of generalised-Gaussian mixtures.
//!
//! Generalised EM: the E-step computes responsibilities; the M-step updates
//! priors in closed form, then (μ, Σ) by one fixed-point iteration and β by a
//! damped Newton step. Each parameter update is kept only if it raises that
//! component's expected complete-data log-likelihood, so the observed
//! log-likelihood never decreases.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use super::ggd::{ggd_log_norm, GgdComponent};
use crate::error::{CodaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop when an iteration raises the log-likelihood by less than
    /// `tol * (1 + |LL|)`.
    pub tol: f64,
    /// Hold β at this value instead of estimating it.
    pub fix_beta: Option<f64>,
    pub beta_bounds: (f64, f64),
    /// Fresh initialisations tried after a covariance collapse.
    pub max_restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-10,
            fix_beta: None,
            beta_bounds: (0.2, 5.0),
            max_restarts: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub components: Vec<GgdComponent>,
    pub log_likelihood: f64,
    /// Log-likelihood before each M-step and after the last one.
    pub trace: Vec<f64>,
    pub restarts: usize,
}

impl MixtureFit {
    pub fn k(&self) -> usize {
        self.components.len()
    }
}

/// Free parameters of a `k`-component mixture in `q` dimensions.
pub fn parameter_count(k: usize, q: usize, beta_free: bool) -> usize {
    let per = q + q * (q + 1) / 2 + usize::from(beta_free) + 1;
    k * per - 1
}

/// `p ln(L) - 2 LL`.
pub fn bic(log_likelihood: f64, params: usize, samples: usize) -> f64 {
    params as f64 * (samples as f64).ln() - 2.0 * log_likelihood
}

#[derive(Debug, Clone)]
struct Comp {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    beta: f64,
    phi: f64,
    log_det: f64,
    /// Squared Mahalanobis distance of every sample; independent of β.
    deltas: Vec<f64>,
    /// `deltas` raised to β.
    powered: Vec<f64>,
}

impl Comp {
    fn new(mu: DVector<f64>, sigma: DMatrix<f64>, beta: f64, phi: f64, data: &[DVector<f64>]) -> Option<Self> {
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let chol = Cholesky::new(sigma.clone())?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        // condition number above ~1e12: the component has lost a dimension
        if !(lo > hi * 1e-6) {
            return None;
        }
        let log_det = 2.0 * diag.iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        let deltas = mahalanobis_all(data, &mu, &chol.inverse());
        let mut comp = Self {
            mu,
            sigma,
            beta,
            phi,
            log_det,
            deltas,
            powered: Vec::new(),
        };
        comp.set_beta(beta);
        Some(comp)
    }

    fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
        self.powered = if beta == 1.0 { self.deltas.clone() } else { self.deltas.iter().map(|d| d.powf(beta)).collect() };
    }

    fn log_norm(&self) -> f64 {
        ggd_log_norm(self.mu.len(), self.beta, 1.0, self.log_det)
    }

    /// Expected complete-data log-likelihood of this component's density.
    fn objective(&self, resp: &[f64]) -> f64 {
        let ln = self.log_norm();
        self.powered
            .iter()
            .zip(resp)
            .map(|(&p, &r)| if r > 0.0 { r * (ln - 0.5 * p) } else { 0.0 })
            .sum()
    }
}

fn mahalanobis_all(data: &[DVector<f64>], mu: &DVector<f64>, inv: &DMatrix<f64>) -> Vec<f64> {
    let q = mu.len();
    let mut d = vec![0.0; q];
    data.iter()
        .map(|h| {
            for (k, v) in d.iter_mut().enumerate() {
                *v = h[k] - mu[k];
            }
            let mut acc = 0.0;
            for i in 0..q {
                let mut row = 0.0;
                for j in 0..q {
                    row += inv[(i, j)] * d[j];
                }
                acc += d[i] * row;
            }
            acc.max(0.0)
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn covariance(data: &[DVector<f64>], weights: &[f64], mean: &DVector<f64>) -> DMatrix<f64> {
    let q = mean.len();
    let mut s = DMatrix::zeros(q, q);
    let mut total = 0.0;
    for (h, &w) in data.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for i in 0..q {
            let di = w * (h[i] - mean[i]);
            for j in 0..=i {
                s[(i, j)] += di * (h[j] - mean[j]);
            }
        }
        total += w;
    }
    for i in 0..q {
        for j in 0..i {
            s[(j, i)] = s[(i, j)];
        }
    }
    if total > 0.0 {
        s / total
    } else {
        s
    }
}

fn weighted_mean(data: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    let mut m = DVector::zeros(data[0].len());
    let mut total = 0.0;
    for (h, &w) in data.iter().zip(weights) {
        for (k, v) in m.iter_mut().enumerate() {
            *v += w * h[k];
        }
        total += w;
    }
    m / total
}

/// k-means++ seeding followed by Lloyd iterations; returns hard labels.
fn kmeans(data: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.len();
    let mut centres = vec![data[rng.random_range(0..n)].clone()];
    while centres.len() < k {
        let d2: Vec<f64> = data
            .iter()
            .map(|h| centres.iter().map(|c| (h - c).norm_squared()).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            d2.iter()
                .position(|&d| {
                    u -= d;
                    u <= 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centres.push(data[pick].clone());
    }
    let mut labels = vec![0; n];
    for _ in 0..50 {
        let mut changed = false;
        for (i, h) in data.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| (h - &centres[a]).norm_squared().total_cmp(&(h - &centres[b]).norm_squared()))
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = data.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(h, _)| h).collect();
            if !members.is_empty() {
                *centre = members.iter().fold(DVector::zeros(h_dim(data)), |a, h| a + *h) / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

fn h_dim(data: &[DVector<f64>]) -> usize {
    data[0].len()
}

fn initialise(data: &[DVector<f64>], k: usize, beta: f64, rng: &mut ChaCha8Rng) -> Option<Vec<Comp>> {
    let n = data.len();
    let q = h_dim(data);
    let all = vec![1.0; n];
    let global_mean = weighted_mean(data, &all);
    let global = covariance(data, &all, &global_mean);
    let ridge = DMatrix::identity(q, q) * (global.trace() / q as f64 * 1e-6).max(1e-300);
    let labels = kmeans(data, k, rng);
    (0..k)
        .map(|c| {
            let w: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect();
            let count: f64 = w.iter().sum();
            if count < (q + 1) as f64 {
                let mu = if count > 0.0 { weighted_mean(data, &w) } else { data[rng.random_range(0..n)].clone() };
                return Comp::new(mu, &global / (k as f64) + &ridge, beta, (count.max(1.0)) / n as f64, data);
            }
            let mu = weighted_mean(data, &w);
            let sigma = covariance(data, &w, &mu) + &ridge;
            Comp::new(mu, sigma, beta, count / n as f64, data)
        })
        .collect::<Option<Vec<_>>>()
        .map(|mut comps| {
            let total: f64 = comps.iter().map(|c| c.phi).sum();
            comps.iter_mut().for_each(|c| c.phi /= total);
            comps
        })
}

/// `∂/∂β` and value of the β-dependent part of a component objective.
/// `log_deltas` holds `(r, ln δ)` for every sample with positive weight and distance.
fn beta_objective(beta: f64, q: f64, n_k: f64, log_deltas: &[(f64, f64)]) -> (f64, f64) {
    let a = q / (2.0 * beta);
    let mut value = n_k * (beta.ln() - statrs::function::gamma::ln_gamma(a) - a * std::f64::consts::LN_2);
    let mut grad = n_k * (1.0 / beta + digamma(a) * a / beta + a / beta * std::f64::consts::LN_2);
    for &(r, ld) in log_deltas {
        let p = (beta * ld).exp();
        value -= 0.5 * r * p;
        grad -= 0.5 * r * p * ld;
    }
    (value, grad)
}

fn update_beta(comp: &Comp, resp: &[f64], n_k: f64, bounds: (f64, f64)) -> f64 {
    let q = comp.mu.len() as f64;
    let logs: Vec<(f64, f64)> = comp
        .deltas
        .iter()
        .zip(resp)
        .filter(|(&d, &r)| r > 0.0 && d > 0.0)
        .map(|(&d, &r)| (r, d.ln()))
        .collect();
    let b = comp.beta;
    let (f0, g0) = beta_objective(b, q, n_k, &logs);
    let h = 1e-5 * b;
    let curvature = (beta_objective(b + h, q, n_k, &logs).1 - beta_objective(b - h, q, n_k, &logs).1) / (2.0 * h);
    let mut step = if curvature < 0.0 { -g0 / curvature } else { g0.signum() * 0.1 * b };
    for _ in 0..30 {
        let cand = (b + step).clamp(bounds.0, bounds.1);
        if cand != b && beta_objective(cand, q, n_k, &logs).0 > f0 {
            return cand;
        }
        step *= 0.5;
    }
    b
}

enum Step {
    Continue(Vec<Comp>),
    Collapsed,
}

fn m_step(data: &[DVector<f64>], comps: &[Comp], resp: &[Vec<f64>], opts: &FitOptions, floor: f64) -> Step {
    let n = data.len() as f64;
    let q = h_dim(data);
    let mut out = Vec::with_capacity(comps.len());
    for (comp, r) in comps.iter().zip(resp) {
        let n_k: f64 = r.iter().sum();
        if n_k < (q + 1) as f64 {
            return Step::Collapsed;
        }
        let mut cur = comp.clone();
        cur.phi = n_k / n;
        let base = cur.objective(r);

        // (μ, Σ) fixed-point step under the current β
        let u: Vec<f64> = cur
            .deltas
            .iter()
            .zip(r)
            .map(|(&d, &ri)| if cur.beta == 1.0 { ri } else { ri * d.max(1e-300).powf(cur.beta - 1.0) })
            .collect();
        let u_sum: f64 = u.iter().sum();
        if u_sum.is_finite() && u_sum > 0.0 {
            let mu = weighted_mean(data, &u);
            let sigma = covariance(data, &u, &mu) * (cur.beta * u_sum / n_k);
            match Comp::new(mu, sigma, cur.beta, cur.phi, data) {
                Some(next) if next.objective(r) >= base => cur = next,
                Some(_) => {}
                None => return Step::Collapsed,
            }
        }
        if cur.log_det < floor {
            return Step::Collapsed;
        }

        if opts.fix_beta.is_none() {
            let beta = update_beta(&cur, r, n_k, opts.beta_bounds);
            if beta != cur.beta {
                cur.set_beta(beta);
            }
        }
        out.push(cur);
    }
    Step::Continue(out)
}

fn e_step(data: &[DVector<f64>], comps: &[Comp]) -> (f64, Vec<Vec<f64>>) {
    let k = comps.len();
    let logs: Vec<Vec<f64>> = comps
        .iter()
        .map(|c| {
            let ln = c.log_norm() + c.phi.ln();
            c.powered.iter().map(|p| ln - 0.5 * p).collect()
        })
        .collect();
    let mut resp = vec![vec![0.0; data.len()]; k];
    let mut ll = 0.0;
    let mut row = vec![0.0; k];
    for i in 0..data.len() {
        for c in 0..k {
            row[c] = logs[c][i];
        }
        let lse = log_sum_exp(&row);
        ll += lse;
        for c in 0..k {
            resp[c][i] = (row[c] - lse).exp();
        }
    }
    (ll, resp)
}

fn log_likelihood(data: &[DVector<f64>], comps: &[Comp]) -> f64 {
    e_step(data, comps).0
}

fn run_em(data: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng, opts: &FitOptions) -> Result<Option<(Vec<Comp>, Vec<f64>)>> {
    let beta0 = opts.fix_beta.unwrap_or(1.0);
    let Some(mut comps) = initialise(data, k, beta0, rng) else {
        return Ok(None);
    };
    let q = h_dim(data);
    let all = vec![1.0; data.len()];
    let gm = weighted_mean(data, &all);
    let global = covariance(data, &all, &gm);
    let global_log_det = global.determinant().max(1e-300).ln();
    // a component whose volume shrinks this far below the data's has collapsed
    let floor = global_log_det - 10.0 * q as f64;

    let mut trace = Vec::new();
    for _ in 0..opts.max_iter {
        let (ll, resp) = e_step(data, &comps);
        if !ll.is_finite() {
            return Ok(None);
        }
        if let Some(&prev) = trace.last() {
            if ll - prev < opts.tol * (1.0 + ll.abs()) {
                trace.push(ll);
                return Ok(Some((comps, trace)));
            }
        }
        trace.push(ll);
        match m_step(data, &comps, &resp, opts, floor) {
            Step::Continue(next) => comps = next,
            Step::Collapsed => return Ok(None),
        }
    }
    trace.push(log_likelihood(data, &comps));
    Ok(Some((comps, trace)))
}

/// Fit a `k`-component mixture by generalised EM. Deterministic given `seed`.
pub fn fit_mixture(data: &[DVector<f64>], k: usize, seed: u64, opts: &FitOptions) -> Result<MixtureFit> {
    if k == 0 {
        return Err(CodaError::arg("mixture needs at least one component"));
    }
    let q = data.first().map(|h| h.len()).unwrap_or(0);
    if q == 0 || data.iter().any(|h| h.len() != q) {
        return Err(CodaError::arg("mixture data must be non-empty vectors of equal dimension"));
    }
    if data.len() <= k * q {
        return Err(CodaError::arg(format!(
            "{} samples cannot support {k} components in {q} dimensions",
            data.len()
        )));
    }
    if let Some(b) = opts.fix_beta {
        if !(b > 0.0) {
            return Err(CodaError::arg("fixed beta must be positive"));
        }
    }
    for attempt in 0..=opts.max_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        if let Some((comps, trace)) = run_em(data, k, &mut rng, opts)? {
            let components = comps
                .iter()
                .map(|c| GgdComponent::from_matrices(&c.mu, &c.sigma, c.beta, 1.0, c.phi))
                .collect::<Result<Vec<_>>>()?;
            let log_likelihood = *trace.last().unwrap();
            return Ok(MixtureFit {
                components,
                log_likelihood,
                trace,
                restarts: attempt,
            });
        }
        log::debug!("mixture K={k} collapsed on attempt {attempt}; restarting");
    }
    Err(CodaError::Numeric(format!(
        "mixture with K = {k} collapsed in {} attempts",
        opts.max_restarts + 1
    )))
}

/// Result of model-order selection.
#[derive(Debug, Clone)]
pub struct BicSelection {
    pub k: usize,
    pub fit: MixtureFit,
    /// `(K, BIC)` for every order that could be fitted.
    pub scores: Vec<(usize, f64)>,
}

/// Fit `K = 1..=k_max` and keep the order with the smallest BIC. Orders whose
/// sample count cannot support them are skipped, as are orders above one that
/// collapse on every restart.
pub fn select_k_bic(data: &[DVector<f64>], k_max: usize, seed: u64, opts: &FitOptions) -> Result<BicSelection> {
    if k_max == 0 {
        return Err(CodaError::arg("k_max must be at least 1"));
    }
    let q = data.first().map(|h| h.len()).unwrap_or(0);
    let mut best: Option<(f64, MixtureFit)> = None;
    let mut scores = Vec::new();
    for k in 1..=k_max {
        if data.len() <= k * q {
            break;
        }
        let fit = match fit_mixture(data, k, seed.wrapping_add(k as u64), opts) {
            Ok(f) => f,
            Err(e) if k > 1 => {
                log::warn!("skipping K = {k}: {e}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let score = bic(fit.log_likelihood, parameter_count(k, q, opts.fix_beta.is_none()), data.len());
        scores.push((k, score));
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, fit));
        }
    }
    let (_, fit) = best.ok_or_else(|| CodaError::arg(format!("{} samples are too few for a {q}-D mixture", data.len())))?;
    Ok(BicSelection { k: fit.k(), fit, scores })
}
