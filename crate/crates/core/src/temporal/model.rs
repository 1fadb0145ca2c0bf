use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::database::CodaDatabase;
use super::ggd::{mixture_pdf, GgdComponent};
use super::mixture::{select_k_bic, FitOptions};
use super::pca::{choose_dimension, principal_axes, PcaBasis};
use crate::error::{CodaError, Result};

pub const MODEL_VERSION: u32 = 1;

/// Mixture for one coda type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMixture {
    pub components: Vec<GgdComponent>,
    /// Density exceeded by most of the type's own training codas (see
    /// [`TrainConfig::reference_quantile`]); zero when unknown.
    #[serde(default)]
    pub reference_density: f64,
}

impl TypeMixture {
    pub fn new(components: Vec<GgdComponent>) -> Self {
        Self {
            components,
            reference_density: 0.0,
        }
    }

    /// Mixture whose reference density is the `quantile` of its densities
    /// over `data`.
    pub fn with_reference(components: Vec<GgdComponent>, data: &[DVector<f64>], quantile: f64) -> Result<Self> {
        let mut m = Self::new(components);
        let mut dens = data.iter().map(|o| m.density(o)).collect::<Result<Vec<_>>>()?;
        dens.sort_by(f64::total_cmp);
        let at = ((quantile.clamp(0.0, 1.0) * dens.len() as f64).floor() as usize).min(dens.len().saturating_sub(1));
        if let Some(&d) = dens.get(at) {
            m.reference_density = d;
        }
        Ok(m)
    }

    pub fn density(&self, o: &DVector<f64>) -> Result<f64> {
        mixture_pdf(o, &self.components)
    }

    /// Largest mixture density over the component means.
    pub fn mode_density(&self) -> Result<f64> {
        self.components
            .iter()
            .map(|c| self.density(&c.mu_vector()))
            .try_fold(0.0f64, |m, d| Ok(m.max(d?)))
    }

    /// Density a typical member reaches: the stored reference, or the mode
    /// density for models saved without one. A peaked low-shape component can
    /// put the mode far above anything the training codas reach, so a quantile
    /// of the training densities is the sturdier yardstick.
    pub fn typical_density(&self) -> Result<f64> {
        if self.reference_density > 0.0 {
            Ok(self.reference_density)
        } else {
            self.mode_density()
        }
    }
}

/// PCA space and per-type mixtures for codas with `W` inter-click intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthModel {
    pub mean: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub q: usize,
    pub types: BTreeMap<String, TypeMixture>,
}

impl WidthModel {
    pub fn pca(&self) -> PcaBasis {
        PcaBasis {
            mean: self.mean.clone(),
            basis: self.basis.clone(),
            q: self.q,
        }
    }

    pub fn project(&self, ici: &[f64]) -> Result<DVector<f64>> {
        self.pca().project(ici)
    }

    /// Density of `ici` under every type, in label order.
    pub fn type_densities(&self, ici: &[f64]) -> Result<Vec<(&str, f64)>> {
        let o = self.project(ici)?;
        self.types.iter().map(|(g, m)| Ok((g.as_str(), m.density(&o)?))).collect()
    }

    /// Largest type density attained at any component mean.
    pub fn peak_density(&self) -> Result<f64> {
        let mut best = 0.0f64;
        for mix in self.types.values() {
            for c in &mix.components {
                let o = c.mu_vector();
                let total: f64 = self.types.values().map(|m| m.density(&o)).sum::<Result<f64>>()?;
                best = best.max(total);
            }
        }
        Ok(best)
    }
}

/// Trained temporal model, keyed by ICI count `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodaTypeModel {
    pub version: u32,
    #[serde(rename = "per_W")]
    pub per_width: BTreeMap<usize, WidthModel>,
}

/// Temporal likelihood of one ICI vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalScore {
    pub value: f64,
    /// `true` when the model has no entry for this ICI count.
    pub no_model: bool,
}

impl CodaTypeModel {
    pub fn width(&self, w: usize) -> Option<&WidthModel> {
        self.per_width.get(&w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(CodaError::Model(format!("unsupported model version {}", self.version)));
        }
        for (w, m) in &self.per_width {
            let ctx = |e: CodaError| e.context(format!("W = {w}"));
            if m.mean.len() != *w {
                return Err(ctx(CodaError::Model(format!("mean has length {}", m.mean.len()))));
            }
            m.pca().validate().map_err(ctx)?;
            for (g, mix) in &m.types {
                if mix.components.is_empty() {
                    return Err(ctx(CodaError::Model(format!("type {g} has no components"))));
                }
                let phi: f64 = mix.components.iter().map(|c| c.phi).sum();
                if (phi - 1.0).abs() > 1e-9 {
                    return Err(ctx(CodaError::Model(format!("type {g} priors sum to {phi}"))));
                }
                for c in &mix.components {
                    if c.dim() != m.q {
                        return Err(ctx(CodaError::Model(format!("type {g} component has dimension {}", c.dim()))));
                    }
                    c.validate().map_err(ctx)?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CodaError::io(path, e))?;
        let model: Self = serde_json::from_str(&text).map_err(|e| CodaError::Model(format!("{}: {e}", path.display())))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| CodaError::io(path, e))
    }

    /// Sum over types of the mixture density at the projected ICI vector.
    pub fn temporal_likelihood(&self, ici: &[f64]) -> Result<TemporalScore> {
        let Some(m) = self.per_width.get(&ici.len()) else {
            return Ok(TemporalScore {
                value: 0.0,
                no_model: true,
            });
        };
        let value = m.type_densities(ici)?.iter().map(|(_, p)| p).sum();
        Ok(TemporalScore { value, no_model: false })
    }
}

pub fn temporal_likelihood(ici: &[f64], model: &CodaTypeModel) -> Result<TemporalScore> {
    model.temporal_likelihood(ici)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k_max: usize,
    /// Fixed PCA dimension; `None` picks it from `variance_threshold`.
    pub q: Option<usize>,
    pub variance_threshold: f64,
    pub q_cap: usize,
    /// Report each component's scale in `m` with `|Σ| = 1`.
    pub fit_scale: bool,
    /// Not part of the config file; runs set it from their single seed.
    #[serde(skip)]
    pub seed: u64,
    /// Fraction of a type's training codas allowed below its reference
    /// density.
    pub reference_quantile: f64,
    pub fit: FitOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k_max: 4,
            q: None,
            variance_threshold: 0.95,
            q_cap: 5,
            fit_scale: false,
            seed: 0,
            reference_quantile: 0.05,
            fit: FitOptions::default(),
        }
    }
}

fn label_seed(seed: u64, w: usize, label: &str) -> u64 {
    // FNV-1a, stable across platforms and runs
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes().chain((w as u64).to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed
}

fn rescale(c: GgdComponent) -> Result<GgdComponent> {
    let q = c.dim() as f64;
    let sigma = c.sigma_matrix();
    let det = sigma.determinant();
    if !(det > 0.0) {
        return Err(CodaError::Numeric("non-positive covariance determinant".into()));
    }
    let s = det.powf(1.0 / q);
    GgdComponent::from_matrices(&c.mu_vector(), &(sigma / s), c.beta, c.m * s, c.phi)
}

fn train_width(db: &CodaDatabase, w: usize, cfg: &TrainConfig) -> Result<Option<WidthModel>> {
    let entries = db.group(w);
    let rows: Vec<&[f64]> = entries.iter().map(|e| e.ici.as_slice()).collect();
    if rows.len() < 3 {
        log::warn!("W = {w}: only {} codas; no model trained", rows.len());
        return Ok(None);
    }
    let axes = principal_axes(&rows)?;
    let cap = cfg.q_cap.min(w).min(rows.len() - 1);
    let q = match cfg.q {
        Some(q) if q >= rows.len() || q > w || q == 0 => {
            return Err(CodaError::arg(format!("Q = {q} invalid for W = {w} with {} codas", rows.len())))
        }
        Some(q) => q,
        None => choose_dimension(&axes.variances, cfg.variance_threshold, cap),
    };
    let pca = PcaBasis::from_axes(&axes, q);

    let mut by_type: BTreeMap<&str, Vec<DVector<f64>>> = BTreeMap::new();
    for e in entries {
        by_type.entry(e.label.as_str()).or_default().push(pca.project(&e.ici)?);
    }
    let fitted: Vec<(String, Option<TypeMixture>)> = by_type
        .into_par_iter()
        .map(|(g, data)| {
            if data.len() <= q {
                log::warn!("W = {w}, type {g}: {} codas cannot support a {q}-D component; skipped", data.len());
                return Ok((g.to_string(), None));
            }
            let sel = select_k_bic(&data, cfg.k_max, label_seed(cfg.seed, w, g), &cfg.fit)
                .map_err(|e| e.context(format!("W = {w}, type {g}")))?;
            let components = if cfg.fit_scale {
                sel.fit.components.into_iter().map(rescale).collect::<Result<_>>()?
            } else {
                sel.fit.components
            };
            log::info!("W = {w}, type {g}: K = {}", sel.k);
            Ok((g.to_string(), Some(TypeMixture::with_reference(components, &data, cfg.reference_quantile)?)))
        })
        .collect::<Result<_>>()?;
    let types: BTreeMap<String, TypeMixture> = fitted.into_iter().filter_map(|(g, m)| m.map(|m| (g, m))).collect();
    if types.is_empty() {
        return Ok(None);
    }
    Ok(Some(WidthModel {
        mean: pca.mean,
        basis: pca.basis,
        q,
        types,
    }))
}

/// Fit the PCA space and per-type mixtures for every ICI count in the database.
pub fn train_model(db: &CodaDatabase, cfg: &TrainConfig) -> Result<CodaTypeModel> {
    if db.is_empty() {
        return Err(CodaError::arg("coda database is empty"));
    }
    let widths: Vec<usize> = db.widths().collect();
    let models: Vec<(usize, Option<WidthModel>)> = widths
        .par_iter()
        .map(|&w| Ok((w, train_width(db, w, cfg)?)))
        .collect::<Result<_>>()?;
    let per_width: BTreeMap<usize, WidthModel> = models.into_iter().filter_map(|(w, m)| m.map(|m| (w, m))).collect();
    if per_width.is_empty() {
        return Err(CodaError::arg("no ICI count has enough codas to train"));
    }
    Ok(CodaTypeModel {
        version: MODEL_VERSION,
        per_width,
    })
}
