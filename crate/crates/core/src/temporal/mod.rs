//! Temporal (rhythm) model of codas: PCA of inter-click-interval vectors and
//! per-type generalised-Gaussian mixtures.

mod database;
mod ggd;
mod mixture;
mod model;
mod pca;

pub use database::{CodaDatabase, CodaEntry};
pub use ggd::{ggd_log_norm, ggd_pdf, mixture_pdf, GgdComponent};
pub use mixture::{bic, fit_mixture, parameter_count, select_k_bic, BicSelection, FitOptions, MixtureFit};
pub use model::{
    temporal_likelihood, train_model, CodaTypeModel, TemporalScore, TrainConfig, TypeMixture, WidthModel, MODEL_VERSION,
};
pub use pca::{choose_dimension, fit_pca, principal_axes, PcaBasis, PrincipalAxes};
