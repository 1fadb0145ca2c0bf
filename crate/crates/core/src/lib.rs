//! Sperm-whale coda detection by constrained click clustering.
//!
//! A recording is cut into overlapping buffers. In each buffer, clicks are
//! found on the Teager-Kaiser energy of the band-passed signal
//! ([`transient`]) and described by IPI, multipulse count, resonant
//! frequency and intensity ([`features`]). Pairwise affinities and a trained
//! rhythm model ([`temporal`]) score every candidate subset of clicks, and a
//! greedy maximum-utility selection picks non-overlapping codas
//! ([`clustering`]), optionally restricted to multipulse, resonant clicks.
//! [`annotator`] runs the whole chain and labels each coda's type;
//! [`exchange`] turns annotations into signal/response statistics.
//!
//! [`synth`] renders scripted scenes with ground truth and [`eval`] scores
//! detections against it. The `coda` binary ([`cli`]) wraps all of this.
//!
//! ```no_run
//! use coda::annotator::{detect_codas, PipelineConfig};
//! use coda::audio::load_audio;
//! use coda::temporal::CodaTypeModel;
//!
//! let model = CodaTypeModel::load("model.json")?;
//! let signal = load_audio("tag.wav", 0)?;
//! for d in detect_codas(&signal, &model, &PipelineConfig::default())? {
//!     println!("{:.3} s {} ({} clicks)", d.start_time, d.type_label, d.n_clicks());
//! }
//! # Ok::<(), coda::error::CodaError>(())
//! ```

pub mod audio;
pub mod error;
pub mod features;
pub mod transient;
pub mod temporal;
pub mod clustering;
pub mod annotator;
pub mod synth;
pub mod eval;
pub mod exchange;
pub mod config;
pub mod cli;
