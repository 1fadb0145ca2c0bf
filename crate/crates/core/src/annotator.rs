//! End-to-end coda detection and annotation files.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{frame_buffers, AnalysisBuffer, SampledSignal};
use crate::clustering::{solve_greedy, ClusterSolution, ClusteringConfig};
use crate::error::{CodaError, Result};
use crate::features::{affinity_matrix, annotate_features, AffinityMatrix, FeatureConfig};
use crate::temporal::CodaTypeModel;
use crate::transient::{find_clicks, ClickEvent, DetectorConfig};

pub const ANNOTATION_SCHEMA: &str = "coda-annotations/1";
pub const UNKNOWN_LABEL: &str = "unknown";

/// Settings for [`detect_codas`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub buffer_sec: f64,
    pub overlap_sec: f64,
    pub detector: DetectorConfig,
    pub features: FeatureConfig,
    pub cluster: ClusteringConfig,
    /// A coda is "unknown" when its best type density is below this fraction
    /// of that type's density at its own mode.
    pub unknown_floor: f64,
    /// Clicks of detections from overlapping buffers closer than this are the same click.
    pub merge_tol_ms: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            buffer_sec: 7.0,
            overlap_sec: 2.0,
            detector: DetectorConfig::default(),
            features: FeatureConfig::default(),
            cluster: ClusteringConfig::default(),
            unknown_floor: 1e-6,
            merge_tol_ms: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodaDetection {
    pub start_time: f64,
    pub click_times: Vec<f64>,
    pub ici: Vec<f64>,
    pub type_label: String,
    /// Normalised type posterior, in label order.
    pub type_posterior: BTreeMap<String, f64>,
    pub structural_score: f64,
    pub temporal_score: f64,
    pub utility: f64,
    /// Cluster number within its buffer, in greedy selection order.
    pub source_index: usize,
    pub buffer_index: usize,
    pub mean_ipi_ms: Option<f64>,
    pub mean_intensity: f64,
    pub mean_multipulse: f64,
    pub mean_resonance_hz: f64,
    pub constrained_mode: bool,
}

impl CodaDetection {
    pub fn end_time(&self) -> f64 {
        *self.click_times.last().unwrap_or(&self.start_time)
    }

    pub fn n_clicks(&self) -> usize {
        self.click_times.len()
    }
}

/// Outcome of [`classify_coda_type`].
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: String,
    pub posterior: BTreeMap<String, f64>,
}

/// Most likely coda type of an ICI vector. Ties go to the lexicographically
/// smaller label; a best density under `floor` times that type's mode density
/// gives [`UNKNOWN_LABEL`], as does an ICI count the model does not cover.
pub fn classify_coda_type(ici: &[f64], model: &CodaTypeModel, floor: f64) -> Result<Classification> {
    let Some(wm) = model.width(ici.len()) else {
        return Ok(Classification {
            label: UNKNOWN_LABEL.to_string(),
            posterior: BTreeMap::new(),
        });
    };
    let dens = wm.type_densities(ici)?;
    let total: f64 = dens.iter().map(|(_, p)| p).sum();
    let mut best: Option<(&str, f64)> = None;
    for &(g, p) in &dens {
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((g, p));
        }
    }
    let posterior = dens
        .iter()
        .map(|&(g, p)| (g.to_string(), if total > 0.0 { p / total } else { 0.0 }))
        .collect();
    let label = match best {
        Some((g, p)) if p > 0.0 && p >= floor * wm.types[g].mode_density()? => g.to_string(),
        _ => UNKNOWN_LABEL.to_string(),
    };
    Ok(Classification { label, posterior })
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Clicks of one buffer with their features, and their affinity matrix.
pub fn prepare_buffer(buffer: &AnalysisBuffer<'_>, cfg: &PipelineConfig) -> Result<(Vec<ClickEvent>, Option<AffinityMatrix>)> {
    let (_, mut clicks) = find_clicks(buffer, &cfg.detector)?;
    if clicks.len() < cfg.cluster.min_clicks {
        return Ok((clicks, None));
    }
    annotate_features(&mut clicks, &cfg.features)?;
    let s = affinity_matrix(&clicks, &cfg.features)?;
    Ok((clicks, Some(s)))
}

/// Turn the clusters of a solution into typed detections.
pub fn solution_detections(
    clicks: &[ClickEvent],
    solution: &ClusterSolution,
    buffer_index: usize,
    model: &CodaTypeModel,
    cfg: &PipelineConfig,
) -> Result<Vec<CodaDetection>> {
    solution
        .clusters
        .iter()
        .enumerate()
        .map(|(source_index, c)| {
            let members: Vec<&ClickEvent> = c.assignment.members.iter().map(|&i| &clicks[i]).collect();
            let click_times: Vec<f64> = members.iter().map(|m| m.peak_time).collect();
            let ici: Vec<f64> = click_times.windows(2).map(|w| w[1] - w[0]).collect();
            let class = classify_coda_type(&ici, model, cfg.unknown_floor)?;
            let feats = members.iter().filter_map(|m| m.features.as_ref());
            Ok(CodaDetection {
                start_time: click_times[0],
                type_label: class.label,
                type_posterior: class.posterior,
                structural_score: c.structural,
                temporal_score: c.temporal,
                utility: c.utility,
                source_index,
                buffer_index,
                mean_ipi_ms: mean(feats.clone().filter_map(|f| f.ipi_ms)),
                mean_intensity: mean(feats.map(|f| f.intensity_rms)).unwrap_or(0.0),
                mean_multipulse: c.multipulse,
                mean_resonance_hz: c.resonance_hz,
                constrained_mode: cfg.cluster.constrained,
                click_times,
                ici,
            })
        })
        .collect()
}

/// Detect, cluster and type the codas of one buffer.
pub fn detect_in_buffer(
    buffer: &AnalysisBuffer<'_>,
    buffer_index: usize,
    model: &CodaTypeModel,
    cfg: &PipelineConfig,
) -> Result<Vec<CodaDetection>> {
    let (clicks, Some(s)) = prepare_buffer(buffer, cfg)? else {
        return Ok(Vec::new());
    };
    let solution = solve_greedy(&clicks, &s, model, &cfg.cluster)?;
    solution_detections(&clicks, &solution, buffer_index, model, cfg)
}

fn shares_click(a: &CodaDetection, b: &CodaDetection, tol: f64) -> bool {
    a.click_times
        .iter()
        .any(|t| b.click_times.iter().any(|u| (t - u).abs() <= tol))
}

/// Reconcile detections from overlapping buffers: larger, then higher-utility
/// detections win, and any detection sharing a click (within `tol_sec`) with an
/// accepted one is dropped. Output is sorted by start time.
pub fn merge_detections(mut all: Vec<CodaDetection>, tol_sec: f64) -> Vec<CodaDetection> {
    all.sort_by(|a, b| {
        b.n_clicks()
            .cmp(&a.n_clicks())
            .then(b.utility.total_cmp(&a.utility))
            .then(a.start_time.total_cmp(&b.start_time))
            .then(a.buffer_index.cmp(&b.buffer_index))
    });
    let mut kept: Vec<CodaDetection> = Vec::new();
    for d in all {
        if !kept.iter().any(|k| shares_click(k, &d, tol_sec)) {
            kept.push(d);
        }
    }
    kept.sort_by(|a, b| a.start_time.total_cmp(&b.start_time).then(a.buffer_index.cmp(&b.buffer_index)));
    kept
}

/// Run the full pipeline over a recording.
pub fn detect_codas(signal: &SampledSignal, model: &CodaTypeModel, cfg: &PipelineConfig) -> Result<Vec<CodaDetection>> {
    cfg.cluster.validate()?;
    cfg.features.weights.validate()?;
    let buffers = frame_buffers(signal, cfg.buffer_sec, cfg.overlap_sec)?;
    let per_buffer: Vec<Vec<CodaDetection>> = buffers
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            detect_in_buffer(b, i, model, cfg).map_err(|e| e.context(format!("buffer {i} at {:.3} s", b.start_time)))
        })
        .collect::<Result<_>>()?;
    Ok(merge_detections(per_buffer.into_iter().flatten().collect(), cfg.merge_tol_ms * 1e-3))
}

/// Provenance of a run: enough to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub schema: String,
    pub command: String,
    pub argv: Vec<String>,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    /// Effective configuration, one `key=value` per entry.
    pub config: Vec<String>,
    pub model_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: f64,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: Vec<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            schema: ANNOTATION_SCHEMA.to_string(),
            command: command.to_string(),
            argv,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config,
            model_version: None,
            timing: None,
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let meta = std::fs::metadata(path).map_err(|e| CodaError::io(path, e))?;
        self.inputs.push(InputFile {
            path: path.display().to_string(),
            bytes: meta.len(),
        });
        Ok(())
    }

    /// Copy without wall-clock data, for embedding in reproducible outputs.
    pub fn without_timing(&self) -> Self {
        Self {
            timing: None,
            ..self.clone()
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| CodaError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CodaError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Annotation file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDocument {
    pub schema: String,
    pub manifest: Option<RunManifest>,
    pub detections: Vec<CodaDetection>,
}

impl AnnotationDocument {
    pub fn new(detections: Vec<CodaDetection>, manifest: Option<RunManifest>) -> Self {
        Self {
            schema: ANNOTATION_SCHEMA.to_string(),
            manifest: manifest.map(|m| m.without_timing()),
            detections,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationFormat {
    Json,
    Csv,
}

const CSV_HEADER: [&str; 13] = [
    "start_time",
    "end_time",
    "n_clicks",
    "type_label",
    "utility",
    "structural_score",
    "temporal_score",
    "source_index",
    "buffer_index",
    "mean_ipi_ms",
    "mean_intensity",
    "constrained_mode",
    "click_times",
];

fn csv_text(doc: &AnnotationDocument) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CodaError::Format(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for d in &doc.detections {
        let times: Vec<String> = d.click_times.iter().map(|t| t.to_string()).collect();
        w.write_record([
            d.start_time.to_string(),
            d.end_time().to_string(),
            d.n_clicks().to_string(),
            d.type_label.clone(),
            d.utility.to_string(),
            d.structural_score.to_string(),
            d.temporal_score.to_string(),
            d.source_index.to_string(),
            d.buffer_index.to_string(),
            d.mean_ipi_ms.map(|v| v.to_string()).unwrap_or_default(),
            d.mean_intensity.to_string(),
            d.constrained_mode.to_string(),
            times.join(";"),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CodaError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CodaError::Format(e.to_string()))
}

pub fn write_annotations(doc: &AnnotationDocument, path: impl AsRef<Path>, format: AnnotationFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        AnnotationFormat::Json => serde_json::to_string_pretty(doc)? + "\n",
        AnnotationFormat::Csv => csv_text(doc)?,
    };
    std::fs::write(path, text).map_err(|e| CodaError::io(path, e))
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<AnnotationDocument> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CodaError::io(path, e))?;
    let doc: AnnotationDocument = serde_json::from_str(&text).map_err(|e| CodaError::Format(format!("{}: {e}", path.display())))?;
    if doc.schema != ANNOTATION_SCHEMA {
        return Err(CodaError::Format(format!("{}: unsupported schema {:?}", path.display(), doc.schema)));
    }
    Ok(doc)
}
