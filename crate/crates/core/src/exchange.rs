//! Communication statistics over annotated codas.
//!
//! Codas are split into amplitude classes (one per whale; the loudest class is
//! the focal, tag-bearing animal), consecutive codas of different classes form
//! signal/response pairs, and the timing between and within codas is
//! summarised as Δ_CI, Δ_CB and Δ_ICI. Unknown codas can be grouped into
//! candidate new types in a three-component PCA space.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotator::{CodaDetection, UNKNOWN_LABEL};
use crate::error::{CodaError, Result};
use crate::temporal::{principal_axes, PcaBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaIciMode {
    /// Absolute value of the mean signed deviation.
    Printed,
    /// Root mean square of the per-interval deviations.
    Rms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeConfig {
    pub pair_window_sec: f64,
    /// Least level difference, in dB, between two amplitude classes.
    pub amp_gap_db: f64,
    pub min_cluster_size: usize,
    /// Neighbourhood radius as a fraction of the median pairwise distance.
    pub eps_fraction: f64,
    /// A discovered cluster's median internal distance must stay below this
    /// fraction of the median pairwise distance of all unknowns.
    pub max_spread_ratio: f64,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        Self {
            pair_window_sec: 7.0,
            amp_gap_db: 6.0,
            min_cluster_size: 10,
            eps_fraction: 0.5,
            max_spread_ratio: 0.25,
        }
    }
}

impl ExchangeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pair_window_sec > 0.0) {
            return Err(CodaError::arg("pair window must be positive"));
        }
        if !(self.amp_gap_db >= 0.0) {
            return Err(CodaError::arg("amplitude gap must be non-negative"));
        }
        if self.min_cluster_size < 2 {
            return Err(CodaError::arg("min_cluster_size must be at least 2"));
        }
        if !(self.eps_fraction > 0.0) || !(self.max_spread_ratio > 0.0) {
            return Err(CodaError::arg("discovery radii must be positive"));
        }
        Ok(())
    }
}

/// Mean click intensity in dB re 1 (full scale).
pub fn intensity_db(d: &CodaDetection) -> f64 {
    20.0 * d.mean_intensity.max(1e-12).log10()
}

/// Amplitude class of every detection, 0 being the loudest. Sorted by level,
/// a new class starts wherever two neighbours differ by at least `gap_db`.
pub fn amplitude_classes(detections: &[CodaDetection], gap_db: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    let level: Vec<f64> = detections.iter().map(intensity_db).collect();
    order.sort_by(|&a, &b| level[b].total_cmp(&level[a]).then(a.cmp(&b)));
    let mut class = vec![0; detections.len()];
    let mut current = 0;
    for w in 0..order.len() {
        if w > 0 && level[order[w - 1]] - level[order[w]] >= gap_db {
            current += 1;
        }
        class[order[w]] = current;
    }
    class
}

/// Two consecutive codas from different whales. Indices refer to the
/// detection slice the pair was found in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodaPair {
    pub signal: usize,
    pub response: usize,
    pub signal_class: usize,
    pub response_class: usize,
    /// Response first click minus signal last click; negative when they overlap.
    pub delta_cb: f64,
}

fn time_order(detections: &[CodaDetection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[a].start_time.total_cmp(&detections[b].start_time).then(a.cmp(&b)));
    order
}

/// Signal/response pairs: a focal coda (the signal) followed directly by a
/// coda of another amplitude class (the response), first clicks at most
/// `window` seconds apart. A pair is dropped
/// when three or more classes start a coda within `window` seconds either side
/// of the signal's first click, since the exchange is then ambiguous.
pub fn find_coda_pairs(detections: &[CodaDetection], window: f64, amp_gap_db: f64) -> Vec<CodaPair> {
    let class = amplitude_classes(detections, amp_gap_db);
    let order = time_order(detections);
    let mut pairs = Vec::new();
    for k in 0..order.len().saturating_sub(1) {
        let (a, b) = (order[k], order[k + 1]);
        let (sa, sb) = (&detections[a], &detections[b]);
        if class[a] != 0 || class[b] == 0 || sb.start_time - sa.start_time > window {
            continue;
        }
        let heard: BTreeSet<usize> = order
            .iter()
            .filter(|&&i| (detections[i].start_time - sa.start_time).abs() <= window)
            .map(|&i| class[i])
            .collect();
        if heard.len() >= 3 {
            continue;
        }
        pairs.push(CodaPair {
            signal: a,
            response: b,
            signal_class: class[a],
            response_class: class[b],
            delta_cb: inter_coda_break(sa, sb),
        });
    }
    pairs
}

/// Gaps between consecutive codas of one whale: next first click minus
/// previous last click. A negative gap means overlapping codas from one animal,
/// which points at a bad annotation; it is kept and logged.
pub fn inter_coda_interval(codas: &[&CodaDetection]) -> Vec<f64> {
    let mut sorted: Vec<&CodaDetection> = codas.to_vec();
    sorted.sort_by(|a, b| a.start_time.total_cmp(&b.start_time));
    sorted
        .windows(2)
        .map(|w| {
            let gap = w[1].start_time - w[0].end_time();
            if gap < 0.0 {
                log::warn!("codas at {:.3} s and {:.3} s of one source overlap by {:.3} s", w[0].start_time, w[1].start_time, -gap);
            }
            gap
        })
        .collect()
}

pub fn inter_coda_break(signal: &CodaDetection, response: &CodaDetection) -> f64 {
    response.start_time - signal.end_time()
}

/// Deviation of a measured ICI vector from a type's template.
pub fn delta_ici(ici: &[f64], template: &[f64], mode: DeltaIciMode) -> Result<f64> {
    if ici.len() != template.len() {
        return Err(CodaError::arg(format!(
            "ICI length {} does not match template length {}",
            ici.len(),
            template.len()
        )));
    }
    if ici.is_empty() {
        return Err(CodaError::arg("delta_ici needs at least one interval"));
    }
    let n = ici.len() as f64;
    let dev = ici.iter().zip(template).map(|(a, b)| a - b);
    Ok(match mode {
        DeltaIciMode::Printed => (dev.sum::<f64>() / n).abs(),
        DeltaIciMode::Rms => (dev.map(|d| d * d).sum::<f64>() / n).sqrt(),
    })
}

/// Per-type template: the element-wise mean ICI of that type's detections
/// with its most common interval count. Unknown codas get no template.
pub fn type_templates(detections: &[CodaDetection]) -> BTreeMap<String, Vec<f64>> {
    let mut by_type: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for d in detections.iter().filter(|d| d.type_label != UNKNOWN_LABEL && !d.ici.is_empty()) {
        by_type.entry(d.type_label.as_str()).or_default().push(&d.ici);
    }
    by_type
        .into_iter()
        .map(|(label, icis)| {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for v in &icis {
                *counts.entry(v.len()).or_default() += 1;
            }
            let w = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&w, _)| w).unwrap_or(0);
            let rows: Vec<&&[f64]> = icis.iter().filter(|v| v.len() == w).collect();
            let mean = (0..w).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect();
            (label.to_string(), mean)
        })
        .collect()
}

/// Δ_ICI of one detection against its type template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaIciRow {
    pub detection: usize,
    pub type_label: String,
    pub printed: f64,
    pub rms: f64,
}

/// Joint probability of (signal type, response type) over classified pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrMatrix {
    pub labels: Vec<String>,
    /// Row: signal type, column: response type.
    pub probability: Vec<Vec<f64>>,
    pub pairs: usize,
}

impl SrMatrix {
    pub fn total(&self) -> f64 {
        self.probability.iter().flatten().sum()
    }

    pub fn get(&self, signal: &str, response: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == signal)?;
        let j = self.labels.iter().position(|l| l == response)?;
        Some(self.probability[i][j])
    }
}

/// Signal/response matrix over `labels` (sorted). Pairs involving an unknown
/// coda, or a label outside `labels`, are not counted.
pub fn sr_matrix(pairs: &[CodaPair], detections: &[CodaDetection], labels: &[String]) -> SrMatrix {
    let mut labels = labels.to_vec();
    labels.sort();
    labels.dedup();
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut counts = vec![vec![0usize; labels.len()]; labels.len()];
    let mut total = 0;
    for p in pairs {
        let (s, r) = (&detections[p.signal].type_label, &detections[p.response].type_label);
        if let (Some(&i), Some(&j)) = (index.get(s.as_str()), index.get(r.as_str())) {
            counts[i][j] += 1;
            total += 1;
        }
    }
    let probability = counts
        .iter()
        .map(|row| row.iter().map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 }).collect())
        .collect();
    SrMatrix {
        labels,
        probability,
        pairs: total,
    }
}

/// Known type labels of a detection set, sorted.
pub fn known_labels(detections: &[CodaDetection]) -> Vec<String> {
    detections
        .iter()
        .filter(|d| d.type_label != UNKNOWN_LABEL)
        .map(|d| d.type_label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Candidate new coda type found among unknown codas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveredType {
    /// ICI vector of the member closest to all others.
    pub medoid_ici: Vec<f64>,
    /// Indices into the ICI list passed to [`discover_types`].
    pub members: Vec<usize>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Group ICI vectors of equal length into dense clusters: project onto up to
/// three principal components, run DBSCAN with radius `eps_fraction` times the
/// median pairwise distance and `min_cluster_size` points per core
/// neighbourhood, then keep clusters that are compact relative to the whole
/// set. Clusters come largest first.
pub fn discover_types(icis: &[Vec<f64>], cfg: &ExchangeConfig) -> Result<Vec<DiscoveredType>> {
    cfg.validate()?;
    let n = icis.len();
    if n < cfg.min_cluster_size {
        return Ok(Vec::new());
    }
    let w = icis[0].len();
    if w == 0 || icis.iter().any(|v| v.len() != w) {
        return Err(CodaError::arg("discovery needs non-empty ICI vectors of one length"));
    }
    let rows: Vec<&[f64]> = icis.iter().map(|v| v.as_slice()).collect();
    let axes = principal_axes(&rows)?;
    let pca = PcaBasis::from_axes(&axes, 3.min(w).min(n - 1));
    let points: Vec<Vec<f64>> = icis
        .iter()
        .map(|v| pca.project(v).map(|p| p.iter().copied().collect()))
        .collect::<Result<_>>()?;

    let d: Vec<Vec<f64>> = points.iter().map(|a| points.iter().map(|b| dist(a, b)).collect()).collect();
    let all: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d[i][j]).collect();
    let scale = median(all);
    if !(scale > 0.0) {
        // every vector identical: one cluster if it is big enough
        return Ok(vec![DiscoveredType {
            medoid_ici: icis[0].clone(),
            members: (0..n).collect(),
        }]);
    }
    let eps = cfg.eps_fraction * scale;
    let neighbours: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| d[i][j] <= eps).collect()).collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= cfg.min_cluster_size).collect();

    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for seed in 0..n {
        if !core[seed] || label[seed].is_some() {
            continue;
        }
        let id = clusters.len();
        let mut members = Vec::new();
        let mut queue = vec![seed];
        label[seed] = Some(id);
        while let Some(p) = queue.pop() {
            members.push(p);
            if !core[p] {
                continue;
            }
            for &q in &neighbours[p] {
                if label[q].is_none() {
                    label[q] = Some(id);
                    queue.push(q);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }

    let mut found: Vec<DiscoveredType> = clusters
        .into_iter()
        .filter(|m| m.len() >= cfg.min_cluster_size)
        .filter(|m| {
            let d = &d;
            let inner: Vec<f64> = m.iter().enumerate().flat_map(|(a, &i)| m[a + 1..].iter().map(move |&j| d[i][j])).collect();
            median(inner) <= cfg.max_spread_ratio * scale
        })
        .map(|members| {
            let medoid = *members
                .iter()
                .min_by(|&&a, &&b| {
                    let sa: f64 = members.iter().map(|&j| d[a][j]).sum();
                    let sb: f64 = members.iter().map(|&j| d[b][j]).sum();
                    sa.total_cmp(&sb).then(a.cmp(&b))
                })
                .expect("non-empty cluster");
            DiscoveredType {
                medoid_ici: icis[medoid].clone(),
                members,
            }
        })
        .collect();
    found.sort_by(|a, b| b.members.len().cmp(&a.members.len()).then(a.members[0].cmp(&b.members[0])));
    Ok(found)
}

/// One histogram bin of a probability density table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityBin {
    pub bin_center: f64,
    pub density: f64,
    pub bin_width: f64,
}

/// Width used when every sample is identical.
const DEGENERATE_BIN_WIDTH: f64 = 1e-3;

/// Histogram density with Freedman-Diaconis bins (falling back to √n bins when
/// the quartiles coincide). Empty bins inside the range are kept, so the
/// densities integrate to one.
pub fn density_histogram(samples: &[f64]) -> Vec<DensityBin> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Vec::new();
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let (lo, hi) = (v[0], v[n - 1]);
    let range = hi - lo;
    if range <= 0.0 {
        return vec![DensityBin {
            bin_center: lo,
            density: 1.0 / DEGENERATE_BIN_WIDTH,
            bin_width: DEGENERATE_BIN_WIDTH,
        }];
    }
    let q = |p: f64| v[((p * (n - 1) as f64).round() as usize).min(n - 1)];
    let iqr = q(0.75) - q(0.25);
    let mut width = 2.0 * iqr / (n as f64).cbrt();
    if !(width > 0.0) {
        width = range / (n as f64).sqrt().ceil();
    }
    let bins = ((range / width).ceil() as usize).clamp(1, 10_000);
    let width = range / bins as f64;
    let mut counts = vec![0usize; bins];
    for x in &v {
        let k = (((x - lo) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(k, &c)| DensityBin {
            bin_center: lo + (k as f64 + 0.5) * width,
            density: c as f64 / (n as f64 * width),
            bin_width: width,
        })
        .collect()
}

fn csv_err(e: csv::Error) -> CodaError {
    CodaError::Format(e.to_string())
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CodaError::Format(format!("{}: {e}", path.display())))?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CodaError::io(path, e))
}

/// Write a `bin_center,density,bin_width` table of `samples`.
pub fn write_density_csv(path: impl AsRef<Path>, samples: &[f64]) -> Result<()> {
    let rows = density_histogram(samples)
        .into_iter()
        .map(|b| vec![b.bin_center.to_string(), b.density.to_string(), b.bin_width.to_string()]);
    write_csv(path.as_ref(), &["bin_center", "density", "bin_width"], rows)
}

/// Candidate new types among unknown codas with `w` intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryGroup {
    pub ici_count: usize,
    pub clusters: Vec<DiscoveredType>,
    /// Detection indices of the unknown codas the clusters index into.
    pub detections: Vec<usize>,
}

/// Everything the analysis step produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeStats {
    pub classes: Vec<usize>,
    pub pairs: Vec<CodaPair>,
    /// Δ_CI samples per amplitude class.
    pub delta_ci: BTreeMap<usize, Vec<f64>>,
    pub delta_cb: Vec<f64>,
    pub delta_ici: Vec<DeltaIciRow>,
    pub sr: SrMatrix,
    pub discovered: Vec<DiscoveryGroup>,
}

pub fn analyze_exchanges(detections: &[CodaDetection], cfg: &ExchangeConfig) -> Result<ExchangeStats> {
    cfg.validate()?;
    let classes = amplitude_classes(detections, cfg.amp_gap_db);
    let pairs = find_coda_pairs(detections, cfg.pair_window_sec, cfg.amp_gap_db);

    let mut by_class: BTreeMap<usize, Vec<&CodaDetection>> = BTreeMap::new();
    for (d, &c) in detections.iter().zip(&classes) {
        by_class.entry(c).or_default().push(d);
    }
    let delta_ci = by_class.iter().map(|(&c, ds)| (c, inter_coda_interval(ds))).collect();
    let delta_cb = pairs.iter().map(|p| p.delta_cb).collect();

    let templates = type_templates(detections);
    let mut deviations = Vec::new();
    for (i, d) in detections.iter().enumerate() {
        if let Some(t) = templates.get(&d.type_label).filter(|t| t.len() == d.ici.len()) {
            deviations.push(DeltaIciRow {
                detection: i,
                type_label: d.type_label.clone(),
                printed: delta_ici(&d.ici, t, DeltaIciMode::Printed)?,
                rms: delta_ici(&d.ici, t, DeltaIciMode::Rms)?,
            });
        }
    }

    let sr = sr_matrix(&pairs, detections, &known_labels(detections));

    let mut unknown: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, d) in detections.iter().enumerate() {
        if d.type_label == UNKNOWN_LABEL && !d.ici.is_empty() {
            unknown.entry(d.ici.len()).or_default().push(i);
        }
    }
    let discovered = unknown
        .into_iter()
        .map(|(w, idx)| {
            let icis: Vec<Vec<f64>> = idx.iter().map(|&i| detections[i].ici.clone()).collect();
            Ok(DiscoveryGroup {
                ici_count: w,
                clusters: discover_types(&icis, cfg)?,
                detections: idx,
            })
        })
        .collect::<Result<_>>()?;

    Ok(ExchangeStats {
        classes,
        pairs,
        delta_ci,
        delta_cb,
        delta_ici: deviations,
        sr,
        discovered,
    })
}

pub const EXCHANGE_OUTPUTS: [&str; 6] = [
    "pairs.csv",
    "delta_ci.csv",
    "delta_cb.csv",
    "delta_ici_by_type.csv",
    "sr_matrix.csv",
    "discovered_types.json",
];

/// Write the analysis tables into `out_dir` (created if missing). Δ_CI and
/// Δ_CB are written as density tables; the raw Δ_CB of each pair is in
/// `pairs.csv`. Returns the written paths.
pub fn export_distributions(stats: &ExchangeStats, detections: &[CodaDetection], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| CodaError::io(dir, e))?;
    let path = |name: &str| dir.join(name);

    write_csv(
        &path("pairs.csv"),
        &["signal_start", "response_start", "signal_class", "response_class", "signal_type", "response_type", "delta_cb"],
        stats.pairs.iter().map(|p| {
            let (s, r) = (&detections[p.signal], &detections[p.response]);
            vec![
                s.start_time.to_string(),
                r.start_time.to_string(),
                p.signal_class.to_string(),
                p.response_class.to_string(),
                s.type_label.clone(),
                r.type_label.clone(),
                p.delta_cb.to_string(),
            ]
        }),
    )?;
    let all_ci: Vec<f64> = stats.delta_ci.values().flatten().copied().collect();
    write_density_csv(path("delta_ci.csv"), &all_ci)?;
    write_density_csv(path("delta_cb.csv"), &stats.delta_cb)?;
    write_csv(
        &path("delta_ici_by_type.csv"),
        &["start_time", "type_label", "delta_ici_printed", "delta_ici_rms"],
        stats.delta_ici.iter().map(|r| {
            vec![
                detections[r.detection].start_time.to_string(),
                r.type_label.clone(),
                r.printed.to_string(),
                r.rms.to_string(),
            ]
        }),
    )?;
    let mut header = vec!["signal\\response".to_string()];
    header.extend(stats.sr.labels.iter().cloned());
    let header_ref: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    write_csv(
        &path("sr_matrix.csv"),
        &header_ref,
        stats.sr.labels.iter().zip(&stats.sr.probability).map(|(l, row)| {
            std::iter::once(l.clone()).chain(row.iter().map(|p| p.to_string())).collect()
        }),
    )?;
    let json = path("discovered_types.json");
    std::fs::write(&json, serde_json::to_string_pretty(&stats.discovered)? + "\n").map_err(|e| CodaError::io(&json, e))?;
    Ok(EXCHANGE_OUTPUTS.iter().map(|n| path(n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn coda(start: f64, ici: &[f64], level_db: f64, label: &str) -> CodaDetection {
        let mut t = start;
        let mut click_times = vec![t];
        for d in ici {
            t += d;
            click_times.push(t);
        }
        CodaDetection {
            start_time: start,
            click_times,
            ici: ici.to_vec(),
            type_label: label.to_string(),
            type_posterior: BTreeMap::new(),
            structural_score: 1.0,
            temporal_score: 1.0,
            utility: 1.0,
            source_index: 0,
            buffer_index: 0,
            mean_ipi_ms: None,
            mean_intensity: 10f64.powf(level_db / 20.0),
            mean_multipulse: 5.0,
            mean_resonance_hz: 10_000.0,
            constrained_mode: true,
        }
    }

    #[test]
    fn focal_and_non_focal_make_one_pair() {
        let d = vec![coda(0.0, &[0.2; 4], 0.0, "5R2"), coda(2.0, &[0.2; 4], -20.0, "5R2")];
        let pairs = find_coda_pairs(&d, 7.0, 6.0);
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].signal, pairs[0].response), (0, 1));
        assert_eq!((pairs[0].signal_class, pairs[0].response_class), (0, 1));
        assert!((pairs[0].delta_cb - 1.2).abs() < 1e-12);
    }

    #[test]
    fn lone_coda_and_same_class_give_no_pairs() {
        assert!(find_coda_pairs(&[coda(0.0, &[0.2; 4], 0.0, "a")], 7.0, 6.0).is_empty());
        let same = vec![coda(0.0, &[0.2; 4], 0.0, "a"), coda(2.0, &[0.2; 4], -2.0, "a")];
        assert!(find_coda_pairs(&same, 7.0, 6.0).is_empty());
    }

    #[test]
    fn alternating_exchange_gives_focal_led_pairs() {
        let mut d = Vec::new();
        for k in 0..3 {
            let t = 4.0 * k as f64;
            d.push(coda(t, &[0.2; 4], 0.0, "a"));
            d.push(coda(t + 1.2, &[0.2; 4], -20.0, "b"));
        }
        let pairs = find_coda_pairs(&d, 7.0, 6.0);
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().all(|p| p.signal_class == 0 && p.response_class == 1));
        assert!(pairs.iter().all(|p| (p.delta_cb - 0.4).abs() < 1e-12));
        // a non-focal coda answered by the focal whale is not a pair
        let reversed = vec![coda(0.0, &[0.2; 4], -20.0, "b"), coda(2.0, &[0.2; 4], 0.0, "a")];
        assert!(find_coda_pairs(&reversed, 7.0, 6.0).is_empty());
    }

    #[test]
    fn three_whales_in_a_window_are_discarded() {
        let d = vec![
            coda(0.0, &[0.2; 4], 0.0, "a"),
            coda(1.5, &[0.2; 4], -20.0, "a"),
            coda(3.0, &[0.2; 4], -40.0, "a"),
        ];
        assert_eq!(amplitude_classes(&d, 6.0), vec![0, 1, 2]);
        assert!(find_coda_pairs(&d, 7.0, 6.0).is_empty());
    }

    #[test]
    fn pairs_need_the_window() {
        let d = vec![coda(0.0, &[0.2; 4], 0.0, "a"), coda(7.5, &[0.2; 4], -20.0, "a")];
        assert!(find_coda_pairs(&d, 7.0, 6.0).is_empty());
    }

    #[test]
    fn interval_examples() {
        let a = coda(0.0, &[0.25; 4], 0.0, "a");
        let b = coda(3.5, &[0.25; 4], 0.0, "a");
        assert_eq!(inter_coda_interval(&[&a, &b]), vec![2.5]);
        assert!(inter_coda_interval(&[&a]).is_empty());
        let overlapping = coda(0.5, &[0.25; 4], 0.0, "a");
        assert!(inter_coda_interval(&[&a, &overlapping])[0] < 0.0);
    }

    #[test]
    fn break_examples() {
        let s = coda(1.0, &[0.25; 4], 0.0, "a");
        assert!((inter_coda_break(&s, &coda(2.4, &[0.1], 0.0, "b")) - 0.4).abs() < 1e-12);
        assert!(inter_coda_break(&s, &coda(1.5, &[0.1], 0.0, "b")) < 0.0);
        assert_eq!(inter_coda_break(&s, &coda(2.0, &[0.1], 0.0, "b")), 0.0);
    }

    #[test]
    fn delta_ici_examples() {
        let t = [0.2, 0.2, 0.2, 0.2];
        assert_eq!(delta_ici(&t, &t, DeltaIciMode::Printed).unwrap(), 0.0);
        let up = [0.21, 0.21, 0.21, 0.21];
        assert!((delta_ici(&up, &t, DeltaIciMode::Printed).unwrap() - 0.01).abs() < 1e-12);
        let alt = [0.21, 0.19, 0.21, 0.19];
        assert!(delta_ici(&alt, &t, DeltaIciMode::Printed).unwrap().abs() < 1e-12);
        assert!((delta_ici(&alt, &t, DeltaIciMode::Rms).unwrap() - 0.01).abs() < 1e-12);
        assert!(delta_ici(&t[..3], &t, DeltaIciMode::Rms).is_err());
    }

    #[test]
    fn sr_matrix_examples() {
        let d = vec![
            coda(0.0, &[0.2; 4], 0.0, "1+1+3"),
            coda(2.0, &[0.2; 4], -20.0, "1+1+3"),
            coda(20.0, &[0.2; 4], 0.0, "1+1+3"),
            coda(22.0, &[0.2; 4], -20.0, "1+1+3"),
        ];
        let pairs = find_coda_pairs(&d, 7.0, 6.0);
        let m = sr_matrix(&pairs, &d, &known_labels(&d));
        assert_eq!(m.probability, vec![vec![1.0]]);
        let empty = sr_matrix(&[], &d, &["a".to_string(), "b".to_string()]);
        assert_eq!(empty.total(), 0.0);
        assert_eq!(empty.probability, vec![vec![0.0; 2]; 2]);
    }

    #[test]
    fn sr_matrix_uniform_cells() {
        let labels = ["a", "b"];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut d = Vec::new();
        let n = 4000;
        for k in 0..n {
            let t = k as f64 * 20.0;
            d.push(coda(t, &[0.2; 4], 0.0, labels[rng.random_range(0..2)]));
            d.push(coda(t + 2.0, &[0.2; 4], -20.0, labels[rng.random_range(0..2)]));
        }
        let pairs = find_coda_pairs(&d, 7.0, 6.0);
        assert_eq!(pairs.len(), n);
        let m = sr_matrix(&pairs, &d, &known_labels(&d));
        assert!((m.total() - 1.0).abs() < 1e-12);
        // 99.9% binomial interval for p = 0.25 at n = 4000
        let half = 3.29 * (0.25f64 * 0.75 / n as f64).sqrt();
        for row in &m.probability {
            for &p in row {
                assert!((p - 0.25).abs() < half, "{p}");
            }
        }
    }

    fn jittered(template: &[f64], sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let normal = Normal::new(0.0, sd).unwrap();
        template.iter().map(|t| t + normal.sample(rng)).collect()
    }

    #[test]
    fn novel_rhythm_is_discovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut icis = Vec::new();
        for _ in 0..30 {
            icis.push(jittered(&[0.1, 0.1, 0.3, 0.3, 0.1], 0.005, &mut rng));
        }
        for _ in 0..30 {
            icis.push((0..5).map(|_| rng.random_range(0.05..0.5)).collect());
        }
        let found = discover_types(&icis, &ExchangeConfig::default()).unwrap();
        assert_eq!(found.len(), 1, "{found:?}");
        let pure = found[0].members.iter().filter(|&&i| i < 30).count();
        assert!(pure as f64 / found[0].members.len() as f64 >= 0.9);
        assert!(pure >= 27);
    }

    #[test]
    fn scatter_has_no_types() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let icis: Vec<Vec<f64>> = (0..60).map(|_| (0..5).map(|_| rng.random_range(0.05..0.5)).collect()).collect();
            assert!(discover_types(&icis, &ExchangeConfig::default()).unwrap().is_empty(), "seed {seed}");
        }
    }

    #[test]
    fn too_few_unknowns() {
        let icis = vec![vec![0.1; 4]; 9];
        assert!(discover_types(&icis, &ExchangeConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn histogram_integrates_to_one() {
        let bins = density_histogram(&[0.3; 12]);
        assert_eq!(bins.len(), 1);
        assert!((bins[0].density * bins[0].bin_width - 1.0).abs() < 1e-12);
        assert!(density_histogram(&[]).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..3.0)).collect();
        let total: f64 = density_histogram(&s).iter().map(|b| b.density * b.bin_width).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn histogram_matches_gaussian() {
        use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let s: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
        let bins = density_histogram(&s);
        let reference = StdNormal::new(0.0, 1.0).unwrap();
        // histogram CDF at bin edges against the analytic CDF
        let mut cdf = 0.0;
        let mut ks: f64 = 0.0;
        for b in &bins {
            cdf += b.density * b.bin_width;
            ks = ks.max((cdf - reference.cdf(b.bin_center + b.bin_width / 2.0)).abs());
        }
        assert!(ks < 0.05, "{ks}");
    }

    #[test]
    fn exports_every_table() {
        let dir = tempfile::tempdir().unwrap();
        let d = vec![coda(0.0, &[0.2; 4], 0.0, "5R2"), coda(2.0, &[0.2; 4], -20.0, "5R3"), coda(4.0, &[0.2; 4], 0.0, "5R2")];
        let stats = analyze_exchanges(&d, &ExchangeConfig::default()).unwrap();
        let paths = export_distributions(&stats, &d, dir.path()).unwrap();
        assert_eq!(paths.len(), 6);
        assert!(paths.iter().all(|p| p.exists()));
        let sr = std::fs::read_to_string(dir.path().join("sr_matrix.csv")).unwrap();
        assert!(sr.starts_with("signal\\response,5R2,5R3"));
    }
}
