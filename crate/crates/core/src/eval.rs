//! Detection scoring against ground truth.
//!
//! A detection is a true positive when at least half of its clicks lie within
//! the match tolerance of clicks of a single true coda that no higher-utility
//! detection has already claimed.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotator::CodaDetection;
use crate::error::{CodaError, Result};
use crate::synth::GroundTruth;

pub const DEFAULT_MATCH_TOL: f64 = 0.002;

/// Outcome of matching one detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatch {
    pub detection: usize,
    /// Index into the truth's coda list.
    pub coda: Option<usize>,
    /// Detected clicks that hit a click of the matched coda.
    pub hits: usize,
    /// True clicks of the matched coda recovered by the detection.
    pub recovered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_codas: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub minutes: f64,
    pub matches: Vec<DetectionMatch>,
}

impl EvalSummary {
    pub fn pd(&self) -> f64 {
        if self.n_codas == 0 {
            0.0
        } else {
            self.true_positives as f64 / self.n_codas as f64
        }
    }

    pub fn far_per_min(&self) -> f64 {
        if self.minutes > 0.0 {
            self.false_positives as f64 / self.minutes
        } else {
            0.0
        }
    }

    /// Recovered fraction of each matched coda's clicks.
    pub fn click_ratios(&self, truth: &GroundTruth) -> Vec<f64> {
        let codas: Vec<_> = truth.codas().collect();
        self.matches
            .iter()
            .filter_map(|m| m.coda.map(|c| m.recovered as f64 / codas[c].click_times.len() as f64))
            .collect()
    }
}

fn near(t: f64, times: &[f64], tol: f64) -> bool {
    times.iter().any(|u| (t - u).abs() <= tol)
}

/// Match detections to true codas, visiting detections in descending utility.
pub fn evaluate(detections: &[CodaDetection], truth: &GroundTruth, match_tol: f64) -> Result<EvalSummary> {
    if !(match_tol >= 0.0) {
        return Err(CodaError::arg("match tolerance must be non-negative"));
    }
    if !(truth.duration > 0.0) {
        return Err(CodaError::arg("truth duration must be positive"));
    }
    let codas: Vec<_> = truth.codas().collect();
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .utility
            .total_cmp(&detections[a].utility)
            .then(detections[a].start_time.total_cmp(&detections[b].start_time))
    });
    let mut taken = vec![false; codas.len()];
    let mut matches = Vec::with_capacity(detections.len());
    let (mut tp, mut fp) = (0, 0);
    for i in order {
        let d = &detections[i];
        let best = codas
            .iter()
            .enumerate()
            .filter(|(c, _)| !taken[*c])
            .map(|(c, coda)| {
                let hits = d.click_times.iter().filter(|&&t| near(t, &coda.click_times, match_tol)).count();
                (c, hits)
            })
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((c, hits)) if hits > 0 && 2 * hits >= d.click_times.len() => {
                taken[c] = true;
                tp += 1;
                let recovered = codas[c]
                    .click_times
                    .iter()
                    .filter(|&&t| near(t, &d.click_times, match_tol))
                    .count();
                matches.push(DetectionMatch {
                    detection: i,
                    coda: Some(c),
                    hits,
                    recovered,
                });
            }
            _ => {
                fp += 1;
                matches.push(DetectionMatch {
                    detection: i,
                    coda: None,
                    hits: 0,
                    recovered: 0,
                });
            }
        }
    }
    Ok(EvalSummary {
        n_codas: codas.len(),
        true_positives: tp,
        false_positives: fp,
        minutes: truth.duration / 60.0,
        matches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub rho_d: f64,
    pub pd: f64,
    pub far_per_min: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

/// Pd and FAR when only detections with utility above each threshold are kept.
/// `detections` should come from a run whose own threshold is at or below the
/// smallest sweep value.
pub fn roc_eval(detections: &[CodaDetection], truth: &GroundTruth, match_tol: f64, thresholds: &[f64]) -> Result<Vec<RocPoint>> {
    thresholds
        .iter()
        .map(|&rho| {
            let kept: Vec<CodaDetection> = detections.iter().filter(|d| d.utility > rho).cloned().collect();
            let s = evaluate(&kept, truth, match_tol)?;
            Ok(RocPoint {
                rho_d: rho,
                pd: s.pd(),
                far_per_min: s.far_per_min(),
                true_positives: s.true_positives,
                false_positives: s.false_positives,
            })
        })
        .collect()
}

/// Pool several scenes' sweeps into one curve (counts summed per threshold).
pub fn pool_roc(per_scene: &[(Vec<RocPoint>, usize, f64)]) -> Vec<RocPoint> {
    let Some((first, _, _)) = per_scene.first() else {
        return Vec::new();
    };
    let codas: usize = per_scene.iter().map(|s| s.1).sum();
    let minutes: f64 = per_scene.iter().map(|s| s.2).sum();
    (0..first.len())
        .map(|k| {
            let tp: usize = per_scene.iter().map(|s| s.0[k].true_positives).sum();
            let fp: usize = per_scene.iter().map(|s| s.0[k].false_positives).sum();
            RocPoint {
                rho_d: first[k].rho_d,
                pd: if codas > 0 { tp as f64 / codas as f64 } else { 0.0 },
                far_per_min: if minutes > 0.0 { fp as f64 / minutes } else { 0.0 },
                true_positives: tp,
                false_positives: fp,
            }
        })
        .collect()
}

/// Empirical CDF as (value, P(X ≤ value)) at each distinct value.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = p,
            _ => out.push((x, p)),
        }
    }
    out
}

/// CDF of the recovered-click ratio over true-positive detections.
pub fn click_ratio_cdf(detections: &[CodaDetection], truth: &GroundTruth, match_tol: f64) -> Result<Vec<(f64, f64)>> {
    Ok(empirical_cdf(&evaluate(detections, truth, match_tol)?.click_ratios(truth)))
}

/// Probability mass of the CDF exactly at `value`.
pub fn mass_at(cdf: &[(f64, f64)], value: f64) -> f64 {
    let mut below = 0.0;
    for &(x, p) in cdf {
        if x == value {
            return p - below;
        }
        below = p;
    }
    0.0
}

pub fn write_roc_csv(points: &[RocPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("rho_d,pd,far_per_min,true_positives,false_positives\n");
    for p in points {
        out += &format!("{},{},{},{},{}\n", p.rho_d, p.pd, p.far_per_min, p.true_positives, p.false_positives);
    }
    let mut f = std::fs::File::create(path).map_err(|e| CodaError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| CodaError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{EventKind, TruthEvent, TRUTH_SCHEMA};
    use std::collections::BTreeMap;

    fn truth(codas: &[Vec<f64>], duration: f64) -> GroundTruth {
        GroundTruth {
            schema: TRUTH_SCHEMA.into(),
            duration,
            events: codas
                .iter()
                .map(|c| TruthEvent {
                    kind: EventKind::Coda,
                    source_id: "a".into(),
                    type_label: None,
                    click_times: c.clone(),
                })
                .collect(),
        }
    }

    pub(crate) fn detection(times: &[f64], utility: f64) -> CodaDetection {
        CodaDetection {
            start_time: times[0],
            click_times: times.to_vec(),
            ici: times.windows(2).map(|w| w[1] - w[0]).collect(),
            type_label: "unknown".into(),
            type_posterior: BTreeMap::new(),
            structural_score: 0.0,
            temporal_score: 0.0,
            utility,
            source_index: 0,
            buffer_index: 0,
            mean_ipi_ms: None,
            mean_intensity: 0.0,
            mean_multipulse: 0.0,
            mean_resonance_hz: 0.0,
            constrained_mode: true,
        }
    }

    #[test]
    fn perfect_and_empty() {
        let c = vec![1.0, 1.1, 1.2, 1.3, 1.4];
        let t = truth(&[c.clone()], 60.0);
        let s = evaluate(&[detection(&c, 2.0)], &t, DEFAULT_MATCH_TOL).unwrap();
        assert_eq!((s.pd(), s.far_per_min()), (1.0, 0.0));
        let s = evaluate(&[], &t, DEFAULT_MATCH_TOL).unwrap();
        assert_eq!((s.pd(), s.far_per_min()), (0.0, 0.0));
    }

    #[test]
    fn half_rule_and_duplicates() {
        let c = vec![1.0, 1.1, 1.2, 1.3, 1.4];
        let t = truth(&[c.clone()], 30.0);
        // 2 of 4 clicks match: exactly half counts
        let half = detection(&[1.0005, 1.1, 5.0, 6.0], 1.0);
        assert_eq!(evaluate(&[half], &t, DEFAULT_MATCH_TOL).unwrap().true_positives, 1);
        let less = detection(&[1.0, 5.0, 6.0], 1.0);
        assert_eq!(evaluate(&[less], &t, DEFAULT_MATCH_TOL).unwrap().false_positives, 1);
        // the second copy of a matched coda is a false alarm
        let s = evaluate(&[detection(&c, 1.0), detection(&c[1..], 2.0)], &t, DEFAULT_MATCH_TOL).unwrap();
        assert_eq!((s.true_positives, s.false_positives), (1, 1));
        assert_eq!(s.far_per_min(), 2.0);
        assert_eq!(s.matches[0].detection, 1);
    }

    #[test]
    fn tolerance_edge() {
        let c = vec![1.0, 1.1, 1.2];
        let t = truth(&[c], 60.0);
        let off = detection(&[1.003, 1.103, 1.203], 1.0);
        assert_eq!(evaluate(&[off.clone()], &t, 0.002).unwrap().true_positives, 0);
        assert_eq!(evaluate(&[off], &t, 0.004).unwrap().true_positives, 1);
    }

    #[test]
    fn click_ratio_cdf_cases() {
        let a = vec![1.0, 1.1, 1.2, 1.3, 1.4];
        let b = vec![3.0, 3.1, 3.2, 3.3, 3.4];
        let t = truth(&[a.clone(), b.clone()], 60.0);
        let cdf = click_ratio_cdf(&[detection(&a, 1.0), detection(&b, 1.0)], &t, DEFAULT_MATCH_TOL).unwrap();
        assert_eq!(cdf, vec![(1.0, 1.0)]);
        let cdf = click_ratio_cdf(&[detection(&a, 1.0), detection(&b[..4], 1.0)], &t, DEFAULT_MATCH_TOL).unwrap();
        assert_eq!(mass_at(&cdf, 0.8), 0.5);
        assert_eq!(mass_at(&cdf, 1.0), 0.5);
    }

    #[test]
    fn roc_monotone() {
        let a = vec![1.0, 1.1, 1.2, 1.3, 1.4];
        let t = truth(&[a.clone()], 60.0);
        let dets = vec![detection(&a, 2.0), detection(&[10.0, 10.2, 10.4], 1.0), detection(&[20.0, 20.2, 20.4], 1.6)];
        let roc = roc_eval(&dets, &t, DEFAULT_MATCH_TOL, &[0.0, 1.5, 1.8, 2.5]).unwrap();
        for w in roc.windows(2) {
            assert!(w[1].pd <= w[0].pd && w[1].far_per_min <= w[0].far_per_min);
        }
        assert_eq!(roc[0].false_positives, 2);
        assert_eq!(roc[2].pd, 1.0);
        assert_eq!(roc[3].pd, 0.0);
    }

    #[test]
    fn empirical_cdf_steps() {
        assert_eq!(empirical_cdf(&[0.5, 1.0, 1.0, 0.5]), vec![(0.5, 0.5), (1.0, 1.0)]);
        assert!(empirical_cdf(&[]).is_empty());
    }
}
