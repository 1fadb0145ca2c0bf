//! Grouping clicks into codas.
//!
//! Every time-ordered subset of 3 to 10 clicks spanning at most 2 s is a
//! candidate coda. Its utility combines the mean pairwise click similarity, the
//! rhythm likelihood of its inter-click intervals and a penalty on small
//! clusters. The greedy solver repeatedly accepts the best remaining candidate
//! that clears the detection threshold (and, in constrained mode, the
//! multipulse and resonance limits) and discards every candidate sharing a
//! click with it.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CodaError, Result};
use crate::features::AffinityMatrix;
use crate::temporal::CodaTypeModel;
use crate::transient::ClickEvent;

/// Largest click count accepted by [`solve_exact`].
pub const EXACT_LIMIT: usize = 12;

/// How the temporal likelihood is scaled before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalNorm {
    /// Best ratio of a type's density to the density of a typical member of
    /// that type, capped at 1.
    Typical,
    /// Divide the summed density by the model's largest summed density for
    /// that ICI count.
    Peak,
    /// Use the raw mixture density.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub rho_d: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub p_min: f64,
    pub fr_max_hz: f64,
    pub constrained: bool,
    /// Within constrained mode: require mean multipulse count above `p_min`.
    pub constrain_multipulse: bool,
    /// Within constrained mode: require mean resonance below `fr_max_hz`.
    pub constrain_resonance: bool,
    pub min_clicks: usize,
    pub max_clicks: usize,
    pub max_span_sec: f64,
    pub temporal_norm: TemporalNorm,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            rho_d: 0.6,
            alpha1: 1.0,
            alpha2: 0.5,
            p_min: 3.0,
            fr_max_hz: 12_000.0,
            constrained: true,
            constrain_multipulse: true,
            constrain_resonance: true,
            min_clicks: 3,
            max_clicks: 10,
            max_span_sec: 2.0,
            temporal_norm: TemporalNorm::Typical,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(CodaError::arg("alpha1 and alpha2 must be non-negative"));
        }
        if !(self.p_min >= 1.0) {
            return Err(CodaError::arg("p_min must be at least 1"));
        }
        if self.min_clicks < 2 || self.min_clicks > self.max_clicks || self.max_clicks > 64 {
            return Err(CodaError::arg(format!(
                "click-count bounds [{}, {}] must satisfy 2 <= min <= max <= 64",
                self.min_clicks, self.max_clicks
            )));
        }
        if !(self.max_span_sec > 0.0) {
            return Err(CodaError::arg("max_span_sec must be positive"));
        }
        if !self.rho_d.is_finite() {
            return Err(CodaError::arg("rho_d must be finite"));
        }
        Ok(())
    }

    /// Same settings with the multipulse and resonance limits switched off.
    pub fn unconstrained(mut self) -> Self {
        self.constrained = false;
        self
    }
}

/// Binary click membership of one cluster, as sorted click indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssignmentVector {
    pub members: Vec<usize>,
}

impl AssignmentVector {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { members }
    }

    /// Members as a bit set; clusters hold at most 64 clicks.
    pub fn mask(&self) -> u64 {
        self.members.iter().fold(0, |m, &i| m | 1 << i)
    }

    /// `c · cᵀ`.
    pub fn rank(&self) -> usize {
        self.members.len()
    }

    /// `c_l · c_kᵀ`: number of shared clicks.
    pub fn overlap(&self, other: &Self) -> usize {
        self.members.iter().filter(|i| other.members.binary_search(i).is_ok()).count()
    }

    pub fn to_binary(&self, m: usize) -> Vec<u8> {
        let mut v = vec![0; m];
        for &i in &self.members {
            if i < m {
                v[i] = 1;
            }
        }
        v
    }
}

/// `exp(1 / rank)`.
pub fn penalty(rank: usize) -> f64 {
    (1.0 / rank as f64).exp()
}

/// `c S cᵀ / (0.5 (n - 1) n)` for a cluster of `n` clicks.
pub fn structural_likelihood(c: &AssignmentVector, s: &AffinityMatrix) -> Result<f64> {
    let n = c.rank();
    if n < 2 {
        return Err(CodaError::arg(format!("structural likelihood needs rank >= 2, got {n}")));
    }
    if c.members.iter().any(|&i| i >= s.len()) {
        return Err(CodaError::arg("cluster member outside the affinity matrix"));
    }
    let mut quad = 0.0;
    for &i in &c.members {
        for &j in &c.members {
            quad += s.get(i, j);
        }
    }
    Ok(quad / (0.5 * (n as f64 - 1.0) * n as f64))
}

/// Mean multipulse count and mean resonant frequency of a cluster's members.
pub fn cluster_constraint_stats(c: &AssignmentVector, clicks: &[ClickEvent]) -> Result<(f64, f64)> {
    if c.rank() == 0 {
        return Err(CodaError::arg("constraint statistics of an empty cluster"));
    }
    let mut p = 0.0;
    let mut f = 0.0;
    for &i in &c.members {
        let click = clicks.get(i).ok_or_else(|| CodaError::arg(format!("cluster member {i} out of range")))?;
        let feat = click
            .features
            .as_ref()
            .ok_or_else(|| CodaError::arg(format!("click at {:.4} s has no features", click.peak_time)))?;
        p += feat.multipulse_count as f64;
        f += feat.resonant_freq_hz;
    }
    let n = c.rank() as f64;
    Ok((p / n, f / n))
}

/// Every term of one candidate's utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub assignment: AssignmentVector,
    pub utility: f64,
    pub structural: f64,
    /// Temporal likelihood after normalisation.
    pub temporal: f64,
    /// `true` when the model has no entry for this ICI count.
    pub no_model: bool,
    pub penalty: f64,
    pub multipulse: f64,
    pub resonance_hz: f64,
    /// Clears `rho_d` and, in constrained mode, the active limits.
    pub valid: bool,
}

/// Utility inputs shared by all candidates of one click set.
pub struct Scorer<'a> {
    clicks: &'a [ClickEvent],
    affinity: &'a AffinityMatrix,
    model: &'a CodaTypeModel,
    config: ClusteringConfig,
    /// Per ICI count: the peak density, or each type's mode density.
    scales: HashMap<usize, Vec<f64>>,
}

impl<'a> Scorer<'a> {
    pub fn new(clicks: &'a [ClickEvent], affinity: &'a AffinityMatrix, model: &'a CodaTypeModel, config: &ClusteringConfig) -> Result<Self> {
        config.validate()?;
        if affinity.len() != clicks.len() {
            return Err(CodaError::arg(format!(
                "affinity matrix is {}x{} for {} clicks",
                affinity.len(),
                affinity.len(),
                clicks.len()
            )));
        }
        if clicks.windows(2).any(|w| w[1].peak_time < w[0].peak_time) {
            return Err(CodaError::arg("clicks must be sorted by peak time"));
        }
        if clicks.len() > 64 {
            return Err(CodaError::arg(format!("{} clicks exceed the 64-click clustering limit", clicks.len())));
        }
        let scales = match config.temporal_norm {
            TemporalNorm::None => HashMap::new(),
            TemporalNorm::Peak => model
                .per_width
                .iter()
                .map(|(&w, m)| Ok((w, vec![m.peak_density()?])))
                .collect::<Result<_>>()?,
            TemporalNorm::Typical => model
                .per_width
                .iter()
                .map(|(&w, m)| Ok((w, m.types.values().map(|t| t.typical_density()).collect::<Result<Vec<_>>>()?)))
                .collect::<Result<_>>()?,
        };
        Ok(Self {
            clicks,
            affinity,
            model,
            config: *config,
            scales,
        })
    }

    pub fn config(&self) -> &ClusteringConfig {
        &self.config
    }

    /// ICI vector of the members' time-ordered peaks.
    pub fn ici(&self, c: &AssignmentVector) -> Vec<f64> {
        c.members
            .windows(2)
            .map(|w| self.clicks[w[1]].peak_time - self.clicks[w[0]].peak_time)
            .collect()
    }

    /// Normalised temporal likelihood and whether the ICI count has no model.
    pub fn temporal(&self, ici: &[f64]) -> Result<(f64, bool)> {
        let Some(width) = self.model.width(ici.len()) else {
            return Ok((0.0, true));
        };
        let scale = self.scales.get(&ici.len());
        let value = match (self.config.temporal_norm, scale) {
            (TemporalNorm::Typical, Some(modes)) => width
                .type_densities(ici)?
                .iter()
                .zip(modes)
                .filter(|(_, &m)| m > 0.0)
                .map(|((_, p), m)| (p / m).min(1.0))
                .fold(0.0, f64::max),
            (TemporalNorm::Peak, Some(p)) if p[0] > 0.0 => self.model.temporal_likelihood(ici)?.value / p[0],
            _ => self.model.temporal_likelihood(ici)?.value,
        };
        Ok((value, false))
    }

    pub fn evaluate(&self, c: &AssignmentVector) -> Result<Candidate> {
        let cfg = &self.config;
        let n = c.rank();
        if n < cfg.min_clicks || n > cfg.max_clicks {
            return Err(CodaError::arg(format!(
                "cluster of {n} clicks outside [{}, {}]",
                cfg.min_clicks, cfg.max_clicks
            )));
        }
        let structural = structural_likelihood(c, self.affinity)?;
        let ici = self.ici(c);
        let (temporal, no_model) = self.temporal(&ici)?;
        let pen = penalty(n);
        let utility = structural + cfg.alpha1 * temporal - cfg.alpha2 * pen;
        let (multipulse, resonance_hz) = cluster_constraint_stats(c, self.clicks)?;
        let mut valid = utility > cfg.rho_d;
        if cfg.constrained {
            if cfg.constrain_multipulse {
                valid &= multipulse > cfg.p_min;
            }
            if cfg.constrain_resonance {
                valid &= resonance_hz < cfg.fr_max_hz;
            }
        }
        Ok(Candidate {
            assignment: c.clone(),
            utility,
            structural,
            temporal,
            no_model,
            penalty: pen,
            multipulse,
            resonance_hz,
            valid,
        })
    }
}

/// All time-ordered click subsets with an allowed size and span, in
/// lexicographic order of their sorted indices.
pub fn candidate_codas(clicks: &[ClickEvent], config: &ClusteringConfig) -> Result<Vec<AssignmentVector>> {
    config.validate()?;
    if clicks.len() > 64 {
        return Err(CodaError::arg(format!("{} clicks exceed the 64-click clustering limit", clicks.len())));
    }
    let times: Vec<f64> = clicks.iter().map(|c| c.peak_time).collect();
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(CodaError::arg("clicks must be sorted by peak time"));
    }
    let mut out = Vec::new();
    let mut stack = Vec::with_capacity(config.max_clicks);
    fn walk(times: &[f64], cfg: &ClusteringConfig, next: usize, stack: &mut Vec<usize>, out: &mut Vec<AssignmentVector>) {
        if stack.len() >= cfg.min_clicks {
            out.push(AssignmentVector { members: stack.clone() });
        }
        if stack.len() == cfg.max_clicks {
            return;
        }
        for j in next..times.len() {
            if let Some(&first) = stack.first() {
                if times[j] - times[first] > cfg.max_span_sec {
                    break;
                }
            }
            stack.push(j);
            walk(times, cfg, j + 1, stack, out);
            stack.pop();
        }
    }
    walk(&times, config, 0, &mut stack, &mut out);
    Ok(out)
}

/// Score every candidate (in parallel, order preserved).
pub fn score_candidates(scorer: &Scorer<'_>, candidates: &[AssignmentVector]) -> Result<Vec<Candidate>> {
    candidates.par_iter().map(|c| scorer.evaluate(c)).collect()
}

/// Accepted clusters of a greedy or exact solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSolution {
    pub clusters: Vec<Candidate>,
    /// Click indices left out of every cluster.
    pub unassigned: Vec<usize>,
    /// Index into the scored candidate list of each greedy selection, in
    /// selection order (empty for the exact solver).
    pub selection_order: Vec<usize>,
}

impl ClusterSolution {
    fn build(clicks: usize, clusters: Vec<Candidate>, selection_order: Vec<usize>) -> Self {
        let used: u64 = clusters.iter().fold(0, |m, c| m | c.assignment.mask());
        Self {
            unassigned: (0..clicks).filter(|i| used >> i & 1 == 0).collect(),
            clusters,
            selection_order,
        }
    }

    /// `1/K + Σ J`, or 0 when no cluster was found.
    pub fn objective(&self) -> f64 {
        if self.clusters.is_empty() {
            0.0
        } else {
            1.0 / self.clusters.len() as f64 + self.clusters.iter().map(|c| c.utility).sum::<f64>()
        }
    }

    /// No click in two clusters.
    pub fn is_orthogonal(&self) -> bool {
        let mut seen = 0u64;
        for c in &self.clusters {
            let m = c.assignment.mask();
            if seen & m != 0 {
                return false;
            }
            seen |= m;
        }
        true
    }
}

/// Greedy preference: higher utility, then larger rank, then earlier first
/// click, then lexicographic membership.
pub fn greedy_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.utility
        .total_cmp(&a.utility)
        .then(b.assignment.rank().cmp(&a.assignment.rank()))
        .then(a.assignment.members.cmp(&b.assignment.members))
}

/// Greedy selection over already-scored candidates.
pub fn select_greedy(clicks: usize, scored: &[Candidate]) -> ClusterSolution {
    let mut order: Vec<usize> = (0..scored.len()).filter(|&i| scored[i].valid).collect();
    order.sort_by(|&a, &b| greedy_order(&scored[a], &scored[b]));
    let mut used = 0u64;
    let mut clusters = Vec::new();
    let mut picks = Vec::new();
    for i in order {
        let m = scored[i].assignment.mask();
        if used & m == 0 {
            used |= m;
            clusters.push(scored[i].clone());
            picks.push(i);
        }
    }
    ClusterSolution::build(clicks, clusters, picks)
}

pub fn solve_greedy(clicks: &[ClickEvent], s: &AffinityMatrix, model: &CodaTypeModel, config: &ClusteringConfig) -> Result<ClusterSolution> {
    let scorer = Scorer::new(clicks, s, model, config)?;
    let candidates = candidate_codas(clicks, config)?;
    let scored = score_candidates(&scorer, &candidates)?;
    Ok(select_greedy(clicks.len(), &scored))
}

/// Exhaustive maximiser of `1/K + Σ J` over sets of disjoint valid candidates.
pub fn solve_exact(clicks: &[ClickEvent], s: &AffinityMatrix, model: &CodaTypeModel, config: &ClusteringConfig) -> Result<ClusterSolution> {
    if clicks.len() > EXACT_LIMIT {
        return Err(CodaError::arg(format!(
            "exact solver refuses {} clicks (limit {EXACT_LIMIT})",
            clicks.len()
        )));
    }
    let scorer = Scorer::new(clicks, s, model, config)?;
    let candidates = candidate_codas(clicks, config)?;
    let scored = score_candidates(&scorer, &candidates)?;
    Ok(exact_from_scored(clicks.len(), &scored))
}

/// Exact selection over already-scored candidates (at most [`EXACT_LIMIT`] clicks).
pub fn exact_from_scored(m: usize, scored: &[Candidate]) -> ClusterSolution {
    let valid: Vec<&Candidate> = scored.iter().filter(|c| c.valid).collect();
    // candidates grouped by their first click
    let mut by_first: Vec<Vec<(u64, usize)>> = vec![Vec::new(); m];
    for (i, c) in valid.iter().enumerate() {
        by_first[c.assignment.members[0]].push((c.assignment.mask(), i));
    }
    let max_k = m / valid.iter().map(|c| c.assignment.rank()).min().unwrap_or(m.max(1)).max(1);

    // best[(pos, used, k)] = best Σ J choosing exactly k more clusters from clicks >= pos
    type Memo = BTreeMap<(usize, u64, usize), Option<(f64, Vec<usize>)>>;
    fn best(pos: usize, used: u64, k: usize, m: usize, by_first: &[Vec<(u64, usize)>], valid: &[&Candidate], memo: &mut Memo) -> Option<(f64, Vec<usize>)> {
        if k == 0 {
            return Some((0.0, Vec::new()));
        }
        if pos >= m {
            return None;
        }
        let key = (pos, used >> pos, k);
        if let Some(v) = memo.get(&key) {
            return v.clone();
        }
        let mut result = best(pos + 1, used, k, m, by_first, valid, memo);
        if used >> pos & 1 == 0 {
            for &(mask, i) in &by_first[pos] {
                if used & mask != 0 {
                    continue;
                }
                if let Some((v, mut picks)) = best(pos + 1, used | mask, k - 1, m, by_first, valid, memo) {
                    let total = v + valid[i].utility;
                    if result.as_ref().is_none_or(|(b, _)| total > *b) {
                        picks.push(i);
                        result = Some((total, picks));
                    }
                }
            }
        }
        memo.insert(key, result.clone());
        result
    }

    let mut memo = Memo::new();
    let mut winner: Option<(f64, Vec<usize>)> = None;
    for k in 1..=max_k {
        if let Some((sum, picks)) = best(0, 0, k, m, &by_first, &valid, &mut memo) {
            let obj = 1.0 / k as f64 + sum;
            if obj > 0.0 && winner.as_ref().is_none_or(|(b, _)| obj > *b) {
                winner = Some((obj, picks));
            }
        }
    }
    let mut clusters: Vec<Candidate> = winner
        .map(|(_, picks)| picks.into_iter().map(|i| valid[i].clone()).collect())
        .unwrap_or_default();
    clusters.sort_by(|a, b| a.assignment.members.cmp(&b.assignment.members));
    ClusterSolution::build(m, clusters, Vec::new())
}
