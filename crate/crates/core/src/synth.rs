//! Synthetic acoustic scenes with ground truth.
//!
//! A click is a train of Gaussian-windowed cosine pulses with geometrically
//! decaying amplitude. A scene places coda, echolocation-train and broadband
//! transient events over white (and optionally band-limited) noise. Event
//! levels are energy ratios: `level_db = 10 log10(E_click / (σ² N))` where `E_click` is
//! the click energy, `σ` the white-noise RMS and `N` the number of samples in
//! 1 ms.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{AnalysisBuffer, SampledSignal};
use crate::error::{CodaError, Result};
use crate::temporal::CodaDatabase;
use crate::transient::bandpass;

pub const SCENE_SCHEMA: &str = "coda-scene/1";
pub const TRUTH_SCHEMA: &str = "coda-truth/1";

/// Closest allowed spacing of two clicks from one source.
pub const MIN_SOURCE_CLICK_GAP: f64 = 0.008;

/// Noise reference used for levels when the scene has no white noise.
const SILENT_REFERENCE_RMS: f64 = 0.01;

/// Pulse-train parameters of one click.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickShape {
    pub ipi_ms: f64,
    pub n_pulses: usize,
    pub decay: f64,
    pub resonance_hz: f64,
    /// Pulse duration; the Gaussian window has σ = width / 4.
    #[serde(default = "default_width")]
    pub pulse_width_ms: f64,
}

fn default_width() -> f64 {
    0.5
}

impl ClickShape {
    pub fn coda(ipi_ms: f64) -> Self {
        Self {
            ipi_ms,
            n_pulses: 5,
            decay: 0.7,
            resonance_hz: 10_000.0,
            pulse_width_ms: 0.5,
        }
    }

    pub fn echolocation(ipi_ms: f64) -> Self {
        Self {
            ipi_ms,
            n_pulses: 2,
            decay: 0.3,
            resonance_hz: 15_000.0,
            pulse_width_ms: 0.5,
        }
    }
}

/// Lead-in before the first pulse centre in [`synth_click_shape`] output.
pub fn click_lead(shape: &ClickShape, sample_rate: f64) -> usize {
    (2.0 * shape.pulse_width_ms * 1e-3 * sample_rate).ceil() as usize
}

/// Peak-normalised multipulse click. The first pulse is centred at
/// [`click_lead`] samples.
pub fn synth_click_shape(shape: &ClickShape, sample_rate: f64) -> Result<Vec<f64>> {
    if shape.n_pulses == 0 {
        return Err(CodaError::arg("a click needs at least one pulse"));
    }
    if !(shape.decay > 0.0 && shape.decay <= 1.0) {
        return Err(CodaError::arg(format!("pulse decay {} outside (0, 1]", shape.decay)));
    }
    if !(shape.resonance_hz > 0.0) || shape.resonance_hz >= sample_rate / 2.0 {
        return Err(CodaError::arg(format!(
            "resonance {} Hz must lie in (0, Nyquist = {} Hz)",
            shape.resonance_hz,
            sample_rate / 2.0
        )));
    }
    if !(shape.ipi_ms > 0.0) && shape.n_pulses > 1 {
        return Err(CodaError::arg("inter-pulse interval must be positive"));
    }
    if !(shape.pulse_width_ms > 0.0) {
        return Err(CodaError::arg("pulse width must be positive"));
    }
    let sigma = shape.pulse_width_ms * 1e-3 / 4.0;
    let lead = click_lead(shape, sample_rate);
    let ipi = shape.ipi_ms * 1e-3 * sample_rate;
    let len = lead * 2 + (ipi * (shape.n_pulses - 1) as f64).ceil() as usize + 1;
    let mut y = vec![0.0; len];
    for p in 0..shape.n_pulses {
        let centre = lead as f64 + p as f64 * ipi;
        let amp = shape.decay.powi(p as i32);
        for (n, v) in y.iter_mut().enumerate() {
            let t = (n as f64 - centre) / sample_rate;
            *v += amp * (-(t * t) / (2.0 * sigma * sigma)).exp() * (2.0 * PI * shape.resonance_hz * t).cos();
        }
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    y.iter_mut().for_each(|v| *v /= peak);
    Ok(y)
}

pub fn synth_click(ipi_ms: f64, n_pulses: usize, decay: f64, resonance_hz: f64, sample_rate: f64) -> Result<Vec<f64>> {
    synth_click_shape(
        &ClickShape {
            ipi_ms,
            n_pulses,
            decay,
            resonance_hz,
            pulse_width_ms: 0.5,
        },
        sample_rate,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Coda,
    Echolocation,
    TransientNoise,
}

/// Random-ICI click train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub count: usize,
    pub ici_min: f64,
    pub ici_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEvent {
    pub kind: EventKind,
    pub source_id: String,
    pub start_time: f64,
    /// Fixed inter-click intervals (codas, scripted trains).
    #[serde(default)]
    pub ici: Vec<f64>,
    /// Random intervals drawn from the scene seed (echolocation).
    #[serde(default)]
    pub train: Option<TrainSpec>,
    pub click: ClickShape,
    pub level_db: f64,
    #[serde(default)]
    pub type_label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColoredNoise {
    pub rms: f64,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub white_rms: f64,
    #[serde(default)]
    pub colored: Option<ColoredNoise>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub schema: String,
    pub duration: f64,
    pub sample_rate: f64,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub events: Vec<SceneEvent>,
    /// Per-source FIR channel applied to every click of that source.
    #[serde(default)]
    pub channels: BTreeMap<String, Vec<f64>>,
}

impl SceneScript {
    pub fn new(duration: f64, sample_rate: f64, seed: u64, white_rms: f64) -> Self {
        Self {
            schema: SCENE_SCHEMA.to_string(),
            duration,
            sample_rate,
            seed,
            noise: NoiseSpec {
                white_rms,
                colored: None,
            },
            events: Vec::new(),
            channels: BTreeMap::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CodaError::io(path, e))?;
        let s: Self = serde_json::from_str(&text).map_err(|e| CodaError::Script(format!("{}: {e}", path.display())))?;
        if s.schema != SCENE_SCHEMA {
            return Err(CodaError::Script(format!("unsupported scene schema {:?}", s.schema)));
        }
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| CodaError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub kind: EventKind,
    pub source_id: String,
    pub type_label: Option<String>,
    /// Centre of each click's first pulse.
    pub click_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema: String,
    pub duration: f64,
    pub events: Vec<TruthEvent>,
}

impl GroundTruth {
    pub fn codas(&self) -> impl Iterator<Item = &TruthEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::Coda)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CodaError::io(path, e))?;
        let t: Self = serde_json::from_str(&text).map_err(|e| CodaError::Format(format!("{}: {e}", path.display())))?;
        if t.schema != TRUTH_SCHEMA {
            return Err(CodaError::Format(format!("unsupported truth schema {:?}", t.schema)));
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| CodaError::io(path, e))
    }
}

fn event_times(ev: &SceneEvent, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let mut times = vec![ev.start_time];
    let mut t = ev.start_time;
    for &d in &ev.ici {
        if !(d > 0.0) {
            return Err(CodaError::Script(format!("source {}: non-positive ICI {d}", ev.source_id)));
        }
        t += d;
        times.push(t);
    }
    if let Some(train) = ev.train {
        if !(train.ici_min > 0.0 && train.ici_min <= train.ici_max) {
            return Err(CodaError::Script(format!("source {}: bad train ICI range", ev.source_id)));
        }
        for _ in 1..train.count {
            t += if train.ici_max > train.ici_min {
                rng.random_range(train.ici_min..train.ici_max)
            } else {
                train.ici_min
            };
            times.push(t);
        }
    }
    Ok(times)
}

fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if h.is_empty() {
        return x.to_vec();
    }
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (i, &a) in x.iter().enumerate() {
        for (j, &b) in h.iter().enumerate() {
            y[i + j] += a * b;
        }
    }
    y
}

/// Render a scene script. Deterministic for a given script.
pub fn synth_scene(script: &SceneScript) -> Result<(SampledSignal, GroundTruth)> {
    let fs = script.sample_rate;
    if !(script.duration > 0.0) || !(fs > 0.0) {
        return Err(CodaError::Script("duration and sample rate must be positive".into()));
    }
    let n = (script.duration * fs).round() as usize;
    let mut x = vec![0.0; n];
    let mut timing_rng = ChaCha8Rng::seed_from_u64(script.seed);
    timing_rng.set_stream(1);

    let reference = if script.noise.white_rms > 0.0 {
        script.noise.white_rms
    } else {
        SILENT_REFERENCE_RMS
    };
    let ms_samples = 1e-3 * fs;

    let mut truth = Vec::new();
    let mut by_source: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (k, ev) in script.events.iter().enumerate() {
        let ctx = |m: String| CodaError::Script(format!("event {k} ({}): {m}", ev.source_id));
        if !ev.level_db.is_finite() {
            return Err(ctx("level is not finite".into()));
        }
        let times = event_times(ev, &mut timing_rng)?;
        if times.iter().any(|&t| t < 0.0 || t >= script.duration) {
            return Err(ctx("clicks fall outside the scene".into()));
        }
        let mut wave = synth_click_shape(&ev.click, fs).map_err(|e| ctx(e.to_string()))?;
        if let Some(h) = script.channels.get(&ev.source_id) {
            wave = convolve(&wave, h);
        }
        let energy: f64 = wave.iter().map(|v| v * v).sum();
        let target = reference * reference * ms_samples * 10f64.powf(ev.level_db / 10.0);
        let gain = (target / energy).sqrt();
        let lead = click_lead(&ev.click, fs) as f64;
        for &t in &times {
            let offset = (t * fs - lead).round() as isize;
            for (j, &v) in wave.iter().enumerate() {
                let idx = offset + j as isize;
                if idx >= 0 && (idx as usize) < n {
                    x[idx as usize] += gain * v;
                }
            }
        }
        if ev.kind == EventKind::Coda {
            by_source.entry(&ev.source_id).or_default().extend(&times);
        }
        truth.push(TruthEvent {
            kind: ev.kind,
            source_id: ev.source_id.clone(),
            type_label: ev.type_label.clone(),
            click_times: times.iter().map(|&t| (t * fs - lead).round() / fs + lead / fs).collect(),
        });
    }
    for (source, times) in by_source.iter_mut() {
        times.sort_by(f64::total_cmp);
        if let Some(w) = times.windows(2).find(|w| w[1] - w[0] < MIN_SOURCE_CLICK_GAP) {
            return Err(CodaError::Script(format!(
                "source {source}: coda clicks at {:.4} s and {:.4} s are closer than 8 ms",
                w[0], w[1]
            )));
        }
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(script.seed);
    if script.noise.white_rms > 0.0 {
        let normal = Normal::new(0.0, script.noise.white_rms).map_err(|e| CodaError::Script(e.to_string()))?;
        x.iter_mut().for_each(|v| *v += normal.sample(&mut noise_rng));
    }
    if let Some(c) = script.noise.colored {
        let raw: Vec<f64> = (0..n).map(|_| noise_rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let buf = AnalysisBuffer {
            samples: &raw,
            sample_rate: fs,
            channel_id: 0,
            start_time: 0.0,
        };
        let shaped = bandpass(&buf, c.band_lo_hz, c.band_hi_hz).map_err(|e| CodaError::Script(e.to_string()))?;
        let rms = (shaped.samples.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if rms > 0.0 {
            x.iter_mut().zip(&shaped.samples).for_each(|(v, s)| *v += c.rms * s / rms);
        }
    }

    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        return Err(CodaError::Script(format!("scene peak {peak:.3} exceeds full scale")));
    }
    let signal = SampledSignal::new(x, fs)?;
    Ok((
        signal,
        GroundTruth {
            schema: TRUTH_SCHEMA.to_string(),
            duration: script.duration,
            events: truth,
        },
    ))
}

/// Reference rhythms (seconds) for the five 5-click types and two 6-click types.
pub fn coda_templates() -> Vec<(&'static str, Vec<f64>)> {
    vec![
        ("1+1+3", vec![0.35, 0.40, 0.11, 0.10]),
        ("2+3", vec![0.12, 0.30, 0.12, 0.12]),
        ("5R1", vec![0.14; 4]),
        ("5R2", vec![0.22; 4]),
        ("5R3", vec![0.30; 4]),
        ("6i", vec![0.09, 0.12, 0.15, 0.18, 0.21]),
        ("6R", vec![0.16; 5]),
    ]
}

/// Sub-variants making up the multi-modal "1+1+3" type.
pub fn one_one_three_variants() -> Vec<Vec<f64>> {
    vec![vec![0.35, 0.40, 0.11, 0.10], vec![0.50, 0.28, 0.11, 0.10], vec![0.26, 0.30, 0.20, 0.18]]
}

/// Labelled database drawn around [`coda_templates`], with "1+1+3" split
/// evenly over its variants and Gaussian jitter of `jitter` seconds per ICI.
pub fn template_database(per_type: usize, jitter: f64, seed: u64) -> Result<CodaDatabase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, jitter).map_err(|e| CodaError::arg(e.to_string()))?;
    let variants = one_one_three_variants();
    let mut db = CodaDatabase::new();
    for (label, template) in coda_templates() {
        for i in 0..per_type {
            let base = if label == "1+1+3" { &variants[i % variants.len()] } else { &template };
            let ici: Vec<f64> = base.iter().map(|v| (v + noise.sample(&mut rng)).max(0.02)).collect();
            db.insert(ici, label)?;
        }
    }
    Ok(db)
}

/// Jittered copy of a template ICI vector.
pub fn jitter_ici(template: &[f64], jitter: f64, rng: &mut impl Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, jitter.max(0.0)).expect("finite jitter");
    template.iter().map(|v| (v + noise.sample(rng)).max(0.02)).collect()
}

/// Ranges for [`random_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOptions {
    pub duration: f64,
    pub sample_rate: f64,
    pub white_rms: f64,
    pub codas: (usize, usize),
    pub coda_level_db: (f64, f64),
    pub ipi_ms: (f64, f64),
    pub jitter: f64,
    /// Silence between consecutive codas.
    pub gap: (f64, f64),
    pub echolocation_probability: f64,
    pub echolocation_level_db: (f64, f64),
    pub echolocation_ici: (f64, f64),
    /// Cap on true clicks per scene, codas first. The detector keeps at most
    /// 20 peaks per buffer, so denser scenes would lose clicks by design.
    pub max_clicks: usize,
    /// Least spacing between clicks of different animals. The detector keeps
    /// one peak per 8 ms, so closer clicks would merge into one.
    pub source_separation: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            duration: 10.0,
            sample_rate: 96_000.0,
            white_rms: 0.01,
            codas: (1, 3),
            coda_level_db: (10.0, 30.0),
            ipi_ms: (1.2, 1.9),
            jitter: 0.01,
            gap: (0.8, 2.0),
            echolocation_probability: 0.5,
            echolocation_level_db: (10.0, 20.0),
            echolocation_ici: (0.5, 1.0),
            max_clicks: 20,
            source_separation: 0.010,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn random_template(rng: &mut ChaCha8Rng) -> (&'static str, Vec<f64>) {
    let five: Vec<_> = coda_templates().into_iter().filter(|(_, t)| t.len() == 4).collect();
    let (label, template) = five[rng.random_range(0..five.len())].clone();
    if label == "1+1+3" {
        let variants = one_one_three_variants();
        return (label, variants[rng.random_range(0..variants.len())].clone());
    }
    (label, template)
}

/// Codas of the five 5-click types from one whale, in sequence, with an
/// optional echolocation train from a second animal.
pub fn random_scene(seed: u64, opts: &SceneOptions) -> SceneScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0da);
    let mut script = SceneScript::new(opts.duration, opts.sample_rate, seed, opts.white_rms);
    let n = rng.random_range(opts.codas.0..=opts.codas.1.max(opts.codas.0));
    let ipi = uniform(&mut rng, opts.ipi_ms);
    let mut t = uniform(&mut rng, (0.3, 0.8));
    for _ in 0..n {
        let (label, template) = random_template(&mut rng);
        let ici = jitter_ici(&template, opts.jitter, &mut rng);
        let span: f64 = ici.iter().sum();
        if t + span >= opts.duration - 0.2 {
            break;
        }
        script.events.push(SceneEvent {
            kind: EventKind::Coda,
            source_id: "whale-1".into(),
            start_time: t,
            ici,
            train: None,
            click: ClickShape::coda(ipi),
            level_db: uniform(&mut rng, opts.coda_level_db),
            type_label: Some(label.to_string()),
        });
        t += span + uniform(&mut rng, opts.gap);
    }
    let coda_times: Vec<f64> = script
        .events
        .iter()
        .flat_map(|e| {
            e.ici.iter().scan(e.start_time, |t, d| {
                *t += d;
                Some(*t)
            })
            .chain(std::iter::once(e.start_time))
        })
        .collect();
    let room = opts.max_clicks.saturating_sub(coda_times.len());
    if rng.random::<f64>() < opts.echolocation_probability && room > 0 {
        let clear = |t: f64| coda_times.iter().all(|c| (t - c).abs() >= opts.source_separation);
        let mut start = uniform(&mut rng, (0.05, 0.8));
        while !clear(start) {
            start += opts.source_separation;
        }
        let mut ici = Vec::new();
        let mut t = start;
        while ici.len() + 1 < room {
            let mut d = uniform(&mut rng, opts.echolocation_ici);
            for _ in 0..100 {
                if clear(t + d) {
                    break;
                }
                d = uniform(&mut rng, opts.echolocation_ici);
            }
            if t + d >= opts.duration - 0.1 || !clear(t + d) {
                break;
            }
            t += d;
            ici.push(d);
        }
        script.events.push(SceneEvent {
            kind: EventKind::Echolocation,
            source_id: "whale-2".into(),
            start_time: start,
            ici,
            train: None,
            click: ClickShape::echolocation(uniform(&mut rng, opts.ipi_ms)),
            level_db: uniform(&mut rng, opts.echolocation_level_db),
            type_label: None,
        });
    }
    script
}

/// Echolocation trains only: every detection in such a scene is a false alarm.
pub fn echolocation_scene(seed: u64, opts: &SceneOptions, trains: usize) -> SceneScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xec40);
    let mut script = SceneScript::new(opts.duration, opts.sample_rate, seed, opts.white_rms);
    for k in 0..trains {
        let start = uniform(&mut rng, (0.05, 0.8));
        let count = ((opts.duration - start - 0.1) / opts.echolocation_ici.1).floor().max(1.0) as usize;
        script.events.push(SceneEvent {
            kind: EventKind::Echolocation,
            source_id: format!("whale-{}", k + 1),
            start_time: start,
            ici: Vec::new(),
            train: Some(TrainSpec {
                count,
                ici_min: opts.echolocation_ici.0,
                ici_max: opts.echolocation_ici.1,
            }),
            click: ClickShape::echolocation(uniform(&mut rng, opts.ipi_ms)),
            level_db: uniform(&mut rng, opts.echolocation_level_db),
            type_label: None,
        });
    }
    script
}

/// Two whales with distinct IPIs and channels producing time-overlapping
/// codas. Click times of the two codas stay at least `min_separation` apart.
pub fn overlap_scene(seed: u64, opts: &SceneOptions, min_separation: f64) -> SceneScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0f3a);
    let mut script = SceneScript::new(opts.duration.min(4.0), opts.sample_rate, seed, opts.white_rms);
    let (a_label, a_tpl) = random_template(&mut rng);
    let a_ici = jitter_ici(&a_tpl, opts.jitter, &mut rng);
    let a_start = uniform(&mut rng, (0.5, 0.9));
    let times = |start: f64, ici: &[f64]| -> Vec<f64> {
        std::iter::once(start)
            .chain(ici.iter().scan(start, |t, d| {
                *t += d;
                Some(*t)
            }))
            .collect()
    };
    let a_times = times(a_start, &a_ici);
    let (b_label, b_ici, b_start) = loop {
        let (label, tpl) = random_template(&mut rng);
        let ici = jitter_ici(&tpl, opts.jitter, &mut rng);
        let start = a_start + uniform(&mut rng, (0.02, 0.35));
        let b = times(start, &ici);
        if b.iter().all(|t| a_times.iter().all(|u| (t - u).abs() >= min_separation)) {
            break (label, ici, start);
        }
    };
    for (source, label, ici, start, ipi, level) in [
        ("whale-1", a_label, a_ici, a_start, opts.ipi_ms.0, uniform(&mut rng, (20.0, 30.0))),
        ("whale-2", b_label, b_ici, b_start, opts.ipi_ms.1, uniform(&mut rng, (15.0, 25.0))),
    ] {
        script.events.push(SceneEvent {
            kind: EventKind::Coda,
            source_id: source.into(),
            start_time: start,
            ici,
            train: None,
            click: ClickShape::coda(ipi),
            level_db: level,
            type_label: Some(label.to_string()),
        });
    }
    script.channels.insert("whale-1".into(), vec![1.0, 0.35, -0.2]);
    script.channels.insert("whale-2".into(), vec![1.0, -0.6, 0.3, 0.15]);
    script
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{count_multipulses, PsfConfig};

    const FS: f64 = 96_000.0;

    #[test]
    fn single_pulse_click() {
        let y = synth_click(2.0, 1, 0.7, 10_000.0, FS).unwrap();
        assert_eq!(y.iter().fold(0.0f64, |m, v| m.max(v.abs())), 1.0);
        let mut roi = vec![0.0; 2880];
        roi[1440..1440 + y.len()].copy_from_slice(&y);
        assert_eq!(count_multipulses(&roi, FS, &PsfConfig::default()).unwrap(), 1);
    }

    #[test]
    fn click_argument_errors() {
        assert!(synth_click(2.0, 4, 0.7, 48_000.0, FS).is_err());
        assert!(synth_click(2.0, 0, 0.7, 10_000.0, FS).is_err());
        assert!(synth_click(2.0, 3, 1.5, 10_000.0, FS).is_err());
    }

    fn one_coda_script(seed: u64) -> SceneScript {
        let mut s = SceneScript::new(3.0, FS, seed, 0.001);
        s.events.push(SceneEvent {
            kind: EventKind::Coda,
            source_id: "A".into(),
            start_time: 0.5,
            ici: vec![0.14; 4],
            train: None,
            click: ClickShape::coda(1.8),
            level_db: 20.0,
            type_label: Some("5R1".into()),
        });
        s
    }

    #[test]
    fn deterministic_scene_and_truth() {
        let (a, ta) = synth_scene(&one_coda_script(3)).unwrap();
        let (b, tb) = synth_scene(&one_coda_script(3)).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(ta, tb);
        let c = ta.codas().next().unwrap();
        assert_eq!(c.click_times.len(), 5);
        assert!((c.click_times[4] - 1.06).abs() < 1e-4);
        let (c_sig, _) = synth_scene(&one_coda_script(4)).unwrap();
        assert_ne!(a.samples, c_sig.samples);
    }

    #[test]
    fn noise_only_scene() {
        let (s, t) = synth_scene(&SceneScript::new(1.0, FS, 0, 0.01)).unwrap();
        assert!(t.events.is_empty());
        let rms = (s.samples.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
        assert!((rms - 0.01).abs() < 2e-4);
    }

    #[test]
    fn level_sets_click_energy() {
        let mut script = one_coda_script(0);
        script.noise.white_rms = 0.0;
        script.events[0].ici.clear();
        script.events[0].level_db = 30.0;
        let (s, _) = synth_scene(&script).unwrap();
        let e: f64 = s.samples.iter().map(|v| v * v).sum();
        let want = SILENT_REFERENCE_RMS.powi(2) * 96.0 * 1000.0;
        assert!((e / want - 1.0).abs() < 1e-9);
    }

    #[test]
    fn energy_adds_over_silence() {
        let mut script = one_coda_script(0);
        script.noise.white_rms = 0.0;
        let single = {
            let mut s = script.clone();
            s.events[0].ici.clear();
            synth_scene(&s).unwrap().0
        };
        let full = synth_scene(&script).unwrap().0;
        let e = |x: &SampledSignal| x.samples.iter().map(|v| v * v).sum::<f64>();
        assert!((e(&full) / (5.0 * e(&single)) - 1.0).abs() < 0.01);
    }

    #[test]
    fn close_clicks_from_one_source_rejected() {
        let mut script = one_coda_script(0);
        let mut second = script.events[0].clone();
        second.start_time = 0.505;
        script.events.push(second);
        assert!(matches!(synth_scene(&script), Err(CodaError::Script(_))));
    }

    #[test]
    fn clipping_rejected() {
        let mut script = one_coda_script(0);
        script.events[0].level_db = 90.0;
        assert!(matches!(synth_scene(&script), Err(CodaError::Script(_))));
    }

    #[test]
    fn fir_channel_and_json_round_trip() {
        let mut script = one_coda_script(1);
        script.channels.insert("A".into(), vec![1.0, 0.0, -0.5]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        script.save(&p).unwrap();
        let back = SceneScript::load(&p).unwrap();
        assert_eq!(back, script);
        assert_eq!(synth_scene(&back).unwrap().0.samples, synth_scene(&script).unwrap().0.samples);
    }

    #[test]
    fn template_database_shape() {
        let db = template_database(30, 0.01, 0).unwrap();
        assert_eq!(db.group(4).len(), 5 * 30);
        assert_eq!(db.group(5).len(), 2 * 30);
    }
}
