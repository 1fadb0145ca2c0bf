//! Per-click features and pairwise similarities.
//!
//! Each click contributes an inter-pulse interval (cepstral peak within its
//! resonance band), an RMS
//! intensity, a multipulse count (positive zero crossings of the phase slope
//! function of its TKEO envelope) and a resonant frequency (peak of an averaged,
//! zero-padded Hann spectrum). Pairs are compared by waveform correlation, IPI
//! and intensity, and combined into a symmetric affinity matrix.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{CodaError, Result};
use crate::audio::AnalysisBuffer;
use crate::transient::{bandpass, tkeo_slice, ClickEvent};

/// Similarity used for the IPI term when either click has no multipulse structure.
pub const NEUTRAL_IPI_SIMILARITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickFeatures {
    /// `None` when no cepstral peak clears the noise floor.
    pub ipi_ms: Option<f64>,
    pub intensity_rms: f64,
    pub multipulse_count: usize,
    pub resonant_freq_hz: f64,
}

/// Weights of the shape, IPI and intensity terms. Must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityWeights {
    pub corr: f64,
    pub ipi: f64,
    pub intensity: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self {
            corr: 0.4,
            ipi: 0.3,
            intensity: 0.3,
        }
    }
}

impl SimilarityWeights {
    pub fn new(corr: f64, ipi: f64, intensity: f64) -> Result<Self> {
        let w = Self { corr, ipi, intensity };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.corr, self.ipi, self.intensity];
        if all.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(CodaError::arg(format!("similarity weights must lie in [0, 1]: {all:?}")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CodaError::arg(format!("similarity weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Phase-slope analysis settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfConfig {
    pub frame_ms: f64,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    /// Crossing hysteresis as a fraction of half the frame length.
    pub hysteresis: f64,
    /// Frames must carry this multiple of the lower-quartile frame energy...
    pub gate_noise_factor: f64,
    /// ...and this fraction of the strongest frame.
    pub gate_relative: f64,
    /// Width of the band centred on the click's resonant frequency that the
    /// waveform is filtered to before counting; zero disables the filter.
    pub prefilter_bw_hz: f64,
    /// STFT frame used to locate that resonance.
    pub spectrum_frame_ms: f64,
}

impl Default for PsfConfig {
    fn default() -> Self {
        Self {
            frame_ms: 1.0,
            band_lo_hz: 2000.0,
            band_hi_hz: 24000.0,
            hysteresis: 0.2,
            gate_noise_factor: 4.0,
            gate_relative: 0.01,
            prefilter_bw_hz: 6000.0,
            spectrum_frame_ms: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub weights: SimilarityWeights,
    /// Lag search for the shape term; zero disables alignment.
    pub lag_ms: f64,
    pub ipi_band_ms: (f64, f64),
    /// Cepstral peak must exceed this multiple of the band median.
    pub ipi_peak_ratio: f64,
    /// Width of the spectral band, centred on the resonant frequency, that the
    /// IPI cepstrum looks at.
    pub ipi_bandwidth_hz: f64,
    pub psf: PsfConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            weights: SimilarityWeights::default(),
            lag_ms: 1.0,
            ipi_band_ms: (1.0, 8.0),
            ipi_peak_ratio: 3.0,
            ipi_bandwidth_hz: 6000.0,
            psf: PsfConfig::default(),
        }
    }
}

fn energy(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum()
}

/// Normalised cross-correlation of two waveforms, maximised over integer lags in
/// `[-max_lag, max_lag]`.
pub fn shape_similarity(y_i: &[f64], y_j: &[f64], max_lag: usize) -> Result<f64> {
    let (ei, ej) = (energy(y_i), energy(y_j));
    if ei <= 0.0 || ej <= 0.0 {
        return Err(CodaError::arg("shape similarity of a zero-energy waveform"));
    }
    let norm = (ei * ej).sqrt();
    let mut best = f64::NEG_INFINITY;
    for lag in -(max_lag as isize)..=(max_lag as isize) {
        let mut acc = 0.0;
        for (n, &a) in y_i.iter().enumerate() {
            let m = n as isize + lag;
            if m >= 0 && (m as usize) < y_j.len() {
                acc += a * y_j[m as usize];
            }
        }
        best = best.max(acc);
    }
    Ok((best / norm).clamp(-1.0, 1.0))
}

/// `1 - |a - b| / max(a, b)` for positive `a`, `b`.
pub fn ratio_similarity(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(CodaError::arg(format!("similarity inputs must be positive, got ({a}, {b})")));
    }
    Ok(1.0 - (a - b).abs() / a.max(b))
}

pub fn ipi_similarity(ipi_i: f64, ipi_j: f64) -> Result<f64> {
    ratio_similarity(ipi_i, ipi_j)
}

pub fn intensity_similarity(i_i: f64, i_j: f64) -> Result<f64> {
    ratio_similarity(i_i, i_j)
}

pub fn combined_similarity(s_shape: f64, s_ipi: f64, s_int: f64, w: &SimilarityWeights) -> Result<f64> {
    w.validate()?;
    Ok(w.corr * s_shape + w.ipi * s_ipi + w.intensity * s_int)
}

fn fft_forward(planner: &mut FftPlanner<f64>, x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    planner.plan_fft_forward(n).process(&mut buf);
    buf
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

/// Parabolic refinement of a discrete maximum at `k`.
fn parabolic_offset(ym: f64, y0: f64, yp: f64) -> f64 {
    let den = ym - 2.0 * y0 + yp;
    if den.abs() < 1e-300 {
        0.0
    } else {
        (0.5 * (ym - yp) / den).clamp(-0.5, 0.5)
    }
}

/// Quadratic least-squares fit removed from `v`, returned as residuals.
fn remove_quadratic(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    if n < 3 {
        return vec![0.0; n];
    }
    let xm = (n as f64 - 1.0) / 2.0;
    let x: Vec<f64> = (0..n).map(|i| (i as f64 - xm) / xm.max(1.0)).collect();
    let design = DMatrix::from_fn(n, 3, |i, j| x[i].powi(j as i32));
    let rhs = nalgebra::DVector::from_column_slice(v);
    let coef = (design.transpose() * &design)
        .lu()
        .solve(&(design.transpose() * rhs))
        .unwrap_or_else(|| nalgebra::DVector::zeros(3));
    (0..n).map(|i| v[i] - coef[0] - coef[1] * x[i] - coef[2] * x[i] * x[i]).collect()
}

/// Smallest cepstral peak, as a log-power ripple amplitude in nepers, that
/// counts as multipulse structure.
const MIN_RIPPLE: f64 = 0.05;

/// Cepstrum of the log power spectrum restricted to `freq_band` (Hz), at the
/// quefrencies `k / sample_rate` for `k` in `lags`. The log spectrum is
/// floored 60 dB below its in-band peak, stripped of its quadratic trend (the
/// log of a Gaussian pulse spectrum) and Hann tapered. Values are scaled so
/// that a log-power ripple `a cos(2π f τ)` reads `a` at quefrency `τ`.
pub fn band_cepstrum(y: &[f64], sample_rate: f64, freq_band: (f64, f64), lags: std::ops::RangeInclusive<usize>) -> Vec<f64> {
    let n = (2 * y.len()).next_power_of_two().max(2);
    let df = sample_rate / n as f64;
    let k0 = ((freq_band.0 / df).ceil() as usize).max(1);
    let k1 = ((freq_band.1 / df).floor() as usize).min(n / 2 - 1);
    if k1 < k0 + 2 {
        return vec![0.0; lags.count()];
    }
    let spec = fft_forward(&mut FftPlanner::new(), y, n);
    let power: Vec<f64> = spec[k0..=k1].iter().map(|c| c.norm_sqr()).collect();
    let floor = (power.iter().copied().fold(0.0, f64::max) * 1e-6).max(f64::MIN_POSITIVE);
    let logp: Vec<f64> = power.iter().map(|p| (p + floor).ln()).collect();
    let m = logp.len();
    let taper: Vec<f64> = remove_quadratic(&logp)
        .iter()
        .enumerate()
        .map(|(i, v)| v * (0.5 - 0.5 * (2.0 * PI * i as f64 / (m - 1) as f64).cos()))
        .collect();
    let scale = 2.0 / taper_sum(m);
    lags.map(|k| {
        // bin frequency times quefrency, in cycles
        let step = k as f64 * df / sample_rate;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in taper.iter().enumerate() {
            let ph = 2.0 * PI * step * (k0 + i) as f64;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        scale * (re * re + im * im).sqrt()
    })
    .collect()
}

fn taper_sum(m: usize) -> f64 {
    (0..m).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (m - 1) as f64).cos()).sum()
}

/// Inter-pulse interval in milliseconds from the dominant [`band_cepstrum`]
/// peak over quefrencies `band_ms`. Restricting the spectrum to the click's
/// own band keeps broadband noise out of the estimate. `Ok(None)` when the
/// peak does not exceed `peak_ratio` times the median over the band, or is a
/// ripple too shallow to be a pulse echo.
pub fn estimate_ipi(
    waveform: &[f64],
    sample_rate: f64,
    band_ms: (f64, f64),
    peak_ratio: f64,
    freq_band: (f64, f64),
) -> Result<Option<f64>> {
    let (lo_ms, hi_ms) = band_ms;
    if !(lo_ms > 0.0 && lo_ms < hi_ms) {
        return Err(CodaError::arg(format!("invalid IPI band {band_ms:?}")));
    }
    if !(freq_band.0 >= 0.0 && freq_band.0 < freq_band.1) {
        return Err(CodaError::arg(format!("invalid spectral band {freq_band:?}")));
    }
    let k_lo = ((lo_ms * 1e-3 * sample_rate).round() as usize).max(1);
    let k_hi = (hi_ms * 1e-3 * sample_rate).round() as usize;
    if waveform.len() < 2 * k_hi {
        return Err(CodaError::arg(format!(
            "waveform of {} samples is shorter than twice the maximum IPI ({} samples)",
            waveform.len(),
            2 * k_hi
        )));
    }
    if energy(waveform) <= 0.0 {
        return Ok(None);
    }
    let c = band_cepstrum(waveform, sample_rate, freq_band, k_lo..=k_hi);
    let (arg, &max) = c
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty band");
    let floor = median(c.clone());
    if !(max > MIN_RIPPLE && max > peak_ratio * floor) {
        return Ok(None);
    }
    let off = if arg > 0 && arg + 1 < c.len() {
        parabolic_offset(c[arg - 1], c[arg], c[arg + 1])
    } else {
        0.0
    };
    Ok(Some(((k_lo + arg) as f64 + off) / sample_rate * 1e3))
}

/// Phase slope function over a click's TKEO envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    /// One value per frame position; `NaN` where the frame was not evaluated.
    pub values: Vec<f64>,
    /// Summed TKEO energy of each frame.
    pub frame_energy: Vec<f64>,
    /// Waveform sample index of the centre of frame 0.
    pub first_centre: usize,
    pub frame_len: usize,
    /// Number of band frequencies averaged.
    pub bins: usize,
}

struct PsfKernel {
    frame: usize,
    cos: Vec<Vec<f64>>,
    sin: Vec<Vec<f64>>,
}

impl PsfKernel {
    fn new(sample_rate: f64, cfg: &PsfConfig) -> Result<Self> {
        let frame = (cfg.frame_ms * 1e-3 * sample_rate).round() as usize;
        if frame < 2 {
            return Err(CodaError::arg(format!("PSF frame of {frame} samples is shorter than 2")));
        }
        let spacing = sample_rate / frame as f64;
        let bins: Vec<usize> = (0..=frame / 2)
            .filter(|&b| {
                let f = b as f64 * spacing;
                f >= cfg.band_lo_hz && f <= cfg.band_hi_hz
            })
            .collect();
        if bins.is_empty() {
            return Err(CodaError::arg(format!(
                "PSF band {}-{} Hz holds no frequency of a {frame}-sample frame",
                cfg.band_lo_hz, cfg.band_hi_hz
            )));
        }
        let table = |f: fn(f64) -> f64| -> Vec<Vec<f64>> {
            bins.iter()
                .map(|&b| (0..frame).map(|n| f(2.0 * PI * (b * n) as f64 / frame as f64)).collect())
                .collect()
        };
        Ok(Self {
            frame,
            cos: table(f64::cos),
            sin: table(f64::sin),
        })
    }

    /// PSF of one frame: minus the band-averaged group delay about the frame centre.
    fn eval(&self, z: &[f64]) -> f64 {
        let centre = (self.frame as f64 - 1.0) / 2.0;
        let (mut num, mut den) = (0.0, 0.0);
        for (cs, sn) in self.cos.iter().zip(&self.sin) {
            let (mut xr, mut xi, mut yr, mut yi) = (0.0, 0.0, 0.0, 0.0);
            for n in 0..self.frame {
                let v = z[n];
                let w = (n as f64 - centre) * v;
                xr += v * cs[n];
                xi -= v * sn[n];
                yr += w * cs[n];
                yi -= w * sn[n];
            }
            num += xr * yr + xi * yi;
            den += xr * xr + xi * xi;
        }
        if den > 0.0 {
            -num / den
        } else {
            0.0
        }
    }
}

fn frame_energies(z: &[f64], frame: usize) -> Vec<f64> {
    if z.len() < frame {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(z.len() - frame + 1);
    let mut s: f64 = z[..frame].iter().sum();
    out.push(s);
    for k in frame..z.len() {
        s += z[k] - z[k - frame];
        out.push(s);
    }
    out
}

fn psf_masked(waveform: &[f64], sample_rate: f64, cfg: &PsfConfig, gate: Option<&dyn Fn(&[f64]) -> Vec<bool>>) -> Result<Psf> {
    let kernel = PsfKernel::new(sample_rate, cfg)?;
    let frame = kernel.frame;
    if waveform.len() < frame + 2 {
        return Err(CodaError::arg("waveform shorter than one PSF frame"));
    }
    let z = tkeo_slice(waveform)?;
    let energy = frame_energies(&z, frame);
    let mask = gate.map(|g| g(&energy));
    let values = (0..energy.len())
        .map(|s| match &mask {
            Some(m) if !m[s] => f64::NAN,
            _ => kernel.eval(&z[s..s + frame]),
        })
        .collect();
    Ok(Psf {
        values,
        frame_energy: energy,
        first_centre: 1 + (frame - 1) / 2,
        frame_len: frame,
        bins: kernel.cos.len(),
    })
}

/// Phase slope function of a click waveform: frames of `cfg.frame_ms` slide one
/// sample at a time over the TKEO envelope.
pub fn psf(waveform: &[f64], sample_rate: f64, cfg: &PsfConfig) -> Result<Psf> {
    psf_masked(waveform, sample_rate, cfg, None)
}

fn energy_gate(cfg: PsfConfig) -> impl Fn(&[f64]) -> Vec<bool> {
    move |energy: &[f64]| {
        let max = energy.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return vec![false; energy.len()];
        }
        let mut sorted = energy.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = sorted[sorted.len() / 4].max(0.0);
        let gate = (cfg.gate_noise_factor * q1).max(cfg.gate_relative * max);
        energy.iter().map(|&e| e > 0.0 && e >= gate).collect()
    }
}

/// Count positive zero crossings of a PSF, skipping unevaluated frames. A
/// crossing counts once the trace has fallen to `-threshold` and then risen to
/// `+threshold`.
pub fn count_positive_crossings(values: &[f64], threshold: f64) -> usize {
    let h = threshold.max(0.0);
    let mut count = 0;
    // true once the trace has been at or below -h since the last crossing
    let mut armed = false;
    for &v in values {
        if !v.is_finite() {
            armed = false;
            continue;
        }
        if v <= -h {
            armed = true;
        } else if v >= h && armed {
            count += 1;
            armed = false;
        }
    }
    count
}

/// Narrow the waveform to `cfg.prefilter_bw_hz` around its resonant frequency.
fn resonance_band(waveform: &[f64], sample_rate: f64, fr: f64, cfg: &PsfConfig) -> Result<Option<Vec<f64>>> {
    if cfg.prefilter_bw_hz <= 0.0 {
        return Ok(None);
    }
    let nyquist = sample_rate / 2.0;
    let lo = (fr - cfg.prefilter_bw_hz / 2.0).max(0.005 * nyquist);
    let hi = (fr + cfg.prefilter_bw_hz / 2.0).min(0.95 * nyquist);
    if lo >= hi {
        return Ok(None);
    }
    let buffer = AnalysisBuffer {
        samples: waveform,
        sample_rate,
        channel_id: 0,
        start_time: 0.0,
    };
    Ok(Some(bandpass(&buffer, lo, hi)?.samples))
}

/// Number of pulses in a click: positive PSF zero crossings over frames whose
/// energy clears the gate, after narrowing the click to its resonance band.
pub fn count_multipulses(waveform: &[f64], sample_rate: f64, cfg: &PsfConfig) -> Result<usize> {
    if energy(waveform) <= 0.0 {
        return Ok(0);
    }
    let fr = resonant_frequency(waveform, sample_rate, cfg.spectrum_frame_ms)?;
    count_multipulses_at(waveform, sample_rate, fr, cfg)
}

fn count_multipulses_at(waveform: &[f64], sample_rate: f64, fr: f64, cfg: &PsfConfig) -> Result<usize> {
    let narrowed = resonance_band(waveform, sample_rate, fr, cfg)?;
    let input = narrowed.as_deref().unwrap_or(waveform);
    if energy(input) <= 0.0 {
        return Ok(0);
    }
    let gate = energy_gate(*cfg);
    let p = psf_masked(input, sample_rate, cfg, Some(&gate))?;
    Ok(count_positive_crossings(&p.values, cfg.hysteresis * p.frame_len as f64 / 2.0))
}

/// Frequency of the maximum of the frame-averaged, 8x zero-padded Hann power
/// spectrum.
pub fn resonant_frequency(waveform: &[f64], sample_rate: f64, frame_ms: f64) -> Result<f64> {
    if energy(waveform) <= 0.0 {
        return Err(CodaError::arg("resonant frequency of a zero-energy waveform"));
    }
    let frame = ((frame_ms * 1e-3 * sample_rate).round() as usize).clamp(4, waveform.len().max(4));
    let nfft = (8 * frame).next_power_of_two();
    let hop = (frame / 2).max(1);
    let window: Vec<f64> = (0..frame)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (frame - 1) as f64).cos())
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let mut power = vec![0.0; nfft / 2 + 1];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut start = 0;
    loop {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for n in 0..frame {
            let v = waveform.get(start + n).copied().unwrap_or(0.0);
            buf[n] = Complex64::new(v * window[n], 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
        if start + frame >= waveform.len() {
            break;
        }
        start += hop;
    }
    let k = (1..power.len() - 1)
        .max_by(|&a, &b| power[a].total_cmp(&power[b]).then(b.cmp(&a)))
        .unwrap_or(1);
    let lp = |v: f64| (v.max(f64::MIN_POSITIVE)).ln();
    let off = parabolic_offset(lp(power[k - 1]), lp(power[k]), lp(power[k + 1]));
    Ok((k as f64 + off) * sample_rate / nfft as f64)
}

fn rms(y: &[f64]) -> f64 {
    (energy(y) / y.len().max(1) as f64).sqrt()
}

fn ipi_spectral_band(fr: f64, sample_rate: f64, cfg: &FeatureConfig) -> (f64, f64) {
    let half = cfg.ipi_bandwidth_hz / 2.0;
    ((fr - half).max(0.0), (fr + half).min(sample_rate / 2.0))
}

/// Compute every feature of one click.
pub fn extract_features(click: &ClickEvent, cfg: &FeatureConfig) -> Result<ClickFeatures> {
    let fs = click.sample_rate;
    let y = &click.waveform;
    let intensity_rms = rms(y);
    if intensity_rms <= 0.0 {
        return Err(CodaError::arg(format!("click at {:.4} s has zero energy", click.peak_time)));
    }
    let resonant_freq_hz = resonant_frequency(y, fs, cfg.psf.spectrum_frame_ms)?;
    Ok(ClickFeatures {
        ipi_ms: estimate_ipi(y, fs, cfg.ipi_band_ms, cfg.ipi_peak_ratio, ipi_spectral_band(resonant_freq_hz, fs, cfg))?,
        intensity_rms,
        multipulse_count: count_multipulses_at(y, fs, resonant_freq_hz, &cfg.psf)?,
        resonant_freq_hz,
    })
}

/// Fill in missing features in place (parallel over clicks).
pub fn annotate_features(clicks: &mut [ClickEvent], cfg: &FeatureConfig) -> Result<()> {
    clicks
        .par_iter_mut()
        .filter(|c| c.features.is_none())
        .try_for_each(|c| {
            c.features = Some(extract_features(c, cfg)?);
            Ok(())
        })
}

/// Symmetric click-similarity matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub entries: DMatrix<f64>,
    pub weights: SimilarityWeights,
}

impl AffinityMatrix {
    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn from_entries(entries: DMatrix<f64>, weights: SimilarityWeights) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(CodaError::arg("affinity matrix must be square"));
        }
        Ok(Self { entries, weights })
    }
}

/// Lag-searched normalised cross-correlation of many waveforms via FFT.
struct ShapeCorrelator {
    spectra: Vec<Vec<Complex64>>,
    norms: Vec<f64>,
    n: usize,
    inverse: Arc<dyn Fft<f64>>,
}

impl ShapeCorrelator {
    fn new(waves: &[&[f64]]) -> Self {
        let len = waves.iter().map(|w| w.len()).max().unwrap_or(1);
        let n = (2 * len).next_power_of_two();
        let mut planner = FftPlanner::new();
        let spectra = waves.iter().map(|w| fft_forward(&mut planner, w, n)).collect();
        let norms = waves.iter().map(|w| energy(w).sqrt()).collect();
        Self {
            spectra,
            norms,
            n,
            inverse: planner.plan_fft_inverse(n),
        }
    }

    fn similarity(&self, i: usize, j: usize, max_lag: usize) -> f64 {
        let mut buf: Vec<Complex64> = self.spectra[i]
            .iter()
            .zip(&self.spectra[j])
            .map(|(a, b)| a.conj() * b)
            .collect();
        self.inverse.process(&mut buf);
        let lag = max_lag.min(self.n / 2 - 1);
        let best = (0..=lag)
            .map(|k| buf[k].re)
            .chain((1..=lag).map(|k| buf[self.n - k].re))
            .fold(f64::NEG_INFINITY, f64::max);
        (best / self.n as f64 / (self.norms[i] * self.norms[j])).clamp(-1.0, 1.0)
    }
}

/// Build the affinity matrix of a set of clicks, extracting missing features.
pub fn affinity_matrix(clicks: &[ClickEvent], cfg: &FeatureConfig) -> Result<AffinityMatrix> {
    if clicks.len() < 2 {
        return Err(CodaError::arg(format!("affinity needs at least 2 clicks, got {}", clicks.len())));
    }
    cfg.weights.validate()?;
    let feats: Vec<ClickFeatures> = clicks
        .par_iter()
        .map(|c| match c.features {
            Some(f) => Ok(f),
            None => extract_features(c, cfg),
        })
        .collect::<Result<_>>()?;
    let fs = clicks[0].sample_rate;
    let max_lag = (cfg.lag_ms * 1e-3 * fs).round() as usize;
    let waves: Vec<&[f64]> = clicks.iter().map(|c| c.waveform.as_slice()).collect();
    if let Some(c) = clicks.iter().find(|c| energy(&c.waveform) <= 0.0) {
        return Err(CodaError::arg(format!("click at {:.4} s has zero energy", c.peak_time)));
    }
    let corr = ShapeCorrelator::new(&waves);

    let m = clicks.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let s_shape = corr.similarity(i, j, max_lag);
            let s_ipi = match (feats[i].ipi_ms, feats[j].ipi_ms) {
                (Some(a), Some(b)) => ipi_similarity(a, b)?,
                _ => NEUTRAL_IPI_SIMILARITY,
            };
            let s_int = intensity_similarity(feats[i].intensity_rms, feats[j].intensity_rms)?;
            combined_similarity(s_shape, s_ipi, s_int, &cfg.weights)
        })
        .collect::<Result<_>>()?;

    let mut entries = DMatrix::zeros(m, m);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        entries[(i, j)] = v;
        entries[(j, i)] = v;
    }
    Ok(AffinityMatrix {
        entries,
        weights: cfg.weights,
    })
}
