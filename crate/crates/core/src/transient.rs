//! Click region-of-interest detection: zero-phase band filtering, Teager-Kaiser
//! energy and non-maximum-suppressed peak picking against a median noise floor.

use serde::{Deserialize, Serialize};

use crate::audio::{AnalysisBuffer, SampledSignal};
use crate::error::{CodaError, Result};
use crate::features::ClickFeatures;

/// Teager-Kaiser energy of a signal. `values[k]` belongs to input sample `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyEnvelope {
    pub values: Vec<f64>,
    pub sample_rate: f64,
}

impl EnergyEnvelope {
    /// Index offset between envelope positions and input sample positions.
    pub const OFFSET: usize = 1;
}

/// A detected transient with its extracted waveform window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClickEvent {
    /// Absolute time of the energy peak in seconds.
    pub peak_time: f64,
    pub sample_rate: f64,
    /// ROI centred on the peak, zero padded where it runs past the buffer.
    pub waveform: Vec<f64>,
    pub snr_db: f64,
    pub features: Option<ClickFeatures>,
}

/// A peak accepted by [`detect_peaks`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Index into the signal the envelope was computed from.
    pub index: usize,
    pub snr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub min_peak_dist_ms: f64,
    pub snr_min_db: f64,
    pub max_peaks: usize,
    pub roi_ms: f64,
    /// Half-width of the noise-floor window around each candidate.
    pub noise_window_ms: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            band_lo_hz: 2000.0,
            band_hi_hz: 24000.0,
            min_peak_dist_ms: 8.0,
            snr_min_db: 10.0,
            max_peaks: 20,
            roi_ms: 30.0,
            noise_window_ms: 100.0,
        }
    }
}

/// One direct-form-I biquad section, `a0` normalised to one.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(fc: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * fc / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(fc: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * fc / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 + c) / 2.0 / a0, -(1.0 + c) / a0, (1.0 + c) / 2.0 / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn run(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let x0 = *v;
            let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            *v = y0;
        }
    }
}

// Section Q values of a 4th-order Butterworth prototype.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_5];

fn band_sections(f_lo: f64, f_hi: f64, fs: f64) -> Vec<Biquad> {
    let mut s: Vec<Biquad> = BUTTER4_Q.iter().map(|&q| Biquad::highpass(f_lo, fs, q)).collect();
    s.extend(BUTTER4_Q.iter().map(|&q| Biquad::lowpass(f_hi, fs, q)));
    s
}

/// Zero-phase band filter (4th-order Butterworth high-pass and low-pass edges,
/// applied forward and backward with odd-reflection padding).
pub fn bandpass(buffer: &AnalysisBuffer<'_>, f_lo: f64, f_hi: f64) -> Result<SampledSignal> {
    let fs = buffer.sample_rate;
    if !(f_lo > 0.0 && f_lo < f_hi) {
        return Err(CodaError::arg(format!("band edges must satisfy 0 < {f_lo} < {f_hi}")));
    }
    if f_hi >= fs / 2.0 {
        return Err(CodaError::arg(format!("upper band edge {f_hi} Hz is not below Nyquist {} Hz", fs / 2.0)));
    }
    let x = buffer.samples;
    if x.is_empty() {
        return Err(CodaError::arg("empty buffer"));
    }
    let n = x.len();
    let pad = if n > 1 {
        (((6.0 * fs / f_lo).ceil() as usize).max(27)).min(n - 1)
    } else {
        0
    };

    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let sections = band_sections(f_lo, f_hi, fs);
    for s in &sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in &sections {
        s.run(&mut ext);
    }
    ext.reverse();

    Ok(SampledSignal {
        samples: ext[pad..pad + n].to_vec(),
        sample_rate: fs,
        channel_id: buffer.channel_id,
        origin_time: buffer.start_time,
    })
}

/// Teager-Kaiser energy `z_n = x_n^2 - x_{n-1} x_{n+1}` over interior samples.
pub fn tkeo_slice(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 3 {
        return Err(CodaError::arg(format!("TKEO needs at least 3 samples, got {}", x.len())));
    }
    Ok(x.windows(3).map(|w| w[1] * w[1] - w[0] * w[2]).collect())
}

pub fn tkeo(x: &SampledSignal) -> Result<EnergyEnvelope> {
    Ok(EnergyEnvelope {
        values: tkeo_slice(&x.samples)?,
        sample_rate: x.sample_rate,
    })
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Local noise floor around envelope index `i`: the median of `z` over
/// `[i - half, i + half]` with `(i - guard, i + guard)` removed.
pub fn noise_floor(z: &[f64], i: usize, half: usize, guard: usize, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    let lo = i.saturating_sub(half);
    let hi = (i + half + 1).min(z.len());
    let g_lo = i.saturating_sub(guard.saturating_sub(1));
    let g_hi = (i + guard).min(z.len());
    scratch.extend_from_slice(&z[lo..g_lo.max(lo)]);
    scratch.extend_from_slice(&z[g_hi.min(hi)..hi]);
    if scratch.is_empty() {
        return 0.0;
    }
    let med = median_in_place(scratch);
    if med > 0.0 {
        return med;
    }
    // envelope dominated by zeros or negative lobes: fall back to mean magnitude
    scratch.iter().map(|v| v.abs()).sum::<f64>() / scratch.len() as f64
}

/// Pick transient peaks on an energy envelope.
///
/// Local maxima are visited strongest first; any maximum closer than `min_dist`
/// to an already visited stronger one is dropped. Survivors must clear
/// `snr_min` dB over the local noise floor; the `max_peaks` strongest are kept.
/// Returned indices refer to the input signal (envelope index + 1), sorted.
pub fn detect_peaks(
    z: &EnergyEnvelope,
    min_dist: f64,
    snr_min: f64,
    max_peaks: usize,
    noise_window: f64,
) -> Result<Vec<Peak>> {
    if !(min_dist > 0.0) {
        return Err(CodaError::arg("minimum peak distance must be positive"));
    }
    let v = &z.values;
    let n = v.len();
    if n < 3 || max_peaks == 0 {
        return Ok(Vec::new());
    }
    let dist = ((min_dist * z.sample_rate).round() as usize).max(1);
    let half = ((noise_window * z.sample_rate).round() as usize).max(dist + 1);

    let mut maxima: Vec<usize> = (1..n - 1)
        .filter(|&i| v[i] > 0.0 && v[i] > v[i - 1] && v[i] >= v[i + 1])
        .collect();
    maxima.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));

    let mut blocked = vec![false; n];
    let mut scratch = Vec::with_capacity(2 * half + 1);
    let mut kept: Vec<Peak> = Vec::new();
    for i in maxima {
        if blocked[i] {
            continue;
        }
        let lo = i.saturating_sub(dist - 1);
        let hi = (i + dist).min(n);
        blocked[lo..hi].iter_mut().for_each(|b| *b = true);

        let floor = noise_floor(v, i, half, dist, &mut scratch);
        let snr = if floor > 0.0 {
            10.0 * (v[i] / floor).log10()
        } else {
            f64::INFINITY
        };
        if snr >= snr_min {
            kept.push(Peak {
                index: i + EnergyEnvelope::OFFSET,
                snr_db: snr,
            });
            if kept.len() == max_peaks {
                break;
            }
        }
    }
    kept.sort_by_key(|p| p.index);
    Ok(kept)
}

/// Cut a `roi_len`-second window centred on each peak of `signal`.
pub fn extract_rois(signal: &SampledSignal, peaks: &[Peak], roi_len: f64) -> Result<Vec<ClickEvent>> {
    if !(roi_len > 0.0) {
        return Err(CodaError::arg("ROI length must be positive"));
    }
    let fs = signal.sample_rate;
    let roi_n = ((roi_len * fs).round() as usize).max(1);
    let x = &signal.samples;
    Ok(peaks
        .iter()
        .map(|p| {
            let start = p.index as isize - (roi_n / 2) as isize;
            let waveform = (0..roi_n as isize)
                .map(|k| {
                    let j = start + k;
                    if j < 0 || j as usize >= x.len() {
                        0.0
                    } else {
                        x[j as usize]
                    }
                })
                .collect();
            ClickEvent {
                peak_time: signal.origin_time + p.index as f64 / fs,
                sample_rate: fs,
                waveform,
                snr_db: p.snr_db,
                features: None,
            }
        })
        .collect())
}

/// Bandpass, TKEO and peak picking for one buffer. Returns the filtered signal
/// (ROI source) and the extracted clicks.
pub fn find_clicks(buffer: &AnalysisBuffer<'_>, cfg: &DetectorConfig) -> Result<(SampledSignal, Vec<ClickEvent>)> {
    let filtered = bandpass(buffer, cfg.band_lo_hz, cfg.band_hi_hz)?;
    if filtered.len() < 3 {
        return Ok((filtered, Vec::new()));
    }
    let env = tkeo(&filtered)?;
    let peaks = detect_peaks(
        &env,
        cfg.min_peak_dist_ms / 1000.0,
        cfg.snr_min_db,
        cfg.max_peaks,
        cfg.noise_window_ms / 1000.0,
    )?;
    let clicks = extract_rois(&filtered, &peaks, cfg.roi_ms / 1000.0)?;
    Ok((filtered, clicks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const FS: f64 = 96_000.0;

    fn tone(freq: f64, secs: f64) -> SampledSignal {
        let n = (secs * FS) as usize;
        SampledSignal::new((0..n).map(|i| (2.0 * PI * freq * i as f64 / FS).sin()).collect(), FS).unwrap()
    }

    fn rms_mid(x: &[f64]) -> f64 {
        let m = &x[x.len() / 4..3 * x.len() / 4];
        (m.iter().map(|v| v * v).sum::<f64>() / m.len() as f64).sqrt()
    }

    #[test]
    fn in_band_tone_passes() {
        let s = tone(10_000.0, 0.2);
        let y = bandpass(&s.as_buffer(), 2000.0, 24000.0).unwrap();
        let db = 20.0 * (rms_mid(&y.samples) / rms_mid(&s.samples)).log10();
        assert!(db.abs() < 1.0, "gain {db} dB");
    }

    #[test]
    fn stop_band_tones_attenuated() {
        for f in [500.0, 1000.0, 36_000.0] {
            let s = tone(f, 0.2);
            let y = bandpass(&s.as_buffer(), 2000.0, 24000.0).unwrap();
            let db = 20.0 * (rms_mid(&y.samples) / rms_mid(&s.samples)).log10();
            assert!(db < -40.0, "{f} Hz only {db} dB");
        }
    }

    #[test]
    fn impulse_response_is_symmetric() {
        let mut x = vec![0.0; 4001];
        x[2000] = 1.0;
        let s = SampledSignal::new(x, FS).unwrap();
        let y = bandpass(&s.as_buffer(), 2000.0, 24000.0).unwrap().samples;
        let peak = (0..y.len()).max_by(|&a, &b| y[a].abs().total_cmp(&y[b].abs())).unwrap();
        assert_eq!(peak, 2000);
        for k in 1..300 {
            assert!((y[2000 - k] - y[2000 + k]).abs() < 1e-9);
        }
    }

    #[test]
    fn band_edge_checks() {
        let s = tone(1000.0, 0.01);
        assert!(bandpass(&s.as_buffer(), 2000.0, 48_000.0).is_err());
        assert!(bandpass(&s.as_buffer(), 3000.0, 2000.0).is_err());
    }

    #[test]
    fn tkeo_examples() {
        assert_eq!(tkeo_slice(&[2.0, 3.0, 4.0]).unwrap(), vec![1.0]);
        assert!(tkeo_slice(&[1.5; 10]).unwrap().iter().all(|&v| v == 0.0));
        let w = 0.3f64;
        let x: Vec<f64> = (0..64).map(|n| (w * n as f64).cos()).collect();
        for z in tkeo_slice(&x).unwrap() {
            assert!((z - w.sin().powi(2)).abs() < 1e-12);
        }
        assert!(tkeo_slice(&[1.0, 2.0]).is_err());
    }

    fn envelope_with(impulses: &[(usize, f64)], n: usize) -> EnergyEnvelope {
        let mut v = vec![1e-4; n];
        for &(i, a) in impulses {
            v[i] = a;
        }
        EnergyEnvelope { values: v, sample_rate: FS }
    }

    #[test]
    fn peaks_respect_spacing() {
        let ten_ms = (0.010 * FS) as usize;
        let z = envelope_with(&[(20_000, 1.0), (20_000 + ten_ms, 1.0)], 60_000);
        let p = detect_peaks(&z, 0.008, 10.0, 20, 0.1).unwrap();
        assert_eq!(p.len(), 2);

        let five_ms = (0.005 * FS) as usize;
        let z = envelope_with(&[(20_000, 1.0), (20_000 + five_ms, 0.5)], 60_000);
        let p = detect_peaks(&z, 0.008, 10.0, 20, 0.1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].index, 20_001);
    }

    #[test]
    fn keeps_strongest_when_capped() {
        let gap = (0.05 * FS) as usize;
        let imp: Vec<(usize, f64)> = (0..25).map(|k| (5000 + k * gap, 1.0 + k as f64 * 0.1)).collect();
        let z = envelope_with(&imp, 5000 + 26 * gap);
        let p = detect_peaks(&z, 0.008, 10.0, 20, 0.1).unwrap();
        assert_eq!(p.len(), 20);
        let expect: Vec<usize> = (5..25).map(|k| 5000 + k * gap + 1).collect();
        assert_eq!(p.iter().map(|p| p.index).collect::<Vec<_>>(), expect);
    }

    #[test]
    fn peaks_invariant_to_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..40_000).map(|_| rng.random::<f64>().powi(4)).collect();
        let a = detect_peaks(&EnergyEnvelope { values: v.clone(), sample_rate: FS }, 0.008, 3.0, 20, 0.1).unwrap();
        let scaled = v.iter().map(|x| x * 37.5).collect();
        let b = detect_peaks(&EnergyEnvelope { values: scaled, sample_rate: FS }, 0.008, 3.0, 20, 0.1).unwrap();
        assert_eq!(
            a.iter().map(|p| p.index).collect::<Vec<_>>(),
            b.iter().map(|p| p.index).collect::<Vec<_>>()
        );
    }

    #[test]
    fn roi_windows() {
        let fs = 10_000.0;
        let s = SampledSignal::new((0..1000).map(|i| i as f64).collect(), fs).unwrap();
        let mid = extract_rois(&s, &[Peak { index: 500, snr_db: 20.0 }], 0.010).unwrap();
        assert_eq!(mid[0].waveform.len(), 100);
        assert_eq!(mid[0].waveform[50], 500.0);
        assert_eq!(mid[0].peak_time, 0.05);

        let edge = extract_rois(&s, &[Peak { index: 20, snr_db: 20.0 }], 0.010).unwrap();
        let w = &edge[0].waveform;
        assert!(w[..30].iter().all(|&v| v == 0.0));
        assert_eq!(w[30], 0.0); // sample 0
        assert_eq!(w[31], 1.0);
        assert!(extract_rois(&s, &[], 0.01).unwrap().is_empty());
    }
}
