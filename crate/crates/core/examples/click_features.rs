//! Features of a coda click versus an echolocation click: IPI from the
//! band-limited cepstrum, multipulse count from the phase slope function,
//! resonant frequency and intensity.

use coda::features::{extract_features, FeatureConfig};
use coda::synth::{click_lead, synth_click_shape, ClickShape};
use coda::transient::ClickEvent;

fn describe(name: &str, shape: &ClickShape, cfg: &FeatureConfig) -> coda::error::Result<()> {
    let fs = 96_000.0;
    // A 30 ms ROI with the first pulse at its centre, as the detector cuts it.
    let click = synth_click_shape(shape, fs)?;
    let roi = 2880;
    let offset = roi / 2 - click_lead(shape, fs);
    let mut waveform = vec![0.0; roi];
    for (k, v) in click.iter().enumerate().take(roi - offset) {
        waveform[offset + k] = 0.1 * v;
    }
    let click = ClickEvent {
        peak_time: 0.0,
        sample_rate: fs,
        waveform,
        snr_db: 30.0,
        features: None,
    };
    let f = extract_features(&click, cfg)?;
    println!(
        "{name:<13} ipi {:>8}  pulses {}  resonance {:>6.0} Hz  rms {:.4}",
        f.ipi_ms.map_or("-".into(), |v| format!("{v:.2} ms")),
        f.multipulse_count,
        f.resonant_freq_hz,
        f.intensity_rms
    );
    Ok(())
}

fn main() -> coda::error::Result<()> {
    let cfg = FeatureConfig::default();
    describe("coda", &ClickShape::coda(1.6), &cfg)?;
    describe("echolocation", &ClickShape::echolocation(1.6), &cfg)?;
    Ok(())
}
