//! TKEO click detection on a short clip with three clicks in noise.

use coda::audio::frame_buffers;
use coda::synth::{ClickShape, EventKind, SceneEvent, SceneScript, synth_scene};
use coda::transient::{find_clicks, DetectorConfig};

fn main() -> coda::error::Result<()> {
    let mut script = SceneScript::new(1.0, 96_000.0, 3, 0.01);
    script.events.push(SceneEvent {
        kind: EventKind::Coda,
        source_id: "whale-1".into(),
        start_time: 0.2,
        ici: vec![0.25, 0.3],
        train: None,
        click: ClickShape::coda(1.5),
        level_db: 20.0,
        type_label: None,
    });
    let (signal, truth) = synth_scene(&script)?;
    println!("true click times: {:?}", truth.events[0].click_times);

    // The default 10 dB floor lets the strongest noise peaks through up to
    // `max_peaks`; clustering sorts them out later. A stricter floor keeps
    // this demo to the clicks themselves.
    let cfg = DetectorConfig {
        snr_min_db: 20.0,
        ..DetectorConfig::default()
    };
    for buffer in frame_buffers(&signal, 1.0, 0.0)? {
        let (_, clicks) = find_clicks(&buffer, &cfg)?;
        for c in &clicks {
            println!("click at {:.4} s, SNR {:.1} dB, ROI {} samples", c.peak_time, c.snr_db, c.waveform.len());
        }
    }
    Ok(())
}
