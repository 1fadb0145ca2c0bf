//! Train a rhythm model, render a random scene and annotate it.
//!
//! `cargo run --release --example detect_synthetic_scene -- [seed]`

use coda::annotator::{detect_codas, PipelineConfig};
use coda::eval::{evaluate, DEFAULT_MATCH_TOL};
use coda::synth::{random_scene, synth_scene, template_database, SceneOptions};
use coda::temporal::{train_model, TrainConfig};

fn main() -> coda::error::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);

    let db = template_database(100, 0.01, seed)?;
    let model = train_model(&db, &TrainConfig::default())?;

    let script = random_scene(seed, &SceneOptions::default());
    let (signal, truth) = synth_scene(&script)?;
    println!("scene: {:.1} s at {} Hz, {} events", signal.duration(), signal.sample_rate, truth.events.len());
    for ev in &truth.events {
        println!("  truth {:?} {:<10} {} clicks from {:.3} s", ev.kind, ev.type_label.as_deref().unwrap_or("-"), ev.click_times.len(), ev.click_times[0]);
    }

    let detections = detect_codas(&signal, &model, &PipelineConfig::default())?;
    for d in &detections {
        println!(
            "  coda  {:<10} {} clicks from {:.3} s  utility {:.2}  ipi {}",
            d.type_label,
            d.n_clicks(),
            d.start_time,
            d.utility,
            d.mean_ipi_ms.map_or("-".into(), |v| format!("{v:.2} ms")),
        );
    }

    let summary = evaluate(&detections, &truth, DEFAULT_MATCH_TOL)?;
    println!("Pd {:.2}, {} false alarms", summary.pd(), summary.false_positives);
    Ok(())
}
