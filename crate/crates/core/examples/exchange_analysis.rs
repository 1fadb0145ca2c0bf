//! Two whales trading codas: amplitude classes, signal/response pairs and
//! the timing statistics, written as CSV tables to a temporary directory.

use coda::annotator::{detect_codas, PipelineConfig};
use coda::exchange::{analyze_exchanges, export_distributions, ExchangeConfig};
use coda::synth::{coda_templates, synth_scene, template_database, ClickShape, EventKind, SceneEvent, SceneScript};
use coda::temporal::{train_model, TrainConfig};

fn coda(source: &str, start: f64, label: &str, ici: &[f64], ipi: f64, level_db: f64) -> SceneEvent {
    SceneEvent {
        kind: EventKind::Coda,
        source_id: source.into(),
        start_time: start,
        ici: ici.to_vec(),
        train: None,
        click: ClickShape::coda(ipi),
        level_db,
        type_label: Some(label.into()),
    }
}

fn main() -> coda::error::Result<()> {
    let templates = coda_templates();
    let template = |name: &str| templates.iter().find(|(l, _)| *l == name).map(|(_, t)| t.clone()).unwrap();
    let (a, b) = (template("1+1+3"), template("5R1"));

    // whale-1 is tagged (loud), whale-2 answers each coda after a short break
    let mut script = SceneScript::new(14.0, 96_000.0, 5, 0.01);
    let mut t = 0.5;
    for brk in [0.4, 0.55, 0.3] {
        script.events.push(coda("whale-1", t, "1+1+3", &a, 1.3, 28.0));
        let end = t + a.iter().sum::<f64>();
        script.events.push(coda("whale-2", end + brk, "5R1", &b, 1.8, 16.0));
        t = end + brk + b.iter().sum::<f64>() + 1.0;
    }
    let (signal, _) = synth_scene(&script)?;

    let model = train_model(&template_database(60, 0.01, 3)?, &TrainConfig::default())?;
    // A busy exchange: shorter buffers keep each one under the 20-peak budget.
    let cfg = PipelineConfig {
        buffer_sec: 4.0,
        ..PipelineConfig::default()
    };
    let detections = detect_codas(&signal, &model, &cfg)?;
    let stats = analyze_exchanges(&detections, &ExchangeConfig::default())?;

    for (d, class) in detections.iter().zip(&stats.classes) {
        println!("{:.3} s  {:<8} class {class}  {} clicks {:.3?}", d.start_time, d.type_label, d.n_clicks(), d.ici);
    }
    for p in &stats.pairs {
        println!("pair {} -> {}  ΔCB {:.3} s", p.signal, p.response, p.delta_cb);
    }
    for (class, gaps) in &stats.delta_ci {
        println!("class {class} ΔCI {gaps:.3?}");
    }

    let out = std::env::temp_dir().join("coda-exchange-example");
    for path in export_distributions(&stats, &detections, &out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
