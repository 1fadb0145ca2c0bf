//! Pd against false alarms per minute over a handful of random scenes, swept
//! over the detection threshold.

use coda::annotator::{detect_codas, PipelineConfig};
use coda::config::EvalConfig;
use coda::eval::{pool_roc, roc_eval, DEFAULT_MATCH_TOL};
use coda::synth::{echolocation_scene, random_scene, synth_scene, template_database, SceneOptions};
use coda::temporal::{train_model, TrainConfig};

fn main() -> coda::error::Result<()> {
    let model = train_model(&template_database(100, 0.01, 4)?, &TrainConfig::default())?;
    let opts = SceneOptions::default();
    let thresholds = EvalConfig::default().thresholds()?;

    // Keep every candidate so the sweep can raise the threshold afterwards.
    let mut cfg = PipelineConfig::default();
    cfg.cluster.rho_d = thresholds[0];

    let mut per_scene = Vec::new();
    for seed in 0..6 {
        let script = if seed % 3 == 2 { echolocation_scene(seed, &opts, 2) } else { random_scene(seed, &opts) };
        let (signal, truth) = synth_scene(&script)?;
        let detections = detect_codas(&signal, &model, &cfg)?;
        let n_codas = truth.codas().count();
        per_scene.push((roc_eval(&detections, &truth, DEFAULT_MATCH_TOL, &thresholds)?, n_codas, truth.duration / 60.0));
    }

    println!("rho_d    Pd   FAR/min");
    for p in pool_roc(&per_scene).iter().step_by(5) {
        println!("{:5.2}  {:5.2}  {:7.2}", p.rho_d, p.pd, p.far_per_min);
    }
    Ok(())
}
