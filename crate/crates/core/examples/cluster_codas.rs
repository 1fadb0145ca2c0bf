//! Constrained clustering on two overlapping codas from different whales,
//! greedy against the exhaustive solver.

use coda::annotator::{prepare_buffer, PipelineConfig};
use coda::clustering::{solve_exact, solve_greedy};
use coda::synth::{overlap_scene, synth_scene, template_database, SceneOptions};
use coda::temporal::{train_model, TrainConfig};

fn main() -> coda::error::Result<()> {
    let model = train_model(&template_database(100, 0.01, 2)?, &TrainConfig::default())?;
    let (signal, truth) = synth_scene(&overlap_scene(11, &SceneOptions::default(), 0.01))?;
    for ev in truth.codas() {
        let times: Vec<String> = ev.click_times.iter().map(|t| format!("{t:.3}")).collect();
        println!("truth {} {:<8} [{}]", ev.source_id, ev.type_label.as_deref().unwrap_or("-"), times.join(" "));
    }

    let cfg = PipelineConfig::default();
    let (clicks, affinity) = prepare_buffer(&signal.as_buffer(), &cfg)?;
    let Some(affinity) = affinity else {
        println!("too few clicks to cluster");
        return Ok(());
    };
    println!("{} clicks detected", clicks.len());

    let greedy = solve_greedy(&clicks, &affinity, &model, &cfg.cluster)?;
    for c in &greedy.clusters {
        let times: Vec<String> = c.assignment.members.iter().map(|&i| format!("{:.3}", clicks[i].peak_time)).collect();
        println!("greedy J={:.3} L_s={:.3} L_t={:.3} [{}]", c.utility, c.structural, c.temporal, times.join(" "));
    }
    println!("greedy objective {:.3}, unassigned {:?}", greedy.objective(), greedy.unassigned);

    if clicks.len() <= coda::clustering::EXACT_LIMIT {
        let exact = solve_exact(&clicks, &affinity, &model, &cfg.cluster)?;
        println!("exact objective {:.3} with {} clusters", exact.objective(), exact.clusters.len());
    }
    Ok(())
}
