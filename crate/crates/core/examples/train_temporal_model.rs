//! Fit the per-width GGD mixtures from a synthetic coda database and score a
//! few ICI vectors against them.

use coda::annotator::classify_coda_type;
use coda::synth::{coda_templates, template_database};
use coda::temporal::{train_model, TrainConfig};

fn main() -> coda::error::Result<()> {
    let db = template_database(200, 0.01, 1)?;
    println!("database: {} codas", db.len());

    let model = train_model(&db, &TrainConfig::default())?;
    for (w, wm) in &model.per_width {
        let parts: Vec<String> = wm.types.iter().map(|(g, m)| format!("{g}:{}", m.components.len())).collect();
        println!("W={w}: Q={} components per type {parts:?}", wm.q);
    }

    for (label, template) in coda_templates() {
        let score = model.temporal_likelihood(&template)?;
        let class = classify_coda_type(&template, &model, 1e-6)?;
        println!("{label:<8} L_t {:>10.3e}  classified as {}", score.value, class.label);
    }

    // a rhythm no type uses
    let odd = [0.05, 0.5, 0.05, 0.5];
    println!("odd      L_t {:>10.3e}", model.temporal_likelihood(&odd)?.value);
    Ok(())
}
