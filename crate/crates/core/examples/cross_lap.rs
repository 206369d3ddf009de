//! Cross-lap experiment on a synthetic route: banks are built on each lap
//! and tested on the other, against a generic detector.
//!
//! `cargo run --release --example cross_lap [FRAMES_PER_PLACE]`
//!
//! The default of 20 frames per place finishes in well under a minute; 100
//! reproduces the full-size route.

use placefit::dataio::{generate_synthetic, SynthConfig};
use placefit::experiment::{cross_lap, ExperimentConfig};

fn main() -> placefit::Result<()> {
    let frames_per_place = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let dataset = generate_synthetic(&SynthConfig {
        frames_per_place,
        ..SynthConfig::default()
    })?;
    let config = ExperimentConfig::synthetic(0);
    let (result, _banks) = cross_lap(&dataset, &config)?;

    println!(
        "{} test frames, {} pedestrians",
        result.n_test_frames, result.n_ground_truth
    );
    println!("{:<15} {:>7} {:>7} {:>7} {:>8} {:>10}", "run", "AP", "LAMR", "F1", "models", "max err");
    for run in result.runs.iter().chain(result.generic.iter()) {
        println!(
            "{:<15} {:>7.3} {:>7.3} {:>7.3} {:>8} {:>10}",
            run.label,
            run.summary.ap,
            run.summary.lamr,
            run.summary.max_f1,
            run.training.models_trained,
            run.training.max_training_errors
        );
    }
    Ok(())
}
