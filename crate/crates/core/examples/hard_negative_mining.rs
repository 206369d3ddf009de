//! Trains the generic detector on a small synthetic route with hard
//! negative mining over the negative images, then runs it on one frame.
//!
//! `cargo run --release --example hard_negative_mining`

use placefit::dataio::{generate_synthetic, SynthConfig};
use placefit::detector::detect;
use placefit::experiment::{train_generic_from, training_samples, ExperimentConfig};

fn main() -> placefit::Result<()> {
    let dataset = generate_synthetic(&SynthConfig {
        frames_per_place: 4,
        ..SynthConfig::default()
    })?;
    let config = ExperimentConfig::synthetic(0);
    let (positives, seeds) = training_samples(&dataset, &config)?;
    println!("{} positive windows, {} seed negatives", positives.len(), seeds.len());

    let (model, report) = train_generic_from(&dataset, &positives, &seeds, &config)?;
    println!("rounds run        {}", report.iterations_run);
    println!("mined per round   {:?}", report.mined_per_iteration);
    println!("added per round   {:?}", report.new_negatives_per_iteration);
    println!("converged         {}", report.converged);
    println!("final set         {} pos / {} neg", report.n_positives, report.n_negatives);
    println!("training errors   {}", report.training_errors);

    let (i, frame) = dataset
        .frames
        .iter()
        .enumerate()
        .find(|(_, f)| !dataset.ground_truth(f.frame_id).is_empty())
        .expect("some frame shows a pedestrian");
    let dets = detect(&dataset.frame_images[i], &model, &config.detect, &config.hnm.pyramid)?;
    println!("frame {}: ground truth {:?}", frame.frame_id, dataset.ground_truth(frame.frame_id));
    for d in dets.iter().take(5) {
        println!(
            "  detection ({:.1}, {:.1}, {:.1}x{:.1}) score {:.3}",
            d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.score
        );
    }
    Ok(())
}
