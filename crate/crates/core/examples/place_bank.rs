//! Builds a temporal model bank on lap 0, retrieves a model for every frame
//! of lap 1 by pose and checks the bank survives a save/load round trip.
//!
//! `cargo run --release --example place_bank [SWATHE]`

use placefit::dataio::{bank_checksum, generate_synthetic, load_bank, save_bank, SynthConfig};
use placefit::detector::detect;
use placefit::experiment::{build_lap_bank, ExperimentConfig, Prepared, SwatheSize};
use placefit::placebank::SwatheMethod;

fn main() -> placefit::Result<()> {
    let swathe: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let dataset = generate_synthetic(&SynthConfig {
        frames_per_place: 6,
        ..SynthConfig::default()
    })?;
    let config = ExperimentConfig::synthetic(0);
    let prepared = Prepared::new(&dataset, &config)?;
    let bank = build_lap_bank(&prepared, 0, SwatheMethod::Temporal, SwatheSize::Frames(swathe), &config.hnm, None)?;
    println!("bank of {} models, swathe {swathe}", bank.len());
    for e in bank.entries.iter().take(3) {
        println!(
            "  frame {:3}  swathe {:?}  errors {}  rounds {}",
            e.frame_id, e.swathe, e.report.training_errors, e.report.iterations_run
        );
    }

    let mut found = 0;
    for i in dataset.lap_indices(1) {
        let frame = &dataset.frames[i];
        let (model, map_frame) = bank.retrieve_model(frame.pose.x, frame.pose.y)?;
        let dets = detect(&dataset.frame_images[i], model, &config.detect, &config.hnm.pyramid)?;
        found += dets.iter().filter(|d| d.score > 0.0).count();
        if i % 6 == 0 {
            println!("  query frame {:3} -> map frame {map_frame}", frame.frame_id);
        }
    }
    println!("{found} positive-score detections on lap 1");

    let path = std::env::temp_dir().join("placefit-example.pfbank");
    save_bank(&bank, &path)?;
    let back = load_bank(&path)?;
    assert_eq!(bank_checksum(&back), bank_checksum(&bank));
    println!("saved to {} (checksum {})", path.display(), bank_checksum(&bank));
    Ok(())
}
