//! Generates a small synthetic route, writes it to disk and reads it back.
//!
//! `cargo run --release --example synthetic_dataset [OUT_DIR]`

use placefit::dataio::{generate_synthetic, load_dataset, save_dataset, SynthConfig};

fn main() -> placefit::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("placefit-synth"));
    let config = SynthConfig {
        frames_per_place: 8,
        ..SynthConfig::default()
    };
    let dataset = generate_synthetic(&config)?;
    save_dataset(&dataset, &out)?;
    let back = load_dataset(&out)?;

    println!("wrote {} frames to {}", dataset.frames.len(), out.display());
    for lap in back.laps() {
        let idx = back.lap_indices(lap);
        let boxes: usize = idx.iter().map(|&i| back.ground_truth(back.frames[i].frame_id).len()).sum();
        println!("lap {lap}: {} frames, {boxes} pedestrians", idx.len());
    }
    println!(
        "{} positive crops, {} negative images",
        back.positives.len(),
        back.negative_images.len()
    );
    println!("manifest checksum {}", back.manifest_checksum());
    assert_eq!(back.manifest_checksum(), dataset.manifest_checksum());
    Ok(())
}
