//! Channel features of one synthetic frame and the pyramid built over it.
//!
//! `cargo run --release --example channels`

use placefit::channels::{build_pyramid, compute_channels, N_CHANNELS};
use placefit::dataio::{generate_synthetic, SynthConfig};
use placefit::experiment::ExperimentConfig;

const NAMES: [&str; N_CHANNELS] = ["L", "U", "V", "|grad|", "O0", "O1", "O2", "O3", "O4", "O5"];

fn main() -> placefit::Result<()> {
    let dataset = generate_synthetic(&SynthConfig {
        frames_per_place: 2,
        ..SynthConfig::default()
    })?;
    let image = &dataset.frame_images[0];
    let pyramid_config = ExperimentConfig::synthetic(0).hnm.pyramid;

    let stack = compute_channels(image, pyramid_config.shrink)?;
    println!(
        "{}x{} image -> {}x{} cells at shrink {}",
        image.width(),
        image.height(),
        stack.width_cells,
        stack.height_cells,
        pyramid_config.shrink
    );
    for (c, name) in NAMES.iter().enumerate() {
        let plane = stack.channel(c);
        let mean = plane.iter().sum::<f64>() / plane.len() as f64;
        let max = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("  {name:>6}  mean {mean:8.4}  max {max:8.4}");
    }

    let pyramid = build_pyramid(image, &pyramid_config)?;
    println!("pyramid: {} levels", pyramid.levels.len());
    for (k, level) in pyramid.levels.iter().enumerate() {
        println!(
            "  level {k:2}  scale {:.3}  {}x{} px",
            level.scale, level.width_px, level.height_px
        );
    }
    Ok(())
}
