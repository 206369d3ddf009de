//! GIST and mutual-information similarity between the frames of one lap.
//!
//! `cargo run --release --example similarity`

use placefit::dataio::{generate_synthetic, SynthConfig};
use placefit::experiment::lap_similarity;
use placefit::similarity::{SimilarityConfig, SimilarityMetric};

fn main() -> placefit::Result<()> {
    let synth = SynthConfig {
        frames_per_place: 5,
        ..SynthConfig::default()
    };
    let dataset = generate_synthetic(&synth)?;
    let config = SimilarityConfig::default();
    let ids: Vec<u32> = dataset.lap_indices(0).iter().map(|&i| dataset.frames[i].frame_id).collect();

    for metric in [SimilarityMetric::GistL2, SimilarityMetric::MutualInformation] {
        let sim = lap_similarity(&dataset, 0, metric, &config)?;
        let mut same_place = 0;
        for i in 0..sim.len() {
            let nearest = (0..sim.len())
                .filter(|&j| j != i)
                .min_by(|&a, &b| sim.get(i, a).total_cmp(&sim.get(i, b)))
                .expect("more than one frame");
            same_place += usize::from(synth.place_of_frame(ids[i]) == synth.place_of_frame(ids[nearest]));
        }
        println!(
            "{metric:?}: {same_place}/{} frames have their nearest neighbour at the same place",
            sim.len()
        );
        println!("  row 0: {:?}", sim.row(0).iter().map(|d| format!("{d:.3}")).collect::<Vec<_>>());
    }
    Ok(())
}
