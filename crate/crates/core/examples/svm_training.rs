//! Trains the linear SVM on two overlapping Gaussian clouds and reports the
//! solver trace.
//!
//! `cargo run --release --example svm_training`

use placefit::svm::{balance_weights, objective, train_raw, SvmConfig, TrainSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> placefit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n_pos, n_neg, dim) = (60, 240, 5);
    let (wp, wn) = balance_weights(n_pos, n_neg)?;

    let mut set = TrainSet::new(dim);
    for i in 0..n_pos + n_neg {
        let positive = i < n_pos;
        let centre = if positive { 0.6 } else { -0.6 };
        let x: Vec<f64> = (0..dim).map(|_| centre + rng.gen_range(-1.0..1.0)).collect();
        set.push(&x, if positive { 1 } else { -1 }, if positive { wp } else { wn })?;
    }

    let config = SvmConfig::default();
    let out = train_raw(&set, &config)?;
    println!("C = {}, tolerance {}", config.c, config.tolerance);
    println!("weights {:?}", out.weights.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>());
    println!("bias {:.4}", out.bias);
    println!(
        "primal {:.4}  dual bound {:.4}  epochs {}  converged {}",
        out.primal_objective, -out.dual_objective, out.epochs, out.converged
    );
    println!(
        "objective recomputed {:.4}",
        objective(&out.weights, out.bias, &set, config.c)?
    );
    println!("training errors {} / {}", set.training_errors(&out.weights, out.bias), set.len());
    println!("dual trace (first epochs): {:?}", &out.dual_trace[..out.dual_trace.len().min(6)]);
    Ok(())
}
