//! Scores a hand-made detection list and writes both curves.
//!
//! `cargo run --release --example evaluation [OUT_DIR]`

use placefit::detector::{BoundingBox, Detection};
use placefit::eval::{evaluate, write_curves, ImageEval, DEFAULT_IOU_MIN};

fn det(x: f64, y: f64, score: f64) -> Detection {
    Detection {
        bbox: BoundingBox::new(x, y, 16.0, 32.0).unwrap(),
        score,
        level: 0,
    }
}

fn main() -> placefit::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("placefit-eval"));
    std::fs::create_dir_all(&out).map_err(|e| placefit::Error::InvalidInput(e.to_string()))?;

    let gt = [
        vec![BoundingBox::new(10.0, 10.0, 16.0, 32.0)?],
        vec![BoundingBox::new(40.0, 20.0, 16.0, 32.0)?, BoundingBox::new(90.0, 30.0, 16.0, 32.0)?],
        vec![],
    ];
    let dets = [
        vec![det(11.0, 10.0, 2.0), det(60.0, 50.0, 0.4)],
        vec![det(40.0, 21.0, 1.5), det(12.0, 0.0, 0.9)],
        vec![det(5.0, 5.0, 0.2)],
    ];
    let images: Vec<ImageEval<'_>> = dets
        .iter()
        .zip(&gt)
        .map(|(d, g)| ImageEval {
            detections: d,
            ground_truth: g,
        })
        .collect();
    let result = evaluate(&images, DEFAULT_IOU_MIN)?;
    let s = result.summary();
    println!("AP {:.4}  LAMR {:.4}  max F1 {:.4}", s.ap, s.lamr, s.max_f1);
    for p in &result.pr_points {
        println!("  recall {:.3}  precision {:.3}", p.recall, p.precision);
    }
    let (pr, mr) = write_curves(&result, &out.join("curves.csv"))?;
    println!("curves: {} and {}", pr.display(), mr.display());
    Ok(())
}
