mod common;

use common::{bbox, SHRINK, WINDOW};
use image::{Rgb, RgbImage};
use placefit::channels::compute_channels;
use placefit::detector::{detect, nms, score_windows, DetectConfig, Detection};
use placefit::mining::{mine_hard_negatives, positive_features, sample_seed_negatives, TrainingFrame};
use placefit::svm::{balance_weights, train, window_feature_dim, LinearModel, SvmConfig, TrainSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn detections(raw: &[(f64, f64, f64)]) -> Vec<Detection> {
    raw.iter()
        .map(|&(x, y, s)| Detection {
            bbox: bbox(x, y, 16.0, 32.0),
            score: s,
            level: 0,
        })
        .collect()
}

proptest! {
    #[test]
    fn nms_leaves_no_redundant_pair(
        raw in prop::collection::vec((0.0f64..60.0, 0.0f64..40.0, -3.0f64..3.0), 0..25),
        threshold in 0.1f64..0.9,
    ) {
        let dets = detections(&raw);
        let kept = nms(&dets, threshold);
        prop_assert!(kept.len() <= dets.len());
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.bbox.iou(&b.bbox) <= threshold);
            }
        }
        prop_assert!(kept.windows(2).all(|w| w[0].score >= w[1].score));
        if let Some(best) = dets.iter().map(|d| d.score).reduce(f64::max) {
            prop_assert_eq!(kept[0].score, best);
        }
    }

    #[test]
    fn placement_count_matches_enumeration(w in 16u32..64, h in 32u32..72, stride in 1usize..4) {
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 3 % 256) as u8, 50]));
        let stack = compute_channels(&img, SHRINK).unwrap();
        let model = LinearModel::constant(WINDOW, SHRINK, 5.0).unwrap();
        let got = score_windows(&stack, &model, WINDOW, stride).unwrap();
        let (wc, hc) = (WINDOW.0 / SHRINK, WINDOW.1 / SHRINK);
        let mut expected = Vec::new();
        for y in (0..stack.height_cells).step_by(stride) {
            for x in (0..stack.width_cells).step_by(stride) {
                if x + wc <= stack.width_cells && y + hc <= stack.height_cells {
                    expected.push(((x * SHRINK) as f64, (y * SHRINK) as f64));
                }
            }
        }
        let mut positions: Vec<(f64, f64)> = got.iter().map(|d| (d.bbox.x, d.bbox.y)).collect();
        positions.sort_by(|a, b| a.partial_cmp(b).unwrap());
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        prop_assert_eq!(positions, expected);
        prop_assert!(got.iter().all(|d| d.score == 5.0));
    }
}

/// Dense scoring agrees with scoring each window's feature vector directly.
#[test]
fn window_scores_match_direct_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = RgbImage::from_fn(60, 52, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]));
    let stack = compute_channels(&img, SHRINK).unwrap();
    let dim = window_feature_dim(WINDOW, SHRINK);
    let model = LinearModel::new(WINDOW, SHRINK, (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0.3).unwrap();
    for d in score_windows(&stack, &model, WINDOW, 1).unwrap() {
        let (x, y) = (d.bbox.x as usize / SHRINK, d.bbox.y as usize / SHRINK);
        let direct = model.score(&stack.window_features(x, y, WINDOW.0 / SHRINK, WINDOW.1 / SHRINK));
        assert!((d.score - direct).abs() < 1e-9, "{} vs {direct}", d.score);
    }
}

fn figure_model() -> LinearModel {
    let config = common::hnm_config();
    let pos = positive_features(&common::positive_images(40, 21), WINDOW, SHRINK).unwrap();
    let neg = sample_seed_negatives(&common::negative_images(8, 22), 10, WINDOW, &config.pyramid, 1).unwrap();
    let (wp, wn) = balance_weights(pos.len(), neg.len()).unwrap();
    let mut set = TrainSet::new(pos[0].len());
    for x in &pos {
        set.push(x, 1, wp).unwrap();
    }
    for x in &neg {
        set.push(x, -1, wn).unwrap();
    }
    train(&set, &SvmConfig::default(), WINDOW, SHRINK).unwrap()
}

#[test]
fn planted_figure_is_the_top_detection() {
    let model = figure_model();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut img = RgbImage::from_fn(96, 64, |_, _| {
        let v = 170u8.wrapping_add(rng.gen_range(0..12)).saturating_sub(6);
        Rgb([v, v, v])
    });
    common::draw_figure(&mut img, 44, 20, 30);
    let config = DetectConfig {
        window: WINDOW,
        ..DetectConfig::default()
    };
    let pyramid = common::hnm_config().pyramid;
    let dets = detect(&img, &model, &config, &pyramid).unwrap();
    let planted = bbox(44.0, 20.0, 16.0, 32.0);
    assert!(!dets.is_empty());
    assert!(dets[0].bbox.iou(&planted) >= 0.5, "{:?}", dets[0]);
    // Same input, same output, bit for bit.
    assert_eq!(detect(&img, &model, &config, &pyramid).unwrap(), dets);
}

#[test]
fn zero_weights_below_threshold_detect_nothing() {
    let img = RgbImage::from_fn(64, 64, |x, y| Rgb([(x * 4) as u8, (y * 4) as u8, 0]));
    let model = LinearModel::constant(WINDOW, SHRINK, -1.0).unwrap();
    let config = DetectConfig {
        window: WINDOW,
        ..DetectConfig::default()
    };
    assert!(detect(&img, &model, &config, &common::hnm_config().pyramid).unwrap().is_empty());
}

/// The miner returns the `per_image_cap` best windows above the score
/// floor, best first, as found by scoring every window of every level.
#[test]
fn miner_returns_top_windows_of_exhaustive_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let img = RgbImage::from_fn(48, 48, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]));
    let mut config = common::hnm_config();
    let frame = TrainingFrame::new(4, &img, vec![], &config.pyramid).unwrap();
    let dim = window_feature_dim(WINDOW, SHRINK);
    let model = LinearModel::new(WINDOW, SHRINK, (0..dim).map(|_| rng.gen_range(-0.1..0.1)).collect(), 0.0).unwrap();

    let (wc, hc) = (WINDOW.0 / SHRINK, WINDOW.1 / SHRINK);
    let mut all: Vec<f64> = Vec::new();
    for level in &frame.pyramid.levels {
        let s = &level.stack;
        for y in 0..=s.height_cells - hc {
            for x in 0..=s.width_cells - wc {
                all.push(model.score(&s.window_features(x, y, wc, hc)));
            }
        }
    }
    all.sort_by(|a, b| b.total_cmp(a));
    assert!(all.len() > 8 && all[6] - all[7] > 1e-6);
    // Exactly seven windows clear the floor; the cap keeps five.
    config.mining_score_min = 0.5 * (all[6] + all[7]);
    config.per_image_cap = 5;
    let mined = mine_hard_negatives(&model, &frame, &config).unwrap();
    assert_eq!(mined.len(), 5);
    for (m, want) in mined.iter().zip(&all) {
        assert!((m.score - want).abs() < 1e-9);
        assert!((model.score(&m.features) - m.score).abs() < 1e-9);
    }
}
