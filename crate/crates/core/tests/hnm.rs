mod common;

use common::{SHRINK, WINDOW};
use placefit::mining::{mine_hard_negatives, train_with_hnm, HnmConfig, TrainingFrame};
use placefit::svm::{balance_weights, train, LinearModel, TrainSet};

/// Every window of every level, scored directly.
fn all_window_scores(model: &LinearModel, frame: &TrainingFrame) -> Vec<f64> {
    let (wc, hc) = (WINDOW.0 / SHRINK, WINDOW.1 / SHRINK);
    let mut out = Vec::new();
    for level in &frame.pyramid.levels {
        let s = &level.stack;
        if s.width_cells < wc || s.height_cells < hc {
            continue;
        }
        for y in 0..=s.height_cells - hc {
            for x in 0..=s.width_cells - wc {
                out.push(model.score(&s.window_features(x, y, wc, hc)));
            }
        }
    }
    out
}

#[test]
fn mineable_frame_is_learned_away() {
    let f = common::mineable_fixture();
    let (model, report) = train_with_hnm(&f.positives, &f.seeds, &[&f.frame], &f.config).unwrap();
    assert_eq!(report.new_negatives_per_iteration[0], 3);
    assert_eq!(report.new_negatives_per_iteration.last(), Some(&0));
    assert!(report.converged);
    assert!(report.iterations_run <= f.config.max_iterations);
    assert_eq!(report.iterations_run, report.new_negatives_per_iteration.len());
    // The frame has no ground truth, so every window above the floor
    // would be a false positive.
    let scores = all_window_scores(&model, &f.frame);
    assert_eq!(scores.len(), 3);
    assert!(scores.iter().all(|&s| s < f.config.mining_score_min), "{scores:?}");
}

#[test]
fn inseparable_frame_runs_to_the_cap() {
    let f = common::inseparable_fixture();
    let (_, report) = train_with_hnm(&f.positives, &f.seeds, &[&f.frame], &f.config).unwrap();
    assert!(!report.converged);
    assert_eq!(report.iterations_run, 20);
    assert_eq!(report.mined_per_iteration.len(), 20);
    assert!(*report.mined_per_iteration.last().unwrap() > 0);
    assert!(report.training_errors > 0);
}

#[test]
fn frame_without_mineable_windows_reduces_to_plain_svm() {
    let f = common::mineable_fixture();
    let config = HnmConfig {
        mining_score_min: 1e9,
        ..f.config.clone()
    };
    let (model, report) = train_with_hnm(&f.positives, &f.seeds, &[&f.frame], &config).unwrap();
    assert_eq!(report.iterations_run, 1);
    assert!(report.converged);
    assert_eq!(report.new_negatives_per_iteration, vec![0]);

    let (wp, wn) = balance_weights(f.positives.len(), f.seeds.len()).unwrap();
    let mut set = TrainSet::new(f.positives[0].len());
    for x in &f.positives {
        set.push(x, 1, wp).unwrap();
    }
    for x in &f.seeds {
        set.push(x, -1, wn).unwrap();
    }
    let plain = train(&set, &config.svm, WINDOW, SHRINK).unwrap();
    assert_eq!(model.weights, plain.weights);
    assert_eq!(model.bias, plain.bias);
}

#[test]
fn negative_set_grows_by_exactly_the_new_windows() {
    for f in [common::mineable_fixture(), common::inseparable_fixture()] {
        let (_, report) = train_with_hnm(&f.positives, &f.seeds, &[&f.frame], &f.config).unwrap();
        let added: usize = report.new_negatives_per_iteration.iter().sum();
        assert_eq!(report.n_negatives, f.seeds.len() + added);
        assert_eq!(report.n_positives, f.positives.len());
        for (new, mined) in report.new_negatives_per_iteration.iter().zip(&report.mined_per_iteration) {
            assert!(new <= mined);
            assert!(*mined <= f.config.per_image_cap);
        }
        assert_eq!(report.converged, *report.mined_per_iteration.last().unwrap() == 0);
    }
}

#[test]
fn mining_respects_ground_truth() {
    let f = common::inseparable_fixture();
    // Annotating every planted copy leaves nothing to mine near them.
    let gt: Vec<_> = [0.0, 32.0, 64.0]
        .into_iter()
        .map(|x| common::bbox(x + common::MARGIN as f64, common::MARGIN as f64, 16.0, 32.0))
        .collect();
    let frame = TrainingFrame::new(1, &f.image, gt.clone(), &f.config.pyramid).unwrap();
    let (model, _) = train_with_hnm(&f.positives, &f.seeds, &[], &f.config).unwrap();
    for m in mine_hard_negatives(&model, &frame, &f.config).unwrap() {
        assert!(gt.iter().all(|g| g.iou(&m.bbox) < f.config.fp_iou_max));
    }
}

#[test]
fn mining_is_deterministic() {
    let f = common::inseparable_fixture();
    let a = train_with_hnm(&f.positives, &f.seeds, &[&f.frame], &f.config).unwrap();
    let b = train_with_hnm(&f.positives, &f.seeds, &[&f.frame], &f.config).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}
