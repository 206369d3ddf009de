//! Hard negative mining: train, scan the training frames for high-scoring
//! windows away from every pedestrian, add them as negatives, retrain.

use std::collections::HashSet;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{build_pyramid, compute_channels, FeaturePyramid, PyramidConfig};
use crate::detector::{for_each_window, BoundingBox};
use crate::error::{Error, Result};
use crate::svm::{self, balance_weights, DualSolver, LinearModel, SvmConfig, TrainOutcome, TrainSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HnmConfig {
    pub max_iterations: usize,
    /// Most false positives taken from one frame per round.
    pub per_image_cap: usize,
    /// A window counts as a false positive only if its IoU with every
    /// ground-truth box is below this.
    pub fp_iou_max: f64,
    pub mining_score_min: f64,
    pub seed_patches_per_negative_image: usize,
    pub window: (usize, usize),
    pub stride_cells: usize,
    pub pyramid: PyramidConfig,
    pub svm: SvmConfig,
}

impl Default for HnmConfig {
    fn default() -> Self {
        HnmConfig {
            max_iterations: 20,
            per_image_cap: 5,
            fp_iou_max: 0.5,
            mining_score_min: -0.5,
            seed_patches_per_negative_image: 10,
            window: (64, 128),
            stride_cells: 1,
            pyramid: PyramidConfig::default(),
            svm: SvmConfig::default(),
        }
    }
}

impl HnmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.per_image_cap == 0 {
            return Err(Error::InvalidInput(
                "max_iterations and per_image_cap must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HnmReport {
    pub iterations_run: usize,
    /// Windows added to the negative set in each round.
    pub new_negatives_per_iteration: Vec<usize>,
    /// Windows returned by mining in each round, before deduplication.
    pub mined_per_iteration: Vec<usize>,
    /// The last round mined no window at all.
    pub converged: bool,
    pub final_objective: f64,
    /// Misclassified samples of the final training set under the final model.
    pub training_errors: usize,
    pub n_positives: usize,
    pub n_negatives: usize,
}

/// A frame prepared for mining: its pyramid is computed once.
#[derive(Clone, Debug)]
pub struct TrainingFrame {
    pub frame_id: u32,
    pub width: usize,
    pub height: usize,
    pub pyramid: FeaturePyramid,
    pub ground_truth: Vec<BoundingBox>,
}

impl TrainingFrame {
    pub fn new(
        frame_id: u32,
        image: &RgbImage,
        ground_truth: Vec<BoundingBox>,
        pyramid: &PyramidConfig,
    ) -> Result<Self> {
        Ok(TrainingFrame {
            frame_id,
            width: image.width() as usize,
            height: image.height() as usize,
            pyramid: build_pyramid(image, pyramid)?,
            ground_truth,
        })
    }
}

/// Identity of a window: frame, pyramid level, cell position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowId {
    pub frame_id: u32,
    pub level: usize,
    pub x_cell: usize,
    pub y_cell: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinedWindow {
    pub id: WindowId,
    pub bbox: BoundingBox,
    pub score: f64,
    pub features: Vec<f64>,
}

/// The `per_image_cap` highest-scoring windows of `frame` that score at
/// least `mining_score_min` and overlap no ground-truth box by
/// `fp_iou_max` or more, best first. No suppression is applied.
pub fn mine_hard_negatives(model: &LinearModel, frame: &TrainingFrame, config: &HnmConfig) -> Result<Vec<MinedWindow>> {
    let shrink = config.pyramid.shrink;
    if model.window != config.window || model.shrink != shrink {
        return Err(Error::DimensionMismatch {
            expected: svm::window_feature_dim(config.window, shrink),
            actual: model.feature_dim(),
        });
    }
    let cells = model.window_cells();
    let mut candidates: Vec<(f64, WindowId, BoundingBox)> = Vec::new();
    for (li, level) in frame.pyramid.levels.iter().enumerate() {
        for_each_window(&level.stack, model, cells, config.stride_cells, |x, y, score| {
            if score < config.mining_score_min {
                return;
            }
            let local = BoundingBox {
                x: (x * shrink) as f64,
                y: (y * shrink) as f64,
                w: config.window.0 as f64,
                h: config.window.1 as f64,
            };
            let Some(bbox) = local.scaled(1.0 / level.scale).clip(frame.width as f64, frame.height as f64) else {
                return;
            };
            if frame.ground_truth.iter().all(|gt| gt.iou(&bbox) < config.fp_iou_max) {
                let id = WindowId {
                    frame_id: frame.frame_id,
                    level: li,
                    x_cell: x,
                    y_cell: y,
                };
                candidates.push((score, id, bbox));
            }
        });
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    candidates.truncate(config.per_image_cap);
    Ok(candidates
        .into_iter()
        .map(|(score, id, bbox)| MinedWindow {
            features: frame.pyramid.levels[id.level]
                .stack
                .window_features(id.x_cell, id.y_cell, cells.0, cells.1),
            id,
            bbox,
            score,
        })
        .collect())
}

/// The first training round of the mining loop, which depends only on the
/// positives and seed negatives and so can be shared by every mining run
/// over the same training data.
#[derive(Clone, Debug)]
pub struct HnmSeed {
    solver: DualSolver,
    outcome: TrainOutcome,
    n_positives: usize,
}

impl HnmSeed {
    pub fn new(positives: &[Vec<f64>], seed_negatives: &[Vec<f64>], config: &HnmConfig) -> Result<Self> {
        config.validate()?;
        if positives.is_empty() || seed_negatives.is_empty() {
            return Err(Error::DegenerateData(
                "hard negative mining needs positives and seed negatives".into(),
            ));
        }
        let dim = svm::window_feature_dim(config.window, config.pyramid.shrink);
        let (wp, wn) = balance_weights(positives.len(), seed_negatives.len())?;
        let mut set = TrainSet::new(dim);
        for p in positives {
            set.push(p, 1, wp)?;
        }
        for n in seed_negatives {
            set.push(n, -1, wn)?;
        }
        let mut solver = DualSolver::new(set, &config.svm)?;
        let outcome = solver.solve()?;
        Ok(HnmSeed {
            solver,
            outcome,
            n_positives: positives.len(),
        })
    }
}

/// Runs the mining loop. Seed negatives are never dropped; mined windows are
/// deduplicated by [`WindowId`]. Stops when a round mines nothing
/// (converged) or after `max_iterations` rounds. Each round's solve starts
/// from the previous round's dual solution, with class weights rebalanced.
pub fn train_with_hnm(
    positives: &[Vec<f64>],
    seed_negatives: &[Vec<f64>],
    frames: &[&TrainingFrame],
    config: &HnmConfig,
) -> Result<(LinearModel, HnmReport)> {
    train_with_hnm_seeded(&HnmSeed::new(positives, seed_negatives, config)?, frames, config)
}

/// [`train_with_hnm`] starting from a precomputed first round. `seed` must
/// have been built with the same `config`.
pub fn train_with_hnm_seeded(
    seed: &HnmSeed,
    frames: &[&TrainingFrame],
    config: &HnmConfig,
) -> Result<(LinearModel, HnmReport)> {
    config.validate()?;
    let mut solver = seed.solver.clone();
    let mut outcome = Some(seed.outcome.clone());
    let mut seen: HashSet<WindowId> = HashSet::new();
    let mut report = HnmReport {
        n_positives: seed.n_positives,
        ..Default::default()
    };

    loop {
        let outcome = match outcome.take() {
            Some(o) => o,
            None => solver.solve()?,
        };
        let set = solver.set();
        let model = svm::model_from_outcome(outcome, &config.svm, set.len(), config.window, config.pyramid.shrink)?;
        let training_errors = set.training_errors(&model.weights, model.bias);
        let n_negatives = set.count_label(-1);
        report.iterations_run += 1;

        let mined: Vec<Vec<MinedWindow>> = frames
            .par_iter()
            .map(|f| mine_hard_negatives(&model, f, config))
            .collect::<Result<_>>()?;
        let total: usize = mined.iter().map(Vec::len).sum();
        let mut added = 0;
        for w in mined.into_iter().flatten() {
            if seen.insert(w.id) {
                solver.push(&w.features, -1, 1.0)?;
                added += 1;
            }
        }
        report.mined_per_iteration.push(total);
        report.new_negatives_per_iteration.push(added);

        // A round that mines only known windows leaves the training set, and
        // so every later round, unchanged: record those rounds directly.
        if total > 0 && added == 0 {
            while report.iterations_run < config.max_iterations {
                report.iterations_run += 1;
                report.mined_per_iteration.push(total);
                report.new_negatives_per_iteration.push(0);
            }
        }
        if total == 0 || report.iterations_run >= config.max_iterations {
            report.converged = total == 0;
            report.final_objective = model.metadata.primal_objective;
            report.training_errors = training_errors;
            report.n_negatives = n_negatives;
            return Ok((model, report));
        }
        let n_neg = solver.set().count_label(-1);
        let (wp, wn) = balance_weights(seed.n_positives, n_neg)?;
        solver.reweight(wp, wn)?;
    }
}

/// Feature vectors of `per_image` random windows from each image, taken at
/// a random pyramid level and cell position (deterministic in `seed`).
pub fn sample_seed_negatives(
    images: &[RgbImage],
    per_image: usize,
    window: (usize, usize),
    pyramid: &PyramidConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (wc, hc) = (window.0 / pyramid.shrink, window.1 / pyramid.shrink);
    let mut out = Vec::with_capacity(images.len() * per_image);
    for img in images {
        let pyr = build_pyramid(img, pyramid)?;
        for _ in 0..per_image {
            let level = &pyr.levels[rng.gen_range(0..pyr.levels.len())];
            let s = &level.stack;
            if s.width_cells < wc || s.height_cells < hc {
                continue;
            }
            let x = rng.gen_range(0..=s.width_cells - wc);
            let y = rng.gen_range(0..=s.height_cells - hc);
            out.push(s.window_features(x, y, wc, hc));
        }
    }
    Ok(out)
}

/// Features of positive crops: the window centred in each image. Margins
/// around the window must be whole cells on each side.
pub fn positive_features(images: &[RgbImage], window: (usize, usize), shrink: usize) -> Result<Vec<Vec<f64>>> {
    let (wc, hc) = (window.0 / shrink, window.1 / shrink);
    images
        .iter()
        .map(|img| {
            let (w, h) = (img.width() as usize, img.height() as usize);
            if w < window.0 || h < window.1 || (w - window.0) % (2 * shrink) != 0 || (h - window.1) % (2 * shrink) != 0 {
                return Err(Error::InvalidInput(format!(
                    "positive crop {w}x{h} does not centre a {}x{} window on cell boundaries",
                    window.0, window.1
                )));
            }
            let stack = compute_channels(img, shrink)?;
            let x = (w - window.0) / 2 / shrink;
            let y = (h - window.1) / 2 / shrink;
            Ok(stack.window_features(x, y, wc, hc))
        })
        .collect()
}
