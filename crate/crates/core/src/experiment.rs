//! Cross-lap protocol: build a bank on one lap, detect on every other lap
//! with the model retrieved by each test frame's pose, and pool the
//! detections of all directions into one evaluation per bank variant.
//!
//! A generic baseline is trained once with mining restricted to the
//! designated negative images, and applied to every test frame.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channels::PyramidConfig;
use crate::dataio::{bank_checksum, Dataset};
use crate::detector::{detect_pyramid, DetectConfig, Detection};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalResult, EvalSummary, ImageEval, DEFAULT_IOU_MIN};
use crate::mining::{positive_features, sample_seed_negatives, train_with_hnm, HnmConfig, HnmReport, TrainingFrame};
use crate::placebank::{build_bank, BankConfig, ModelBank, SwatheMethod};
use crate::similarity::{similarity_matrix, SimilarityConfig, SimilarityMatrix, SimilarityMetric};
use crate::svm::LinearModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwatheSize {
    Frames(usize),
    /// Every frame of the training lap.
    FullLap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub label: String,
    pub method: SwatheMethod,
    pub swathe: SwatheSize,
}

impl RunSpec {
    pub fn new(label: &str, method: SwatheMethod, swathe: SwatheSize) -> Self {
        RunSpec {
            label: label.to_string(),
            method,
            swathe,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hnm: HnmConfig,
    pub detect: DetectConfig,
    pub similarity: SimilarityConfig,
    pub runs: Vec<RunSpec>,
    pub generic_baseline: bool,
    pub iou_min: f64,
    /// Drives seed-negative sampling and the solver shuffle.
    pub seed: u64,
}

/// Window used on the synthetic route: 16×32 pixels, 8×16 cells at shrink 2.
pub const SYNTH_WINDOW: (usize, usize) = (16, 32);

/// Channel shrink on the synthetic route.
pub const SYNTH_SHRINK: usize = 2;

impl ExperimentConfig {
    /// Settings matched to the synthetic route, with the standard runs:
    /// temporal swathes of 1, 10 and the full lap, and GIST swathes of 10.
    pub fn synthetic(seed: u64) -> Self {
        let pyramid = PyramidConfig {
            scales_per_octave: 8,
            min_window: SYNTH_WINDOW,
            shrink: SYNTH_SHRINK,
        };
        let mut hnm = HnmConfig {
            window: SYNTH_WINDOW,
            pyramid,
            ..HnmConfig::default()
        };
        hnm.svm.shuffle_seed = seed;
        ExperimentConfig {
            hnm,
            detect: DetectConfig {
                window: SYNTH_WINDOW,
                score_threshold: -1.0,
                ..DetectConfig::default()
            },
            similarity: SimilarityConfig::default(),
            runs: vec![
                RunSpec::new("temporal_n1", SwatheMethod::Temporal, SwatheSize::Frames(1)),
                RunSpec::new("temporal_n10", SwatheMethod::Temporal, SwatheSize::Frames(10)),
                RunSpec::new("temporal_full", SwatheMethod::Temporal, SwatheSize::FullLap),
                RunSpec::new("gist_n10", SwatheMethod::Gist, SwatheSize::Frames(10)),
            ],
            generic_baseline: true,
            iou_min: DEFAULT_IOU_MIN,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hnm.validate()?;
        if self.detect.window != self.hnm.window {
            return Err(Error::InvalidInput(format!(
                "detection window {:?} differs from training window {:?}",
                self.detect.window, self.hnm.window
            )));
        }
        let mut labels: Vec<&str> = self.runs.iter().map(|r| r.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("run labels must be unique".into()));
        }
        if self.runs.iter().any(|r| r.swathe == SwatheSize::Frames(0)) {
            return Err(Error::InvalidInput("swathe size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mining and fit statistics over the distinct models of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingStats {
    pub models_trained: usize,
    pub models_with_zero_errors: usize,
    pub max_training_errors: usize,
    pub mean_training_errors: f64,
    pub models_converged: usize,
    pub mean_iterations: f64,
}

impl TrainingStats {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a HnmReport>) -> Self {
        let mut s = TrainingStats::default();
        let (mut err_sum, mut iter_sum) = (0usize, 0usize);
        for r in reports {
            s.models_trained += 1;
            s.models_with_zero_errors += usize::from(r.training_errors == 0);
            s.max_training_errors = s.max_training_errors.max(r.training_errors);
            s.models_converged += usize::from(r.converged);
            err_sum += r.training_errors;
            iter_sum += r.iterations_run;
        }
        if s.models_trained > 0 {
            s.mean_training_errors = err_sum as f64 / s.models_trained as f64;
            s.mean_iterations = iter_sum as f64 / s.models_trained as f64;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub method: Option<SwatheMethod>,
    /// Swathe size actually used (the lap length for full-lap runs).
    pub swathe_size: Option<usize>,
    pub summary: EvalSummary,
    pub training: TrainingStats,
    /// One checksum per training lap, in lap order.
    pub bank_checksums: Vec<String>,
    #[serde(skip)]
    pub curves: Option<EvalResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub runs: Vec<RunResult>,
    pub generic: Option<RunResult>,
    pub n_test_frames: usize,
    pub n_ground_truth: usize,
}

impl ExperimentResult {
    pub fn run(&self, label: &str) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.label == label).or(self.generic.as_ref().filter(|g| g.label == label))
    }

    /// SHA-256 over the summary JSON.
    pub fn summary_checksum(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("result serialises")))
    }
}

/// Shared per-dataset preparation: pyramids, positive and seed features.
pub struct Prepared<'a> {
    pub dataset: &'a Dataset,
    pub frames: Vec<TrainingFrame>,
    pub positives: Vec<Vec<f64>>,
    pub seed_negatives: Vec<Vec<f64>>,
}

impl<'a> Prepared<'a> {
    pub fn new(dataset: &'a Dataset, config: &ExperimentConfig) -> Result<Self> {
        let frames = dataset
            .frames
            .par_iter()
            .zip(&dataset.frame_images)
            .map(|(f, img)| TrainingFrame::new(f.frame_id, img, dataset.ground_truth(f.frame_id).to_vec(), &config.hnm.pyramid))
            .collect::<Result<Vec<_>>>()?;
        let (positives, seed_negatives) = training_samples(dataset, config)?;
        Ok(Prepared {
            dataset,
            frames,
            positives,
            seed_negatives,
        })
    }
}

/// Positive window features from the dataset's crops and seed negatives
/// sampled from its negative images.
pub fn training_samples(dataset: &Dataset, config: &ExperimentConfig) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let pyr = &config.hnm.pyramid;
    let crops: Vec<_> = dataset.positives.iter().map(|p| p.image.clone()).collect();
    let positives = positive_features(&crops, config.hnm.window, pyr.shrink)?;
    let negatives: Vec<_> = dataset.negative_images.iter().map(|n| n.image.clone()).collect();
    let seed_negatives = sample_seed_negatives(
        &negatives,
        config.hnm.seed_patches_per_negative_image,
        config.hnm.window,
        pyr,
        config.seed,
    )?;
    if positives.is_empty() || seed_negatives.is_empty() {
        return Err(Error::DegenerateData(
            "dataset needs positive crops and negative images".into(),
        ));
    }
    Ok((positives, seed_negatives))
}

/// Builds the bank for `lap` with the given method and swathe.
pub fn build_lap_bank(
    prepared: &Prepared<'_>,
    lap: u32,
    method: SwatheMethod,
    swathe: SwatheSize,
    hnm: &HnmConfig,
    similarity: Option<&SimilarityMatrix>,
) -> Result<ModelBank> {
    let idx = prepared.dataset.lap_indices(lap);
    let records: Vec<_> = idx.iter().map(|&i| prepared.dataset.frames[i].clone()).collect();
    let training: Vec<TrainingFrame> = idx.iter().map(|&i| prepared.frames[i].clone()).collect();
    let size = match swathe {
        SwatheSize::Frames(n) => n,
        SwatheSize::FullLap => idx.len(),
    };
    let config = BankConfig {
        swathe_size: size,
        method,
        hnm: hnm.clone(),
    };
    build_bank(&records, &training, &prepared.positives, &prepared.seed_negatives, &config, similarity)
}

/// Similarity matrix over the frames of one lap.
pub fn lap_similarity(dataset: &Dataset, lap: u32, metric: SimilarityMetric, config: &SimilarityConfig) -> Result<SimilarityMatrix> {
    let images: Vec<_> = dataset.lap_indices(lap).into_iter().map(|i| dataset.frame_images[i].clone()).collect();
    similarity_matrix(&images, metric, config)
}

fn detect_with<'m>(
    prepared: &Prepared<'_>,
    test_idx: &[usize],
    model_for: impl Fn(usize) -> Result<&'m LinearModel> + Sync,
    config: &DetectConfig,
) -> Result<Vec<Vec<Detection>>> {
    test_idx
        .par_iter()
        .map(|&i| {
            let f = &prepared.frames[i];
            detect_pyramid(&f.pyramid, (f.width, f.height), model_for(i)?, config)
        })
        .collect()
}

fn pooled_eval(prepared: &Prepared<'_>, per_frame: &[(usize, Vec<Detection>)], iou_min: f64) -> Result<EvalResult> {
    let images: Vec<ImageEval<'_>> = per_frame
        .iter()
        .map(|(i, dets)| ImageEval {
            detections: dets,
            ground_truth: &prepared.frames[*i].ground_truth,
        })
        .collect();
    evaluate(&images, iou_min)
}

/// Runs one bank variant through every (train lap, test lap) pair.
pub fn run_cross_lap(prepared: &Prepared<'_>, spec: &RunSpec, config: &ExperimentConfig, sims: &HashMap<(u32, SimilarityMetric), SimilarityMatrix>) -> Result<(RunResult, Vec<ModelBank>)> {
    let laps = prepared.dataset.laps();
    let mut banks = Vec::new();
    let mut per_frame = Vec::new();
    let mut reports: Vec<HnmReport> = Vec::new();
    let mut size_used = None;
    for &train in &laps {
        let sim = match spec.method {
            SwatheMethod::Temporal => None,
            SwatheMethod::Gist => sims.get(&(train, SimilarityMetric::GistL2)),
            SwatheMethod::MutualInformation => sims.get(&(train, SimilarityMetric::MutualInformation)),
        };
        let bank = build_lap_bank(prepared, train, spec.method, spec.swathe, &config.hnm, sim)?;
        size_used = Some(bank.config.swathe_size);
        // Distinct models only: identical swathes share one fit.
        let mut seen = std::collections::HashSet::new();
        for e in &bank.entries {
            let mut key = e.swathe.clone();
            key.sort_unstable();
            if seen.insert(key) {
                reports.push(e.report.clone());
            }
        }
        for &test in laps.iter().filter(|&&l| l != train) {
            let idx = prepared.dataset.lap_indices(test);
            let dets = detect_with(
                prepared,
                &idx,
                |i| {
                    let p = prepared.dataset.frames[i].pose;
                    Ok(bank.retrieve_model(p.x, p.y)?.0)
                },
                &config.detect,
            )?;
            per_frame.extend(idx.into_iter().zip(dets));
        }
        banks.push(bank);
    }
    let result = pooled_eval(prepared, &per_frame, config.iou_min)?;
    Ok((
        RunResult {
            label: spec.label.clone(),
            method: Some(spec.method),
            swathe_size: size_used,
            summary: result.summary(),
            training: TrainingStats::from_reports(&reports),
            bank_checksums: banks.iter().map(bank_checksum).collect(),
            curves: Some(result),
        },
        banks,
    ))
}

/// Generic detector: mining only on the negative images, which carry no
/// pedestrians. Tested on every frame of every lap.
pub fn train_generic(prepared: &Prepared<'_>, config: &ExperimentConfig) -> Result<(LinearModel, HnmReport)> {
    train_generic_from(prepared.dataset, &prepared.positives, &prepared.seed_negatives, config)
}

/// [`train_generic`] from already extracted training samples.
pub fn train_generic_from(
    dataset: &Dataset,
    positives: &[Vec<f64>],
    seed_negatives: &[Vec<f64>],
    config: &ExperimentConfig,
) -> Result<(LinearModel, HnmReport)> {
    let frames = dataset
        .negative_images
        .par_iter()
        .enumerate()
        .map(|(k, n)| TrainingFrame::new(k as u32, &n.image, Vec::new(), &config.hnm.pyramid))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&TrainingFrame> = frames.iter().collect();
    train_with_hnm(positives, seed_negatives, &refs, &config.hnm)
}

fn run_generic(prepared: &Prepared<'_>, config: &ExperimentConfig) -> Result<RunResult> {
    let (model, report) = train_generic(prepared, config)?;
    let laps = prepared.dataset.laps();
    let mut per_frame = Vec::new();
    for &test in &laps {
        let idx = prepared.dataset.lap_indices(test);
        let dets = detect_with(prepared, &idx, |_| Ok(&model), &config.detect)?;
        per_frame.extend(idx.into_iter().zip(dets));
    }
    let result = pooled_eval(prepared, &per_frame, config.iou_min)?;
    Ok(RunResult {
        label: "generic".into(),
        method: None,
        swathe_size: None,
        summary: result.summary(),
        training: TrainingStats::from_reports([&report]),
        bank_checksums: vec![hex::encode(Sha256::digest(model.to_json()))],
        curves: Some(result),
    })
}

/// Full cross-lap experiment. Returns the results and every bank built,
/// keyed by run label and then training lap.
pub fn cross_lap(dataset: &Dataset, config: &ExperimentConfig) -> Result<(ExperimentResult, Vec<(String, Vec<ModelBank>)>)> {
    config.validate()?;
    let laps = dataset.laps();
    if laps.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "cross-lap evaluation needs at least two laps, found {}",
            laps.len()
        )));
    }
    let prepared = Prepared::new(dataset, config)?;

    let mut sims = HashMap::new();
    for spec in &config.runs {
        let metric = match spec.method {
            SwatheMethod::Temporal => continue,
            SwatheMethod::Gist => SimilarityMetric::GistL2,
            SwatheMethod::MutualInformation => SimilarityMetric::MutualInformation,
        };
        for &lap in &laps {
            if !sims.contains_key(&(lap, metric)) {
                sims.insert((lap, metric), lap_similarity(dataset, lap, metric, &config.similarity)?);
            }
        }
    }

    let mut runs = Vec::new();
    let mut banks = Vec::new();
    for spec in &config.runs {
        let (r, b) = run_cross_lap(&prepared, spec, config, &sims)?;
        runs.push(r);
        banks.push((spec.label.clone(), b));
    }
    let generic = if config.generic_baseline {
        Some(run_generic(&prepared, config)?)
    } else {
        None
    };
    let n_test_frames = laps.len() * dataset.frames.len() - dataset.frames.len();
    let n_ground_truth = runs
        .first()
        .or(generic.as_ref())
        .map_or(0, |r| r.summary.counts.n_ground_truth);
    Ok((
        ExperimentResult {
            runs,
            generic,
            n_test_frames,
            n_ground_truth,
        },
        banks,
    ))
}
