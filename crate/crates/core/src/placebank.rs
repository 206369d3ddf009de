//! Per-frame local expert model banks.
//!
//! Every map frame gets a model trained by hard negative mining on its
//! swathe: the `N` frames closest to it in time, or most similar to it by
//! GIST distance or mutual information. At run time a query pose retrieves
//! the model of the nearest map frame.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mining::{train_with_hnm_seeded, HnmConfig, HnmReport, HnmSeed, TrainingFrame};
use crate::similarity::SimilarityMatrix;
use crate::svm::LinearModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u32,
    pub lap_id: u32,
    pub timestamp_us: i64,
    pub pose: Pose,
    /// Image path relative to the dataset root.
    pub image_ref: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwatheMethod {
    Temporal,
    Gist,
    MutualInformation,
}

impl std::str::FromStr for SwatheMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal" => Ok(SwatheMethod::Temporal),
            "gist" => Ok(SwatheMethod::Gist),
            "mi" | "mutual_information" => Ok(SwatheMethod::MutualInformation),
            other => Err(Error::InvalidInput(format!("unknown swathe method `{other}`"))),
        }
    }
}

impl std::fmt::Display for SwatheMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SwatheMethod::Temporal => "temporal",
            SwatheMethod::Gist => "gist",
            SwatheMethod::MutualInformation => "mi",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    /// Swathe size `N`.
    pub swathe_size: usize,
    pub method: SwatheMethod,
    pub hnm: HnmConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry {
    pub frame_id: u32,
    pub model: LinearModel,
    pub swathe: Vec<u32>,
    pub report: HnmReport,
}

/// Immutable map from index frame to its fitted model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBank {
    pub config: BankConfig,
    pub map_frames: Vec<FrameRecord>,
    /// One entry per map frame, in map-frame order.
    pub entries: Vec<BankEntry>,
}

/// The `min(N, total)` consecutive frames centred on `index`:
/// `[index − ⌊(N−1)/2⌋, index + ⌈(N−1)/2⌉]`, shifted inwards at the ends of
/// the route. `frame_ids` must be in capture order.
pub fn select_swathe_temporal(index: u32, n: usize, frame_ids: &[u32]) -> Result<Vec<u32>> {
    let pos = frame_ids
        .iter()
        .position(|&f| f == index)
        .ok_or(Error::UnknownFrame(index))?;
    let total = frame_ids.len();
    let m = n.clamp(1, total);
    let start = pos.saturating_sub((m - 1) / 2).min(total - m);
    Ok(frame_ids[start..start + m].to_vec())
}

/// The index frame followed by the `min(N, total) − 1` other frames of
/// smallest distance in `sim`, ties broken by lower frame id. Rows and
/// columns of `sim` follow `frame_ids`.
pub fn select_swathe_by_similarity(
    index: u32,
    n: usize,
    sim: &SimilarityMatrix,
    frame_ids: &[u32],
) -> Result<Vec<u32>> {
    if sim.len() != frame_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: frame_ids.len(),
            actual: sim.len(),
        });
    }
    let pos = frame_ids
        .iter()
        .position(|&f| f == index)
        .ok_or(Error::UnknownFrame(index))?;
    let row = sim.row(pos);
    let mut others: Vec<usize> = (0..frame_ids.len()).filter(|&j| j != pos).collect();
    others.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(frame_ids[a].cmp(&frame_ids[b])));
    let m = n.clamp(1, frame_ids.len());
    Ok(std::iter::once(index)
        .chain(others.into_iter().take(m - 1).map(|j| frame_ids[j]))
        .collect())
}

/// Builds one entry per frame. `training` holds the prepared frames in the
/// same order as `frames`; `similarity` is required for the GIST and MI
/// methods. Frames with identical swathes share one training run.
pub fn build_bank(
    frames: &[FrameRecord],
    training: &[TrainingFrame],
    positives: &[Vec<f64>],
    seed_negatives: &[Vec<f64>],
    config: &BankConfig,
    similarity: Option<&SimilarityMatrix>,
) -> Result<ModelBank> {
    if frames.len() != training.len() {
        return Err(Error::DimensionMismatch {
            expected: frames.len(),
            actual: training.len(),
        });
    }
    if config.swathe_size == 0 {
        return Err(Error::InvalidInput("swathe size must be at least 1".into()));
    }
    let ids: Vec<u32> = frames.iter().map(|f| f.frame_id).collect();
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("map frame ids must be strictly increasing".into()));
    }
    let swathes: Vec<Vec<u32>> = ids
        .iter()
        .map(|&id| match config.method {
            SwatheMethod::Temporal => select_swathe_temporal(id, config.swathe_size, &ids),
            SwatheMethod::Gist | SwatheMethod::MutualInformation => {
                let sim = similarity.ok_or_else(|| {
                    Error::InvalidInput(format!("{} swathes need a similarity matrix", config.method))
                })?;
                select_swathe_by_similarity(id, config.swathe_size, sim, &ids)
            }
        })
        .collect::<Result<_>>()?;

    let mut distinct: Vec<Vec<u32>> = Vec::new();
    let mut slot: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut entry_slot = Vec::with_capacity(swathes.len());
    for s in &swathes {
        let mut key = s.clone();
        key.sort_unstable();
        let next = distinct.len();
        let k = *slot.entry(key.clone()).or_insert_with(|| {
            distinct.push(key);
            next
        });
        entry_slot.push(k);
    }

    let position: HashMap<u32, usize> = ids.iter().enumerate().map(|(i, &f)| (f, i)).collect();
    let seed = HnmSeed::new(positives, seed_negatives, &config.hnm)?;
    let trained: Vec<(LinearModel, HnmReport)> = distinct
        .par_iter()
        .map(|swathe| {
            let refs: Vec<&TrainingFrame> = swathe.iter().map(|f| &training[position[f]]).collect();
            train_with_hnm_seeded(&seed, &refs, &config.hnm)
        })
        .collect::<Result<_>>()?;

    let entries = ids
        .iter()
        .zip(swathes)
        .zip(entry_slot)
        .map(|((&frame_id, swathe), k)| BankEntry {
            frame_id,
            model: trained[k].0.clone(),
            swathe,
            report: trained[k].1.clone(),
        })
        .collect();
    Ok(ModelBank {
        config: config.clone(),
        map_frames: frames.to_vec(),
        entries,
    })
}

impl ModelBank {
    /// Model of the map frame nearest to `(x, y)`; ties go to the lowest
    /// frame id. Heading is ignored.
    pub fn retrieve_model(&self, x: f64, y: f64) -> Result<(&LinearModel, u32)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, f) in self.map_frames.iter().enumerate() {
            let d = (f.pose.x - x).powi(2) + (f.pose.y - y).powi(2);
            let better = match best {
                None => true,
                Some((bd, bi)) => d < bd || (d == bd && f.frame_id < self.map_frames[bi].frame_id),
            };
            if better {
                best = Some((d, i));
            }
        }
        let (_, i) = best.ok_or(Error::EmptyBank)?;
        Ok((&self.entries[i].model, self.entries[i].frame_id))
    }

    pub fn entry(&self, frame_id: u32) -> Option<&BankEntry> {
        self.entries.iter().find(|e| e.frame_id == frame_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Laps appearing in any swathe.
    pub fn swathe_laps(&self) -> Vec<u32> {
        let lap_of: HashMap<u32, u32> = self.map_frames.iter().map(|f| (f.frame_id, f.lap_id)).collect();
        let mut laps: Vec<u32> = self
            .entries
            .iter()
            .flat_map(|e| e.swathe.iter().map(|f| lap_of[f]))
            .collect();
        laps.sort_unstable();
        laps.dedup();
        laps
    }
}

/// Retrieval on a bank of `frames` without models attached: index of the
/// nearest frame to `(x, y)`, ties to the lowest frame id.
pub fn nearest_frame(frames: &[FrameRecord], x: f64, y: f64) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, f) in frames.iter().enumerate() {
        let d = (f.pose.x - x).powi(2) + (f.pose.y - y).powi(2);
        if best.map_or(true, |(bd, bi)| d < bd || (d == bd && f.frame_id < frames[bi].frame_id)) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}
