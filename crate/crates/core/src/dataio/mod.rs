//! Dataset ingestion and persistence, model-bank files, and the synthetic
//! route generator.
//!
//! A dataset root looks like:
//!
//! ```text
//! frames.csv        frame_id,lap_id,timestamp_us,x_m,y_m,heading_rad,image_relpath
//! annotations.csv   frame_id,x,y,w,h
//! <image_relpath>   one PNG per frame
//! positives/*.png   cropped positive windows
//! negatives/*.png   pedestrian-free images for seed negatives
//! ```
//!
//! All paths are relative to the root. Numbers are written in Rust's
//! shortest round-trip decimal form, so a load/save cycle reproduces the
//! manifests byte for byte.

mod bankfile;
mod detfile;
mod synth;

pub use bankfile::{bank_checksum, load_bank, read_bank, save_bank, write_bank, BANK_FORMAT_VERSION, BANK_MAGIC};
pub use detfile::{read_detections, write_detections, FrameDetection};
pub use synth::{generate_synthetic, SynthConfig};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::BoundingBox;
use crate::error::{Error, Result};
use crate::placebank::{FrameRecord, Pose};

pub const FRAMES_FILE: &str = "frames.csv";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const POSITIVES_DIR: &str = "positives";
pub const NEGATIVES_DIR: &str = "negatives";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedImage {
    /// Path relative to the dataset root.
    pub path: String,
    pub image: RgbImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frames: Vec<FrameRecord>,
    /// Decoded frame images, parallel to `frames`.
    pub frame_images: Vec<RgbImage>,
    /// Ground truth for every frame (possibly empty).
    pub annotations: BTreeMap<u32, Vec<BoundingBox>>,
    pub negative_images: Vec<NamedImage>,
    pub positives: Vec<NamedImage>,
}

#[derive(Serialize, Deserialize)]
struct FrameRow {
    frame_id: u32,
    lap_id: u32,
    timestamp_us: i64,
    x_m: f64,
    y_m: f64,
    heading_rad: f64,
    image_relpath: String,
}

#[derive(Serialize, Deserialize)]
struct AnnotationRow {
    frame_id: u32,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl Dataset {
    pub fn ground_truth(&self, frame_id: u32) -> &[BoundingBox] {
        self.annotations.get(&frame_id).map_or(&[], Vec::as_slice)
    }

    pub fn laps(&self) -> Vec<u32> {
        let mut laps: Vec<u32> = self.frames.iter().map(|f| f.lap_id).collect();
        laps.sort_unstable();
        laps.dedup();
        laps
    }

    /// Indices into `frames` belonging to `lap`, in capture order.
    pub fn lap_indices(&self, lap: u32) -> Vec<usize> {
        (0..self.frames.len()).filter(|&i| self.frames[i].lap_id == lap).collect()
    }

    pub fn n_annotations(&self) -> usize {
        self.annotations.values().map(Vec::len).sum()
    }

    /// Checks referential integrity and ordering invariants.
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.frame_images.len() {
            return Err(Error::Integrity(format!(
                "{} frames but {} frame images",
                self.frames.len(),
                self.frame_images.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        let mut last_in_lap: BTreeMap<u32, (u32, i64)> = BTreeMap::new();
        for f in &self.frames {
            if !seen.insert(f.frame_id) {
                return Err(Error::Integrity(format!("duplicate frame {}", f.frame_id)));
            }
            if let Some(&(id, ts)) = last_in_lap.get(&f.lap_id) {
                if f.frame_id <= id || f.timestamp_us <= ts {
                    return Err(Error::Integrity(format!(
                        "frame {} is out of capture order in lap {}",
                        f.frame_id, f.lap_id
                    )));
                }
            }
            last_in_lap.insert(f.lap_id, (f.frame_id, f.timestamp_us));
        }
        for id in self.annotations.keys() {
            if !seen.contains(id) {
                return Err(Error::Integrity(format!(
                    "annotation references frame {id}, which is not in {FRAMES_FILE}"
                )));
            }
        }
        if let Some(first) = self.positives.first() {
            let (w0, h0) = first.image.dimensions();
            for p in &self.positives {
                let (w, h) = p.image.dimensions();
                if w as u64 * h0 as u64 != h as u64 * w0 as u64 {
                    return Err(Error::Integrity(format!(
                        "positive {} is {w}x{h}, aspect differs from {w0}x{h0}",
                        p.path
                    )));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over both manifests, hex encoded.
    pub fn manifest_checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(frames_csv(&self.frames));
        h.update(annotations_csv(&self.annotations));
        for img in self.frame_images.iter().chain(self.positives.iter().map(|p| &p.image)).chain(self.negative_images.iter().map(|n| &n.image)) {
            h.update(img.as_raw());
        }
        hex::encode(h.finalize())
    }
}

fn frames_csv(frames: &[FrameRecord]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for f in frames {
        w.serialize(FrameRow {
            frame_id: f.frame_id,
            lap_id: f.lap_id,
            timestamp_us: f.timestamp_us,
            x_m: f.pose.x,
            y_m: f.pose.y,
            heading_rad: f.pose.heading,
            image_relpath: f.image_ref.clone(),
        })
        .expect("in-memory csv");
    }
    if frames.is_empty() {
        w.write_record(["frame_id", "lap_id", "timestamp_us", "x_m", "y_m", "heading_rad", "image_relpath"])
            .expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn annotations_csv(annotations: &BTreeMap<u32, Vec<BoundingBox>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["frame_id", "x", "y", "w", "h"]).expect("in-memory csv");
    for (&frame_id, boxes) in annotations {
        for b in boxes {
            w.write_record([frame_id.to_string(), b.x.to_string(), b.y.to_string(), b.w.to_string(), b.h.to_string()])
                .expect("in-memory csv");
        }
    }
    w.into_inner().expect("in-memory csv")
}

fn read_image(root: &Path, rel: &str) -> Result<RgbImage> {
    let path = root.join(rel);
    image::open(&path)
        .map(|i| i.to_rgb8())
        .map_err(|e| Error::load(&path, format!("unreadable image: {e}")))
}

fn read_image_dir(root: &Path, dir: &str) -> Result<Vec<NamedImage>> {
    let full = root.join(dir);
    if !full.is_dir() {
        return Ok(Vec::new());
    }
    let mut names: Vec<String> = fs::read_dir(&full)
        .map_err(|e| Error::io(&full, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let rel = format!("{dir}/{n}");
            Ok(NamedImage {
                image: read_image(root, &rel)?,
                path: rel,
            })
        })
        .collect()
}

fn annotation_rows(path: &Path) -> Result<Vec<(u32, BoundingBox)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize::<AnnotationRow>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| Error::load(path, format!("row {}: {e}", i + 1)))?;
            let b = BoundingBox::new(row.x, row.y, row.w, row.h).map_err(|e| Error::load(path, format!("row {}: {e}", i + 1)))?;
            Ok((row.frame_id, b))
        })
        .collect()
}

/// A standalone annotation file, grouped by frame.
pub fn read_annotations(path: &Path) -> Result<BTreeMap<u32, Vec<BoundingBox>>> {
    let mut out: BTreeMap<u32, Vec<BoundingBox>> = BTreeMap::new();
    for (frame_id, b) in annotation_rows(path)? {
        out.entry(frame_id).or_default().push(b);
    }
    Ok(out)
}

/// Frame and annotation manifests of a dataset root, without images.
/// Every frame gets an entry in the annotation map, possibly empty.
pub fn load_manifests(root: &Path) -> Result<(Vec<FrameRecord>, BTreeMap<u32, Vec<BoundingBox>>)> {
    let frames_path = root.join(FRAMES_FILE);
    if !frames_path.is_file() {
        return Err(Error::load(&frames_path, "missing frame manifest"));
    }
    let ann_path = root.join(ANNOTATIONS_FILE);
    if !ann_path.is_file() {
        return Err(Error::load(&ann_path, "missing annotation manifest"));
    }

    let mut frames = Vec::new();
    let mut reader = csv::Reader::from_path(&frames_path).map_err(|e| Error::load(&frames_path, e.to_string()))?;
    for (i, row) in reader.deserialize::<FrameRow>().enumerate() {
        let row = row.map_err(|e| Error::load(&frames_path, format!("row {}: {e}", i + 1)))?;
        frames.push(FrameRecord {
            frame_id: row.frame_id,
            lap_id: row.lap_id,
            timestamp_us: row.timestamp_us,
            pose: Pose {
                x: row.x_m,
                y: row.y_m,
                heading: row.heading_rad,
            },
            image_ref: row.image_relpath,
        });
    }

    let known: std::collections::HashSet<u32> = frames.iter().map(|f| f.frame_id).collect();
    let mut annotations: BTreeMap<u32, Vec<BoundingBox>> = frames.iter().map(|f| (f.frame_id, Vec::new())).collect();
    for (i, (frame_id, b)) in annotation_rows(&ann_path)?.into_iter().enumerate() {
        if !known.contains(&frame_id) {
            return Err(Error::Integrity(format!(
                "{ANNOTATIONS_FILE} row {} references frame {frame_id}, which is not in {FRAMES_FILE}",
                i + 1,
            )));
        }
        annotations.get_mut(&frame_id).expect("known frame").push(b);
    }
    Ok((frames, annotations))
}

/// Loads and validates a dataset rooted at `root`.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let (frames, annotations) = load_manifests(root)?;
    let frame_images = frames
        .iter()
        .map(|f| read_image(root, &f.image_ref))
        .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset {
        frames,
        frame_images,
        annotations,
        negative_images: read_image_dir(root, NEGATIVES_DIR)?,
        positives: read_image_dir(root, POSITIVES_DIR)?,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_png(root: &Path, rel: &str, image: &RgbImage) -> Result<PathBuf> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image
        .save_with_format(&path, image::ImageFormat::Png)
        .map_err(|e| Error::load(&path, format!("cannot write PNG: {e}")))?;
    Ok(path)
}

/// Writes manifests and PNG images under `root`.
pub fn save_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    dataset.validate()?;
    write_file(&root.join(FRAMES_FILE), &frames_csv(&dataset.frames))?;
    write_file(&root.join(ANNOTATIONS_FILE), &annotations_csv(&dataset.annotations))?;
    for (f, img) in dataset.frames.iter().zip(&dataset.frame_images) {
        write_png(root, &f.image_ref, img)?;
    }
    for n in dataset.positives.iter().chain(&dataset.negative_images) {
        write_png(root, &n.path, &n.image)?;
    }
    Ok(())
}
