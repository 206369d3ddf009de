//! Detection lists as CSV: `frame_id,x,y,w,h,score,level`, one row per
//! detection in the order written.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{BoundingBox, Detection};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameDetection {
    pub frame_id: u32,
    pub detection: Detection,
}

#[derive(Serialize, Deserialize)]
struct Row {
    frame_id: u32,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    score: f64,
    level: usize,
}

pub fn write_detections(detections: &[FrameDetection], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if detections.is_empty() {
        w.write_record(["frame_id", "x", "y", "w", "h", "score", "level"])
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    for d in detections {
        let b = d.detection.bbox;
        w.serialize(Row {
            frame_id: d.frame_id,
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
            score: d.detection.score,
            level: d.detection.level,
        })
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Reads a detection list; `path` names the source in errors.
pub fn read_detections(input: impl Read, path: &Path) -> Result<Vec<FrameDetection>> {
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize::<Row>()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(|e| Error::load(path, format!("row {}: {e}", i + 1)))?;
            if !row.score.is_finite() {
                return Err(Error::load(path, format!("row {}: non-finite score", i + 1)));
            }
            let bbox = BoundingBox::new(row.x, row.y, row.w, row.h)
                .map_err(|e| Error::load(path, format!("row {}: {e}", i + 1)))?;
            Ok(FrameDetection {
                frame_id: row.frame_id,
                detection: Detection {
                    bbox,
                    score: row.score,
                    level: row.level,
                },
            })
        })
        .collect()
}
