//! Versioned binary container for model banks.
//!
//! ```text
//! magic        8 bytes   "PFBANK\0\0"
//! version      u32 LE
//! checksum     32 bytes  SHA-256 of everything after header_len
//! header_len   u64 LE
//! header       JSON: config, map frames, per-entry metadata
//! payload      per entry: feature_dim weights then bias, f64 LE
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mining::HnmReport;
use crate::placebank::{BankConfig, BankEntry, FrameRecord, ModelBank};
use crate::svm::{LinearModel, TrainingMetadata};

pub const BANK_MAGIC: &[u8; 8] = b"PFBANK\0\0";
pub const BANK_FORMAT_VERSION: u32 = 1;

const PREFIX_LEN: usize = 8 + 4 + 32 + 8;

#[derive(Serialize, Deserialize)]
struct Header {
    config: BankConfig,
    map_frames: Vec<FrameRecord>,
    entries: Vec<EntryHeader>,
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    frame_id: u32,
    swathe: Vec<u32>,
    window: (usize, usize),
    shrink: usize,
    feature_dim: usize,
    training_metadata: TrainingMetadata,
    report: HnmReport,
}

/// Serialises a bank to bytes.
pub fn write_bank(bank: &ModelBank) -> Vec<u8> {
    let header = Header {
        config: bank.config.clone(),
        map_frames: bank.map_frames.clone(),
        entries: bank
            .entries
            .iter()
            .map(|e| EntryHeader {
                frame_id: e.frame_id,
                swathe: e.swathe.clone(),
                window: e.model.window,
                shrink: e.model.shrink,
                feature_dim: e.model.feature_dim(),
                training_metadata: e.model.metadata.clone(),
                report: e.report.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("bank header serialises");
    let mut body = Vec::with_capacity(8 + header.len());
    body.extend_from_slice(&(header.len() as u64).to_le_bytes());
    body.extend_from_slice(&header);
    for e in &bank.entries {
        for w in e.model.weights.iter().chain(std::iter::once(&e.model.bias)) {
            body.extend_from_slice(&w.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&body[8..]);

    let mut out = Vec::with_capacity(PREFIX_LEN - 8 + body.len());
    out.extend_from_slice(BANK_MAGIC);
    out.extend_from_slice(&BANK_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&digest);
    out.extend_from_slice(&body);
    out
}

/// Parses bytes produced by [`write_bank`]. The version is checked before
/// the checksum so that files from newer builds get a clear message.
pub fn read_bank(bytes: &[u8]) -> Result<ModelBank> {
    if bytes.len() < PREFIX_LEN || &bytes[..8] != BANK_MAGIC {
        return Err(Error::Integrity("not a model bank file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != BANK_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: BANK_FORMAT_VERSION,
        });
    }
    let recorded = &bytes[12..44];
    let actual = Sha256::digest(&bytes[PREFIX_LEN..]);
    if recorded != actual.as_slice() {
        return Err(Error::Checksum {
            expected: hex::encode(recorded),
            actual: hex::encode(actual),
        });
    }
    let header_len = u64::from_le_bytes(bytes[44..52].try_into().expect("8 bytes")) as usize;
    let header_end = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Integrity("bank header runs past end of file".into()))?;
    let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..header_end])
        .map_err(|e| Error::Integrity(format!("malformed bank header: {e}")))?;
    if header.entries.len() != header.map_frames.len() {
        return Err(Error::Integrity(format!(
            "{} entries for {} map frames",
            header.entries.len(),
            header.map_frames.len()
        )));
    }

    let mut payload = bytes[header_end..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let expected: usize = header.entries.iter().map(|e| e.feature_dim + 1).sum();
    if bytes.len() - header_end != expected * 8 {
        return Err(Error::Integrity(format!(
            "payload holds {} bytes, header describes {}",
            bytes.len() - header_end,
            expected * 8
        )));
    }
    let mut entries = Vec::with_capacity(header.entries.len());
    for e in header.entries {
        let weights: Vec<f64> = payload.by_ref().take(e.feature_dim).collect();
        let bias = payload.next().expect("length checked");
        let mut model = LinearModel::new(e.window, e.shrink, weights, bias)?;
        model.metadata = e.training_metadata;
        entries.push(BankEntry {
            frame_id: e.frame_id,
            model,
            swathe: e.swathe,
            report: e.report,
        });
    }
    Ok(ModelBank {
        config: header.config,
        map_frames: header.map_frames,
        entries,
    })
}

pub fn save_bank(bank: &ModelBank, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, write_bank(bank)).map_err(|e| Error::io(path, e))
}

pub fn load_bank(path: &Path) -> Result<ModelBank> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_bank(&bytes).map_err(|e| match e {
        Error::InvalidInput(m) | Error::Integrity(m) => Error::load(path, m),
        other => other,
    })
}

/// Hex SHA-256 of the serialised bank.
pub fn bank_checksum(bank: &ModelBank) -> String {
    hex::encode(Sha256::digest(write_bank(bank)))
}
