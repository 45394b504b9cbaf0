//! Flat binary persistence for trace sets.
//!
//! Layout: a fixed 64-byte header, then the trace matrix as 32-bit IEEE-754
//! little-endian row-major, then plaintexts, keys, and labels (one byte per
//! trace each), then mask bytes iff the `has_masks` flag is set.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "NASCTY01"
//! 8       2     format version (u16 LE)
//! 10      2     flags (bit 0 has_masks, bit 1 normalized)
//! 12      4     n_samples (u32 LE)
//! 16      8     n_traces (u64 LE)
//! 24      40    reserved, zero
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::trace_model::TraceSet;

pub const MAGIC: [u8; 8] = *b"NASCTY01";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 64;

const FLAG_HAS_MASKS: u16 = 1 << 0;
const FLAG_NORMALIZED: u16 = 1 << 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {found:02x?}, expected {MAGIC:02x?}")]
    BadMagic { found: [u8; 8] },
    #[error("unsupported trace file version {found}, this build reads version {FORMAT_VERSION}")]
    UnsupportedVersion { found: u16 },
    #[error("corrupt file: truncated in section `{section}` ({actual} bytes, need {expected})")]
    Truncated {
        section: &'static str,
        expected: u64,
        actual: u64,
    },
    #[error("size mismatch: header declares {expected} bytes, file has {actual}")]
    SizeMismatch { expected: u64, actual: u64 },
}

fn expected_file_len(n_traces: u64, n_samples: u64, has_masks: bool) -> u64 {
    HEADER_LEN as u64
        + 4 * n_traces * n_samples
        + 3 * n_traces
        + if has_masks { n_traces } else { 0 }
}

/// Writes `ts` to `path`. `write_traceset` then [`read_traceset`] round-trips
/// every persisted field bit-exactly.
pub fn write_traceset(ts: &TraceSet, path: &Path) -> Result<(), StoreError> {
    let mut w = BufWriter::new(File::create(path)?);

    let mut header = [0u8; HEADER_LEN];
    header[..8].copy_from_slice(&MAGIC);
    header[8..10].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    let mut flags = 0u16;
    if ts.masks().is_some() {
        flags |= FLAG_HAS_MASKS;
    }
    if ts.is_normalized() {
        flags |= FLAG_NORMALIZED;
    }
    header[10..12].copy_from_slice(&flags.to_le_bytes());
    header[12..16].copy_from_slice(&(ts.n_samples() as u32).to_le_bytes());
    header[16..24].copy_from_slice(&(ts.n_traces() as u64).to_le_bytes());
    w.write_all(&header)?;

    let mut buf = Vec::with_capacity(ts.samples().len() * 4);
    for &v in ts.samples() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.write_all(ts.plaintexts())?;
    w.write_all(ts.keys())?;
    w.write_all(ts.labels())?;
    if let Some(masks) = ts.masks() {
        w.write_all(masks)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace set written by [`write_traceset`], validating magic,
/// version, and size arithmetic before allocating the payload.
pub fn read_traceset(path: &Path) -> Result<TraceSet, StoreError> {
    let file = File::open(path)?;
    let actual_len = file.metadata()?.len();
    let mut r = BufReader::new(file);

    if actual_len < HEADER_LEN as u64 {
        return Err(StoreError::Truncated {
            section: "header",
            expected: HEADER_LEN as u64,
            actual: actual_len,
        });
    }
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;

    if header[..8] != MAGIC {
        let mut found = [0u8; 8];
        found.copy_from_slice(&header[..8]);
        return Err(StoreError::BadMagic { found });
    }
    let version = u16::from_le_bytes([header[8], header[9]]);
    if version != FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion { found: version });
    }
    let flags = u16::from_le_bytes([header[10], header[11]]);
    let n_samples = u32::from_le_bytes(header[12..16].try_into().unwrap()) as u64;
    let n_traces = u64::from_le_bytes(header[16..24].try_into().unwrap());
    let has_masks = flags & FLAG_HAS_MASKS != 0;
    let normalized = flags & FLAG_NORMALIZED != 0;

    let expected = expected_file_len(n_traces, n_samples, has_masks);
    if actual_len < expected {
        // Name the first section the file runs out in.
        let mut end = HEADER_LEN as u64 + 4 * n_traces * n_samples;
        let mut sections: Vec<(&'static str, u64)> = vec![("traces", end)];
        for name in ["plaintexts", "keys", "labels"] {
            end += n_traces;
            sections.push((name, end));
        }
        if has_masks {
            end += n_traces;
            sections.push(("masks", end));
        }
        let section = sections
            .iter()
            .find(|(_, e)| actual_len < *e)
            .map(|(s, _)| *s)
            .unwrap_or("payload");
        return Err(StoreError::Truncated {
            section,
            expected,
            actual: actual_len,
        });
    }
    if actual_len > expected {
        return Err(StoreError::SizeMismatch {
            expected,
            actual: actual_len,
        });
    }

    let n_traces = n_traces as usize;
    let n_samples = n_samples as usize;
    let mut trace_bytes = vec![0u8; n_traces * n_samples * 4];
    r.read_exact(&mut trace_bytes)?;
    let traces: Vec<f32> = trace_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut plaintexts = vec![0u8; n_traces];
    r.read_exact(&mut plaintexts)?;
    let mut keys = vec![0u8; n_traces];
    r.read_exact(&mut keys)?;
    let mut labels = vec![0u8; n_traces];
    r.read_exact(&mut labels)?;
    let masks = if has_masks {
        let mut m = vec![0u8; n_traces];
        r.read_exact(&mut m)?;
        Some(m)
    } else {
        None
    };

    Ok(TraceSet::from_parts(
        n_samples, traces, plaintexts, keys, masks, labels, normalized,
    ))
}
