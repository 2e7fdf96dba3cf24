//! Motion file formats.
//!
//! Binary `.kmbin`: one JSON header line (`joints`, `frames`, `dim`,
//! `frame_rate`) terminated by `\n`, followed by exactly
//! `frames * dim` little-endian `f32` values, row-major. JSON `.json`:
//! the same metadata with frames as nested arrays, for hand-editable
//! fixtures.

use super::{FrameLayout, MotionSequence};
use crate::error::{Error, Result};
use crate::real::Real;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BinHeader {
    joints: usize,
    frames: usize,
    dim: usize,
    frame_rate: f64,
}

/// Write a sequence as `.kmbin`. Values are narrowed to `f32`; a sequence
/// whose values are `f32`-representable round-trips bit for bit.
pub fn save_motion<T: Real>(seq: &MotionSequence<T>, path: &Path) -> Result<()> {
    let header = BinHeader {
        joints: seq.joints(),
        frames: seq.len(),
        dim: seq.dim(),
        frame_rate: seq.frame_rate,
    };
    let mut file = fs::File::create(path)?;
    serde_json::to_writer(&mut file, &header)?;
    file.write_all(b"\n")?;
    let mut payload = Vec::with_capacity(seq.frames_flat().len() * 4);
    for &v in seq.frames_flat() {
        payload.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    file.write_all(&payload)?;
    Ok(())
}

/// Read a `.kmbin` file, validating the header against the layout formula
/// and the payload length against the declared shape.
pub fn load_motion<T: Real>(path: &Path) -> Result<MotionSequence<T>> {
    let file = fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut header_line = String::new();
    reader.read_line(&mut header_line)?;
    if !header_line.ends_with('\n') {
        return Err(Error::malformed_header(path, "missing newline after JSON header"));
    }
    let header: BinHeader = serde_json::from_str(header_line.trim_end())
        .map_err(|e| Error::malformed_header(path, format!("invalid JSON header: {e}")))?;
    if header.joints < 2 {
        return Err(Error::malformed_header(path, format!("joints = {} < 2", header.joints)));
    }
    let expected_dim = FrameLayout::new(header.joints).dim();
    if header.dim != expected_dim {
        return Err(Error::dim(
            format!("header dim for J={}", header.joints),
            expected_dim,
            header.dim,
        ));
    }
    let want = header.frames * header.dim * 4;
    let mut payload = Vec::with_capacity(want);
    reader.read_to_end(&mut payload)?;
    if payload.len() < want {
        return Err(Error::truncated(path, want, payload.len()));
    }
    if payload.len() > want {
        return Err(Error::malformed_header(
            path,
            format!("payload has {} trailing bytes", payload.len() - want),
        ));
    }
    let values: Vec<T> = payload
        .chunks_exact(4)
        .map(|b| T::c(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect();
    MotionSequence::new(values, header.frames, header.joints, header.frame_rate)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonMotion {
    joints: usize,
    frame_rate: f64,
    frames: Vec<Vec<f64>>,
}

/// Write a sequence as pretty-printed JSON (fixture format).
pub fn save_motion_json<T: Real>(seq: &MotionSequence<T>, path: &Path) -> Result<()> {
    let doc = JsonMotion {
        joints: seq.joints(),
        frame_rate: seq.frame_rate,
        frames: seq.rows().map(|r| r.iter().map(|v| v.f64()).collect()).collect(),
    };
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, &doc)?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Read the JSON fixture format, validating row widths.
pub fn load_motion_json<T: Real>(path: &Path) -> Result<MotionSequence<T>> {
    let text = fs::read_to_string(path)?;
    let doc: JsonMotion = serde_json::from_str(&text)
        .map_err(|e| Error::malformed_header(path, format!("invalid motion JSON: {e}")))?;
    if doc.joints < 2 {
        return Err(Error::malformed_header(path, format!("joints = {} < 2", doc.joints)));
    }
    let d = FrameLayout::new(doc.joints).dim();
    for (k, row) in doc.frames.iter().enumerate() {
        if row.len() != d {
            return Err(Error::dim(format!("frame {k}"), d, row.len()));
        }
    }
    let n = doc.frames.len();
    let flat: Vec<T> = doc.frames.iter().flatten().map(|&v| T::c(v)).collect();
    MotionSequence::new(flat, n, doc.joints, doc.frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_sequence() -> MotionSequence<f64> {
        let d = FrameLayout::new(5).dim();
        let vals: Vec<f64> = (0..3 * d).map(|i| (i as f64 * 0.125) - 7.5).collect();
        MotionSequence::new(vals, 3, 5, 20.0).unwrap()
    }

    #[test]
    fn kmbin_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.kmbin");
        let seq = sample_sequence().quantize_f32();
        save_motion(&seq, &path).unwrap();
        let back: MotionSequence<f64> = load_motion(&path).unwrap();
        assert_eq!(back.frames_flat(), seq.frames_flat());
        assert_eq!(back.len(), 3);
        assert_eq!(back.joints(), 5);
        assert_eq!(back.frame_rate, 20.0);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let seq = sample_sequence();
        save_motion_json(&seq, &path).unwrap();
        let back: MotionSequence<f64> = load_motion_json(&path).unwrap();
        assert_eq!(back.frames_flat(), seq.frames_flat());
    }

    #[test]
    fn truncated_payload_reports_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.kmbin");
        let seq = sample_sequence();
        save_motion(&seq, &path).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 10]).unwrap();
        let err = load_motion::<f64>(&path).unwrap_err();
        assert!(matches!(err, Error::TruncatedPayload { .. }), "{err}");
    }

    #[test]
    fn missing_header_newline_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.kmbin");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(br#"{"joints":5,"frames":1,"dim":59,"frame_rate":20.0}"#).unwrap();
        drop(f);
        assert!(matches!(load_motion::<f64>(&path).unwrap_err(), Error::MalformedHeader { .. }));
    }

    #[test]
    fn header_dim_must_match_layout_formula() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wrongdim.kmbin");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(b"{\"joints\":5,\"frames\":1,\"dim\":46,\"frame_rate\":20.0}\n").unwrap();
        f.write_all(&vec![0u8; 46 * 4]).unwrap();
        drop(f);
        let err = load_motion::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("59"), "{err}");
    }

    #[test]
    fn garbage_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("garbage.kmbin");
        fs::write(&path, b"not json at all\n\x00\x01").unwrap();
        assert!(matches!(load_motion::<f64>(&path).unwrap_err(), Error::MalformedHeader { .. }));
    }
}
