//! Middlebury .flo optical-flow rasters: the f32 magic 202021.25, i32
//! width and height, then row-major interleaved (u, v) f32 pairs, all
//! little-endian.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::motion::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;
const MAX_DIM: i32 = 1 << 16;

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let (h, w) = (flow.height(), flow.width());
    let mut bytes = Vec::with_capacity(12 + 8 * h * w);
    bytes.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    bytes.extend_from_slice(&(w as i32).to_le_bytes());
    bytes.extend_from_slice(&(h as i32).to_le_bytes());
    for row in 0..h {
        for col in 0..w {
            bytes.extend_from_slice(&flow.u()[[row, col]].to_le_bytes());
            bytes.extend_from_slice(&flow.v()[[row, col]].to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let bytes = fs::read(path)?;
    let fail = |offset: u64, message: String| Error::Format {
        path: path.display().to_string(),
        offset,
        message,
    };
    if bytes.len() < 4 {
        return Err(fail(bytes.len() as u64, "truncated before magic".into()));
    }
    let magic = LittleEndian::read_f32(&bytes[0..4]);
    if magic != FLO_MAGIC {
        return Err(fail(0, format!("bad magic {magic} (expected {FLO_MAGIC})")));
    }
    if bytes.len() < 12 {
        return Err(fail(bytes.len() as u64, "truncated inside header".into()));
    }
    let width = LittleEndian::read_i32(&bytes[4..8]);
    let height = LittleEndian::read_i32(&bytes[8..12]);
    if width <= 0 || width > MAX_DIM {
        return Err(fail(4, format!("width {width} outside 1..={MAX_DIM}")));
    }
    if height <= 0 || height > MAX_DIM {
        return Err(fail(8, format!("height {height} outside 1..={MAX_DIM}")));
    }
    let (h, w) = (height as usize, width as usize);
    let expected = 12 + 8 * h * w;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected) as u64,
            format!("expected {expected} bytes for {h}x{w}, found {}", bytes.len()),
        ));
    }
    let mut u = Array2::<f32>::zeros((h, w));
    let mut v = Array2::<f32>::zeros((h, w));
    let mut offset = 12;
    for row in 0..h {
        for col in 0..w {
            let uu = LittleEndian::read_f32(&bytes[offset..offset + 4]);
            let vv = LittleEndian::read_f32(&bytes[offset + 4..offset + 8]);
            if !uu.is_finite() || !vv.is_finite() {
                return Err(fail(offset as u64, "non-finite flow value".into()));
            }
            u[[row, col]] = uu;
            v[[row, col]] = vv;
            offset += 8;
        }
    }
    FlowField::new(u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_flow() -> FlowField {
        let mut u = Array2::<f32>::zeros((5, 7));
        let mut v = Array2::<f32>::zeros((5, 7));
        for r in 0..5 {
            for c in 0..7 {
                u[[r, c]] = (r as f32) * 0.5 - c as f32;
                v[[r, c]] = (c as f32) * 0.25 + 0.125;
            }
        }
        FlowField::new(u, v).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let flow = sample_flow();
        write_flo(&path, &flow).unwrap();
        let back = read_flo(&path).unwrap();
        assert_eq!(flow.u(), back.u());
        assert_eq!(flow.v(), back.v());
    }

    #[test]
    fn wrong_magic_is_rejected_at_offset_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        write_flo(&path, &sample_flow()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        match read_flo(&path).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn truncation_names_the_cut() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        write_flo(&path, &sample_flow()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..40]).unwrap();
        match read_flo(&path).unwrap_err() {
            Error::Format { offset, message, .. } => {
                assert_eq!(offset, 40);
                assert!(message.contains("expected"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
