//! Deterministic JSON: compact, stable field order (struct order), and
//! every real printed with 17 significant digits so values round-trip
//! bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

/// 17 significant digits: enough to reconstruct any f64 exactly.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{:.16e}", value as f64)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Internal(format!("serialization failed: {e}")))?;
    String::from_utf8(buf).map_err(|e| Error::Internal(format!("non-UTF-8 JSON: {e}")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_json_string(value)?;
    text.push('\n');
    let mut file = fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let data = fs::read_to_string(path)?;
    serde_json::from_str(&data).map_err(|e| Error::Format {
        path: path.display().to_string(),
        offset: byte_offset(&data, e.line(), e.column()),
        message: e.to_string(),
    })
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(data: &str, line: usize, column: usize) -> u64 {
    if line == 0 {
        return 0;
    }
    let mut offset = 0usize;
    for (i, l) in data.split('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(data.len()) as u64;
        }
        offset += l.len() + 1;
    }
    data.len() as u64
}

#[cfg(test)]
mod tests {
    use serde::Deserialize;

    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Doc {
        name: String,
        values: Vec<f64>,
        count: u64,
    }

    #[test]
    fn reals_round_trip_exactly() {
        let doc = Doc {
            name: "t".into(),
            values: vec![0.1, -0.0, 1.0 / 3.0, 2.0_f64.powi(-40), 1e300, -7.25],
            count: 3,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("doc.json");
        write_json(&path, &doc).unwrap();
        let back: Doc = read_json(&path).unwrap();
        for (a, b) in doc.values.iter().zip(&back.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(doc, back);
    }

    #[test]
    fn serialization_is_byte_deterministic() {
        let doc = Doc {
            name: "x".into(),
            values: vec![std::f64::consts::PI; 4],
            count: 9,
        };
        assert_eq!(to_json_string(&doc).unwrap(), to_json_string(&doc).unwrap());
        assert!(to_json_string(&doc).unwrap().contains("3.1415926535897931e0"));
    }

    #[test]
    fn parse_error_names_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"name\":\"x\",\"values\":[1.0,oops],\"count\":1}").unwrap();
        let err = read_json::<Doc>(&path).unwrap_err();
        match err {
            Error::Format { offset, .. } => {
                // The bad token starts at byte 26.
                assert!((25..=27).contains(&offset), "offset {offset}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn format_real_is_17_significant_digits() {
        assert_eq!(format_real(0.1), "1.0000000000000001e-1");
        assert_eq!(format_real(1.0), "1.0000000000000000e0");
        let v = 0.1f64;
        assert_eq!(format_real(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }
}
