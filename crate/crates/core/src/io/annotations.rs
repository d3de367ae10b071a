//! Ground-truth annotation tables.

use std::fs;
use std::path::Path;

use crate::error::{Error, LineIssue, Result};
use crate::evaluation::GroundTruthAnnotation;
use crate::io::json::format_real;
use crate::types::BoundingBox;

const FIELDS: usize = 7;

pub fn write_annotations(path: &Path, annotations: &[GroundTruthAnnotation]) -> Result<()> {
    let mut out = String::new();
    for (i, a) in annotations.iter().enumerate() {
        if a.video_id.is_empty() || a.video_id.contains('\t') || a.video_id.contains('\n') {
            return Err(Error::invalid_argument(format!(
                "annotation {i}: video_id must be non-empty without tabs or newlines"
            )));
        }
        if !a.bbox.is_valid() {
            return Err(Error::invalid_argument(format!(
                "annotation {i}: degenerate box"
            )));
        }
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            a.video_id,
            a.frame,
            format_real(a.bbox.x1),
            format_real(a.bbox.y1),
            format_real(a.bbox.x2),
            format_real(a.bbox.y2),
            a.track_id,
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_annotations(path: &Path) -> Result<Vec<GroundTruthAnnotation>> {
    let data = fs::read_to_string(path)?;
    let mut annotations = Vec::new();
    let mut issues = Vec::new();
    for (idx, line) in data.lines().enumerate() {
        match parse_line(line) {
            Ok(a) => annotations.push(a),
            Err(message) => issues.push(LineIssue {
                line: idx + 1,
                message,
            }),
        }
    }
    if issues.is_empty() {
        Ok(annotations)
    } else {
        Err(Error::Validation {
            path: path.display().to_string(),
            issues,
        })
    }
}

fn parse_line(line: &str) -> std::result::Result<GroundTruthAnnotation, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != FIELDS {
        return Err(format!(
            "expected {FIELDS} tab-separated fields, found {}",
            fields.len()
        ));
    }
    let real = |s: &str, what: &str| -> std::result::Result<f64, String> {
        let v = s
            .parse::<f64>()
            .map_err(|_| format!("{what} must be a real, found {s:?}"))?;
        if !v.is_finite() {
            return Err(format!("{what} must be finite"));
        }
        Ok(v)
    };
    if fields[0].is_empty() {
        return Err("video_id must be non-empty".into());
    }
    let bbox = BoundingBox::new(
        real(fields[2], "x1")?,
        real(fields[3], "y1")?,
        real(fields[4], "x2")?,
        real(fields[5], "y2")?,
    );
    if !bbox.is_valid() {
        return Err("degenerate box (need x1 < x2, y1 < y2)".into());
    }
    Ok(GroundTruthAnnotation {
        video_id: fields[0].to_string(),
        frame: fields[1]
            .parse::<u64>()
            .map_err(|_| format!("frame must be an unsigned integer, found {:?}", fields[1]))?,
        bbox,
        track_id: fields[6]
            .parse::<u64>()
            .map_err(|_| format!("track_id must be an unsigned integer, found {:?}", fields[6]))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.tsv");
        let anns = vec![
            GroundTruthAnnotation {
                video_id: "v1".into(),
                frame: 3,
                bbox: BoundingBox::new(0.25, 1.5, 10.75, 20.5),
                track_id: 7,
            },
            GroundTruthAnnotation {
                video_id: "v2".into(),
                frame: 0,
                bbox: BoundingBox::new(-1.0, -2.0, 3.0, 4.0),
                track_id: 0,
            },
        ];
        write_annotations(&path, &anns).unwrap();
        assert_eq!(read_annotations(&path).unwrap(), anns);
    }

    #[test]
    fn bad_lines_are_all_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.tsv");
        let text = "v\t0\t0.0e0\t0.0e0\t5.0e0\t5.0e0\t1\n\
                    v\t0\t5.0e0\t0.0e0\t5.0e0\t5.0e0\t1\n\
                    v\tx\t0.0e0\t0.0e0\t5.0e0\t5.0e0\t1\n";
        std::fs::write(&path, text).unwrap();
        let err = read_annotations(&path).unwrap_err();
        match err {
            Error::Validation { issues, .. } => {
                assert_eq!(
                    issues.iter().map(|i| i.line).collect::<Vec<_>>(),
                    vec![2, 3]
                );
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
