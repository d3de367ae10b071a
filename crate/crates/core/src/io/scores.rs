//! Score tables: per-frame series and per-tracklet box scores as TSV.
//!
//! Frame rows are dense: one row per frame per video, frames starting at
//! 0 and consecutive, so a video's frame count is its row count.
//! Tracklet rows carry one box per covered frame with the window's NLL
//! repeated, which is exactly what the detection criteria consume.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, LineIssue, Result};
use crate::io::json::format_real;
use crate::scoring::{FrameScoreSeries, TrackletScore};
use crate::types::BoundingBox;

const FRAME_FIELDS: usize = 4;
const TRACKLET_FIELDS: usize = 10;

/// One frame of one video: raw and smoothed anomaly score.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScoreRow {
    pub video_id: String,
    pub frame: u64,
    pub raw: f64,
    pub smoothed: f64,
}

/// One covered frame of one scored tracklet.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletScoreRow {
    pub video_id: String,
    pub track_id: u64,
    pub start_frame: u64,
    pub frame: u64,
    pub region: u32,
    pub nll: f64,
    pub bbox: BoundingBox,
}

/// Zip a raw and a smoothed series of the same video into rows.
pub fn frame_score_rows(
    raw: &FrameScoreSeries,
    smoothed: &FrameScoreSeries,
) -> Result<Vec<FrameScoreRow>> {
    if raw.video_id != smoothed.video_id {
        return Err(Error::invalid_argument(format!(
            "raw series is video {:?}, smoothed is {:?}",
            raw.video_id, smoothed.video_id
        )));
    }
    if raw.scores.len() != smoothed.scores.len() {
        return Err(Error::invalid_argument(format!(
            "raw series has {} frames, smoothed has {}",
            raw.scores.len(),
            smoothed.scores.len()
        )));
    }
    Ok(raw
        .scores
        .iter()
        .zip(&smoothed.scores)
        .enumerate()
        .map(|(frame, (&r, &s))| FrameScoreRow {
            video_id: raw.video_id.clone(),
            frame: frame as u64,
            raw: r,
            smoothed: s,
        })
        .collect())
}

/// Flatten tracklet scores to one row per covered frame.
pub fn expand_tracklet_scores(scores: &[TrackletScore]) -> Vec<TrackletScoreRow> {
    let mut rows = Vec::new();
    for s in scores {
        for (offset, bbox) in s.boxes.iter().enumerate() {
            rows.push(TrackletScoreRow {
                video_id: s.video_id.clone(),
                track_id: s.track_id,
                start_frame: s.start_frame,
                frame: s.start_frame + offset as u64,
                region: s.region,
                nll: s.nll,
                bbox: *bbox,
            });
        }
    }
    rows
}

pub fn write_frame_scores(path: &Path, rows: &[FrameScoreRow]) -> Result<()> {
    validate_frame_rows(rows).map_err(|issues| Error::Validation {
        path: path.display().to_string(),
        issues,
    })?;
    let mut out = String::new();
    for row in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            row.video_id,
            row.frame,
            format_real(row.raw),
            format_real(row.smoothed)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_frame_scores(path: &Path) -> Result<Vec<FrameScoreRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut issues = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != FRAME_FIELDS {
            issues.push(LineIssue {
                line: line_no,
                message: format!("expected {FRAME_FIELDS} fields, found {}", fields.len()),
            });
            continue;
        }
        let mut ok = true;
        let frame = parse_u64(fields[1], "frame", line_no, &mut issues, &mut ok);
        let raw = parse_real(fields[2], "raw score", line_no, &mut issues, &mut ok);
        let smoothed = parse_real(fields[3], "smoothed score", line_no, &mut issues, &mut ok);
        if !valid_video_id(fields[0]) {
            issues.push(LineIssue {
                line: line_no,
                message: "empty or whitespace video_id".into(),
            });
            ok = false;
        }
        if ok {
            rows.push(FrameScoreRow {
                video_id: fields[0].to_string(),
                frame,
                raw,
                smoothed,
            });
        }
    }
    if issues.is_empty() {
        if let Err(mut invariant_issues) = validate_frame_rows(&rows) {
            issues.append(&mut invariant_issues);
        }
    }
    if issues.is_empty() {
        Ok(rows)
    } else {
        Err(Error::Validation {
            path: path.display().to_string(),
            issues,
        })
    }
}

pub fn write_tracklet_scores(path: &Path, rows: &[TrackletScoreRow]) -> Result<()> {
    validate_tracklet_rows(rows).map_err(|issues| Error::Validation {
        path: path.display().to_string(),
        issues,
    })?;
    let mut out = String::new();
    for row in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.video_id,
            row.track_id,
            row.start_frame,
            row.frame,
            row.region,
            format_real(row.nll),
            format_real(row.bbox.x1),
            format_real(row.bbox.y1),
            format_real(row.bbox.x2),
            format_real(row.bbox.y2)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_tracklet_scores(path: &Path) -> Result<Vec<TrackletScoreRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut issues = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != TRACKLET_FIELDS {
            issues.push(LineIssue {
                line: line_no,
                message: format!("expected {TRACKLET_FIELDS} fields, found {}", fields.len()),
            });
            continue;
        }
        let mut ok = true;
        let track_id = parse_u64(fields[1], "track_id", line_no, &mut issues, &mut ok);
        let start_frame = parse_u64(fields[2], "start_frame", line_no, &mut issues, &mut ok);
        let frame = parse_u64(fields[3], "frame", line_no, &mut issues, &mut ok);
        let region = parse_u64(fields[4], "region", line_no, &mut issues, &mut ok);
        let nll = parse_real(fields[5], "nll", line_no, &mut issues, &mut ok);
        let x1 = parse_real(fields[6], "x1", line_no, &mut issues, &mut ok);
        let y1 = parse_real(fields[7], "y1", line_no, &mut issues, &mut ok);
        let x2 = parse_real(fields[8], "x2", line_no, &mut issues, &mut ok);
        let y2 = parse_real(fields[9], "y2", line_no, &mut issues, &mut ok);
        if !valid_video_id(fields[0]) {
            issues.push(LineIssue {
                line: line_no,
                message: "empty or whitespace video_id".into(),
            });
            ok = false;
        }
        if region > u32::MAX as u64 {
            issues.push(LineIssue {
                line: line_no,
                message: format!("region {region} exceeds u32"),
            });
            ok = false;
        }
        if ok {
            let bbox = BoundingBox::new(x1, y1, x2, y2);
            if !bbox.is_valid() {
                issues.push(LineIssue {
                    line: line_no,
                    message: format!("invalid bounding box {x1} {y1} {x2} {y2}"),
                });
                continue;
            }
            rows.push(TrackletScoreRow {
                video_id: fields[0].to_string(),
                track_id,
                start_frame,
                frame,
                region: region as u32,
                nll,
                bbox,
            });
        }
    }
    if issues.is_empty() {
        if let Err(mut invariant_issues) = validate_tracklet_rows(&rows) {
            issues.append(&mut invariant_issues);
        }
    }
    if issues.is_empty() {
        Ok(rows)
    } else {
        Err(Error::Validation {
            path: path.display().to_string(),
            issues,
        })
    }
}

fn valid_video_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().all(char::is_whitespace)
}

fn parse_u64(
    field: &str,
    name: &str,
    line: usize,
    issues: &mut Vec<LineIssue>,
    ok: &mut bool,
) -> u64 {
    match field.parse::<u64>() {
        Ok(v) => v,
        Err(_) => {
            issues.push(LineIssue {
                line,
                message: format!("bad {name} {field:?}"),
            });
            *ok = false;
            0
        }
    }
}

fn parse_real(
    field: &str,
    name: &str,
    line: usize,
    issues: &mut Vec<LineIssue>,
    ok: &mut bool,
) -> f64 {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => v,
        _ => {
            issues.push(LineIssue {
                line,
                message: format!("bad {name} {field:?}"),
            });
            *ok = false;
            0.0
        }
    }
}

/// Frame rows must form dense per-video series: each video's rows are
/// contiguous in the file, start at frame 0, and advance by one.
fn validate_frame_rows(rows: &[FrameScoreRow]) -> std::result::Result<(), Vec<LineIssue>> {
    let mut issues = Vec::new();
    let mut current: Option<(&str, u64)> = None;
    let mut finished: Vec<&str> = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let line = i + 1;
        if !row.raw.is_finite() || !row.smoothed.is_finite() {
            issues.push(LineIssue {
                line,
                message: "non-finite score".into(),
            });
        }
        match current {
            Some((vid, next)) if vid == row.video_id => {
                if row.frame != next {
                    issues.push(LineIssue {
                        line,
                        message: format!("expected frame {next}, found {}", row.frame),
                    });
                }
                current = Some((vid, row.frame + 1));
            }
            other => {
                if let Some((vid, _)) = other {
                    finished.push(vid);
                }
                if finished.contains(&row.video_id.as_str()) {
                    issues.push(LineIssue {
                        line,
                        message: format!("video {:?} rows are not contiguous", row.video_id),
                    });
                }
                if row.frame != 0 {
                    issues.push(LineIssue {
                        line,
                        message: format!("video {:?} must start at frame 0", row.video_id),
                    });
                }
                current = Some((&row.video_id, row.frame + 1));
            }
        }
    }
    if issues.is_empty() { Ok(()) } else { Err(issues) }
}

/// Tracklet rows of one (video, track, start) window must be consecutive
/// frames with one shared NLL and region.
fn validate_tracklet_rows(rows: &[TrackletScoreRow]) -> std::result::Result<(), Vec<LineIssue>> {
    let mut issues = Vec::new();
    let mut windows: HashMap<(&str, u64, u64), (u64, u64, u32)> = HashMap::new();
    for (i, row) in rows.iter().enumerate() {
        let line = i + 1;
        if !row.nll.is_finite() {
            issues.push(LineIssue {
                line,
                message: "non-finite nll".into(),
            });
        }
        if !row.bbox.is_valid() {
            issues.push(LineIssue {
                line,
                message: "invalid bounding box".into(),
            });
        }
        if row.frame < row.start_frame {
            issues.push(LineIssue {
                line,
                message: format!("frame {} before start_frame {}", row.frame, row.start_frame),
            });
        }
        let key = (row.video_id.as_str(), row.track_id, row.start_frame);
        match windows.get_mut(&key) {
            None => {
                if row.frame != row.start_frame {
                    issues.push(LineIssue {
                        line,
                        message: format!(
                            "window must open at frame {}, found {}",
                            row.start_frame, row.frame
                        ),
                    });
                }
                windows.insert(key, (row.frame + 1, row.nll.to_bits(), row.region));
            }
            Some((next, nll_bits, region)) => {
                if row.frame != *next {
                    issues.push(LineIssue {
                        line,
                        message: format!("expected frame {next}, found {}", row.frame),
                    });
                }
                if row.nll.to_bits() != *nll_bits {
                    issues.push(LineIssue {
                        line,
                        message: "nll differs within one window".into(),
                    });
                }
                if row.region != *region {
                    issues.push(LineIssue {
                        line,
                        message: "region differs within one window".into(),
                    });
                }
                *next = row.frame + 1;
            }
        }
    }
    if issues.is_empty() { Ok(()) } else { Err(issues) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_series() -> FrameScoreSeries {
        FrameScoreSeries {
            video_id: "cam0".into(),
            scores: vec![0.5, 1.0 / 3.0, 7.25],
            floor: 0.5,
            smoothing_sigma: 0.0,
        }
    }

    #[test]
    fn frame_scores_round_trip_exact() {
        let raw = raw_series();
        let smoothed = FrameScoreSeries {
            scores: vec![0.51, 0.4, 6.9],
            smoothing_sigma: 7.0,
            ..raw.clone()
        };
        let rows = frame_score_rows(&raw, &smoothed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.tsv");
        write_frame_scores(&path, &rows).unwrap();
        let back = read_frame_scores(&path).unwrap();
        assert_eq!(rows.len(), back.len());
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.video_id, b.video_id);
            assert_eq!(a.frame, b.frame);
            assert_eq!(a.raw.to_bits(), b.raw.to_bits());
            assert_eq!(a.smoothed.to_bits(), b.smoothed.to_bits());
        }
        // Rewriting what we read reproduces the bytes.
        let first = fs::read(&path).unwrap();
        let again = dir.path().join("frames2.tsv");
        write_frame_scores(&again, &back).unwrap();
        assert_eq!(first, fs::read(&again).unwrap());
    }

    #[test]
    fn frame_rows_must_be_dense() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.tsv");
        fs::write(&path, "v\t0\t1e0\t1e0\nv\t2\t1e0\t1e0\n").unwrap();
        let err = read_frame_scores(&path).unwrap_err();
        match err {
            Error::Validation { issues, .. } => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frame_rows_reject_interleaved_videos() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.tsv");
        fs::write(
            &path,
            "a\t0\t1e0\t1e0\nb\t0\t1e0\t1e0\na\t1\t1e0\t1e0\n",
        )
        .unwrap();
        let err = read_frame_scores(&path).unwrap_err();
        match err {
            Error::Validation { issues, .. } => {
                assert!(issues.iter().any(|i| i.line == 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn score_fixture() -> Vec<TrackletScore> {
        vec![
            TrackletScore {
                video_id: "cam0".into(),
                track_id: 4,
                start_frame: 10,
                region: 2,
                nll: 3.5,
                boxes: vec![
                    BoundingBox::new(0.0, 0.0, 4.0, 4.0),
                    BoundingBox::new(1.0, 0.0, 5.0, 4.0),
                    BoundingBox::new(2.0, 0.5, 6.0, 4.5),
                ],
            },
            TrackletScore {
                video_id: "cam1".into(),
                track_id: 0,
                start_frame: 0,
                region: 0,
                nll: 0.125,
                boxes: vec![BoundingBox::new(9.0, 9.0, 12.0, 13.0)],
            },
        ]
    }

    #[test]
    fn tracklet_scores_round_trip_exact() {
        let rows = expand_tracklet_scores(&score_fixture());
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2].frame, 12);
        assert_eq!(rows[2].nll, 3.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracklets.tsv");
        write_tracklet_scores(&path, &rows).unwrap();
        let back = read_tracklet_scores(&path).unwrap();
        assert_eq!(rows, back);
    }

    #[test]
    fn tracklet_rows_report_all_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracklets.tsv");
        let good = "v\t1\t0\t0\t0\t1e0\t0e0\t0e0\t4e0\t4e0";
        let bad_nll = "v\t1\t0\t1\t0\tnope\t0e0\t0e0\t4e0\t4e0";
        let bad_fields = "v\t1\t0";
        fs::write(&path, format!("{good}\n{bad_nll}\n{bad_fields}\n")).unwrap();
        let err = read_tracklet_scores(&path).unwrap_err();
        match err {
            Error::Validation { issues, .. } => {
                let lines: Vec<usize> = issues.iter().map(|i| i.line).collect();
                assert_eq!(lines, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tracklet_rows_require_shared_window_nll() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracklets.tsv");
        let a = "v\t1\t5\t5\t0\t1e0\t0e0\t0e0\t4e0\t4e0";
        let b = "v\t1\t5\t6\t0\t2e0\t0e0\t0e0\t4e0\t4e0";
        fs::write(&path, format!("{a}\n{b}\n")).unwrap();
        let err = read_tracklet_scores(&path).unwrap_err();
        match err {
            Error::Validation { issues, .. } => {
                assert!(issues.iter().any(|i| i.message.contains("nll differs")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
