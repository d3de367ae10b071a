//! Line-delimited tracklet records and their grouping into fixed-length
//! tracklet windows.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, LineIssue, Result};
use crate::io::json::format_real;
use crate::motion::{
    DEFAULT_STATIONARY_RATIO, FlowHistogram, MotionAttribute, dominant_motion, orientation_bin_of,
};
use crate::normalcy::Tracklet;
use crate::types::{BoundingBox, Category, TrackletObservation};

/// One serialized per-frame detection. Orientation and speed are null
/// only for stationary objects or when motion is to be derived from flow
/// rasters downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletRecord {
    pub video_id: String,
    pub track_id: u64,
    pub frame: u64,
    pub bbox: BoundingBox,
    pub category: Category,
    pub orientation: Option<f64>,
    pub speed: Option<f64>,
    pub stationary: bool,
}

const FIELDS: usize = 11;

impl TrackletRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.video_id.is_empty()
            || self.video_id.contains('\t')
            || self.video_id.contains('\n')
        {
            return Err("video_id must be non-empty without tabs or newlines".into());
        }
        if !self.bbox.is_valid() {
            return Err(format!(
                "box [{}, {}, {}, {}] is degenerate (need x1 < x2, y1 < y2)",
                self.bbox.x1, self.bbox.y1, self.bbox.x2, self.bbox.y2
            ));
        }
        match (self.orientation, self.speed, self.stationary) {
            (Some(_), Some(_), true) | (Some(_), None, _) | (None, Some(_), _) => {
                Err("orientation and speed must both be set (moving) or both null".into())
            }
            (Some(o), Some(s), false) => MotionAttribute::moving(o, s)
                .validate()
                .map_err(|e| e.to_string()),
            (None, None, _) => Ok(()),
        }
    }
}

/// Canonical record for an observation: stationary rows carry nulls.
pub fn record_from_observation(obs: &TrackletObservation) -> TrackletRecord {
    let (orientation, speed) = if obs.motion.stationary {
        (None, None)
    } else {
        (Some(obs.motion.orientation), Some(obs.motion.speed))
    };
    TrackletRecord {
        video_id: obs.video_id.clone(),
        track_id: obs.track_id,
        frame: obs.frame,
        bbox: obs.bbox,
        category: obs.category,
        orientation,
        speed,
        stationary: obs.motion.stationary,
    }
}

/// Records -> observations; fails on records whose motion was deferred
/// to flow rasters.
pub fn observations_from_records(records: &[TrackletRecord]) -> Result<Vec<TrackletObservation>> {
    records
        .iter()
        .map(|r| {
            let motion = match (r.orientation, r.speed, r.stationary) {
                (_, _, true) => MotionAttribute::stationary(),
                (Some(o), Some(s), false) => MotionAttribute::moving(o, s),
                _ => {
                    return Err(Error::invalid_argument(format!(
                        "track {} frame {}: motion is null and no flow rasters were supplied",
                        r.track_id, r.frame
                    )));
                }
            };
            Ok(TrackletObservation {
                video_id: r.video_id.clone(),
                track_id: r.track_id,
                frame: r.frame,
                bbox: r.bbox,
                category: r.category,
                motion,
            })
        })
        .collect()
}

fn opt_real(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_else(|| "null".into())
}

pub fn write_tracklet_records(path: &Path, records: &[TrackletRecord]) -> Result<()> {
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        r.validate()
            .map_err(|m| Error::invalid_argument(format!("record {i}: {m}")))?;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.video_id,
            r.track_id,
            r.frame,
            format_real(r.bbox.x1),
            format_real(r.bbox.y1),
            format_real(r.bbox.x2),
            format_real(r.bbox.y2),
            r.category.as_str(),
            opt_real(r.orientation),
            opt_real(r.speed),
            r.stationary,
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse and validate every line; all offending lines are reported
/// together.
pub fn read_tracklet_records(path: &Path) -> Result<Vec<TrackletRecord>> {
    let data = fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut issues = Vec::new();
    // (video, track) -> (last frame, category) for monotonicity checks.
    let mut last_seen: HashMap<(String, u64), (u64, Category)> = HashMap::new();
    for (idx, line) in data.lines().enumerate() {
        let lineno = idx + 1;
        match parse_line(line) {
            Ok(record) => {
                let key = (record.video_id.clone(), record.track_id);
                if let Some(&(prev_frame, prev_cat)) = last_seen.get(&key) {
                    if record.frame <= prev_frame {
                        issues.push(LineIssue {
                            line: lineno,
                            message: format!(
                                "track {} frame {} does not increase past {}",
                                record.track_id, record.frame, prev_frame
                            ),
                        });
                    }
                    if record.category != prev_cat {
                        issues.push(LineIssue {
                            line: lineno,
                            message: format!(
                                "track {} changes category {} -> {}",
                                record.track_id,
                                prev_cat.as_str(),
                                record.category.as_str()
                            ),
                        });
                    }
                }
                last_seen.insert(key, (record.frame, record.category));
                records.push(record);
            }
            Err(message) => issues.push(LineIssue {
                line: lineno,
                message,
            }),
        }
    }
    if issues.is_empty() {
        Ok(records)
    } else {
        Err(Error::Validation {
            path: path.display().to_string(),
            issues,
        })
    }
}

fn parse_line(line: &str) -> std::result::Result<TrackletRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != FIELDS {
        return Err(format!("expected {FIELDS} tab-separated fields, found {}", fields.len()));
    }
    let record = TrackletRecord {
        video_id: fields[0].to_string(),
        track_id: parse_u64(fields[1], "track_id")?,
        frame: parse_u64(fields[2], "frame")?,
        bbox: BoundingBox::new(
            parse_f64(fields[3], "x1")?,
            parse_f64(fields[4], "y1")?,
            parse_f64(fields[5], "x2")?,
            parse_f64(fields[6], "y2")?,
        ),
        category: fields[7]
            .parse::<Category>()
            .map_err(|e| e.to_string())?,
        orientation: parse_nullable(fields[8], "orientation")?,
        speed: parse_nullable(fields[9], "speed")?,
        stationary: match fields[10] {
            "true" => true,
            "false" => false,
            other => return Err(format!("stationary must be true or false, found {other:?}")),
        },
    };
    record.validate()?;
    Ok(record)
}

fn parse_u64(s: &str, what: &str) -> std::result::Result<u64, String> {
    s.parse::<u64>()
        .map_err(|_| format!("{what} must be an unsigned integer, found {s:?}"))
}

fn parse_f64(s: &str, what: &str) -> std::result::Result<f64, String> {
    let v = s
        .parse::<f64>()
        .map_err(|_| format!("{what} must be a real, found {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("{what} must be finite, found {s:?}"));
    }
    Ok(v)
}

fn parse_nullable(s: &str, what: &str) -> std::result::Result<Option<f64>, String> {
    if s == "null" {
        return Ok(None);
    }
    parse_f64(s, what).map(Some)
}

/// Group observations by track and cut consecutive-frame runs into
/// non-overlapping `t_w`-frame windows; a trailing remainder shorter
/// than `t_w` is kept as a short tracklet. Window motion is the dominant
/// bin over the member frames' votes.
pub fn window_tracklets(
    observations: &[TrackletObservation],
    t_w: usize,
) -> Result<Vec<Tracklet>> {
    if t_w == 0 {
        return Err(Error::invalid_argument("t_w must be >= 1"));
    }
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut groups: HashMap<(String, u64), Vec<&TrackletObservation>> = HashMap::new();
    for obs in observations {
        let key = (obs.video_id.clone(), obs.track_id);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key.clone());
                Vec::new()
            })
            .push(obs);
    }
    let mut tracklets = Vec::new();
    for key in &order {
        let group = &groups[key];
        for window in split_windows(group, t_w)? {
            tracklets.push(window);
        }
    }
    Ok(tracklets)
}

fn split_windows(group: &[&TrackletObservation], t_w: usize) -> Result<Vec<Tracklet>> {
    let mut runs: Vec<Vec<&TrackletObservation>> = Vec::new();
    for obs in group {
        match runs.last_mut() {
            Some(run) => {
                let last = run.last().expect("runs are non-empty");
                if obs.frame <= last.frame {
                    return Err(Error::invalid_argument(format!(
                        "track {} frames must strictly increase (frame {} after {})",
                        obs.track_id, obs.frame, last.frame
                    )));
                }
                if obs.category != last.category {
                    return Err(Error::invalid_argument(format!(
                        "track {} changes category mid-track",
                        obs.track_id
                    )));
                }
                if obs.frame == last.frame + 1 {
                    run.push(obs);
                } else {
                    runs.push(vec![obs]);
                }
            }
            None => runs.push(vec![obs]),
        }
    }
    let mut out = Vec::new();
    for run in runs {
        for chunk in run.chunks(t_w) {
            out.push(window_from(chunk)?);
        }
    }
    Ok(out)
}

fn window_from(chunk: &[&TrackletObservation]) -> Result<Tracklet> {
    let first = chunk[0];
    // One vote per frame; the dominant bin's center and mean speed
    // summarize the window exactly like a flow histogram would.
    let mut hist = FlowHistogram::default();
    for obs in chunk {
        hist.total_pixels += 1;
        if obs.motion.stationary {
            hist.background_count += 1;
        } else {
            let bin = orientation_bin_of(obs.motion.orientation);
            hist.bins[bin].pixel_count += 1;
            hist.bins[bin].speed_sum += obs.motion.speed;
        }
    }
    let motion = dominant_motion(&hist, DEFAULT_STATIONARY_RATIO);
    Tracklet::new(
        first.video_id.clone(),
        first.track_id,
        first.frame,
        chunk.iter().map(|o| o.bbox).collect(),
        first.category,
        motion,
    )
}

/// Read records and window them in one step; every record must carry
/// explicit motion.
pub fn read_tracklets(path: &Path, t_w: usize) -> Result<Vec<Tracklet>> {
    let records = read_tracklet_records(path)?;
    let observations = observations_from_records(&records)?;
    window_tracklets(&observations, t_w)
}
