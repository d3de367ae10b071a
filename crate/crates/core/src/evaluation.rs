//! Frame-level micro-AUC plus region- and track-based detection
//! criteria (RBDC/TBDC) over box predictions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BoundingBox;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.1;
pub const DEFAULT_TRACK_FRACTION: f64 = 0.1;

/// One annotated anomalous region instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAnnotation {
    pub video_id: String,
    pub frame: u64,
    pub bbox: BoundingBox,
    pub track_id: u64,
}

/// One predicted anomalous box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedBox {
    pub frame: u64,
    pub bbox: BoundingBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VideoPredictions {
    pub n_frames: u64,
    pub boxes: Vec<PredictedBox>,
}

/// Scored box predictions for a set of videos, with per-video frame
/// counts (the FPR denominator).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    videos: BTreeMap<String, VideoPredictions>,
}

impl PredictionSet {
    pub fn new() -> PredictionSet {
        PredictionSet::default()
    }

    pub fn add_video(&mut self, video_id: impl Into<String>, n_frames: u64) -> Result<()> {
        let id = video_id.into();
        if self.videos.contains_key(&id) {
            return Err(Error::invalid_argument(format!(
                "video {id:?} added twice"
            )));
        }
        self.videos.insert(
            id,
            VideoPredictions {
                n_frames,
                boxes: Vec::new(),
            },
        );
        Ok(())
    }

    pub fn add_box(
        &mut self,
        video_id: &str,
        frame: u64,
        bbox: BoundingBox,
        score: f64,
    ) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::invalid_argument("prediction score must be finite"));
        }
        let video = self
            .videos
            .get_mut(video_id)
            .ok_or_else(|| Error::invalid_argument(format!("unknown video {video_id:?}")))?;
        if frame >= video.n_frames {
            return Err(Error::invalid_argument(format!(
                "frame {frame} outside video {video_id:?} ({} frames)",
                video.n_frames
            )));
        }
        video.boxes.push(PredictedBox { frame, bbox, score });
        Ok(())
    }

    pub fn total_frames(&self) -> u64 {
        self.videos.values().map(|v| v.n_frames).sum()
    }

    pub fn videos(&self) -> impl Iterator<Item = (&String, &VideoPredictions)> {
        self.videos.iter()
    }

    pub fn video(&self, id: &str) -> Option<&VideoPredictions> {
        self.videos.get(id)
    }
}

/// Intersection-over-union with half-open pixel boxes; degenerate boxes
/// score 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

/// Mann-Whitney rank AUC with average ranks for ties. `labels[i]` is
/// true for anomalous frames.
pub fn frame_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid_argument(format!(
            "{} scores against {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid_argument("scores must be finite"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "frame AUC needs both labels present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; tied entries share the average rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// A detection-rate / false-positive-rate curve plus its clipped area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCurve {
    /// `(false positives per frame, detection rate)` per swept
    /// threshold, starting at (0, 0).
    pub points: Vec<(f64, f64)>,
    /// Trapezoidal area over FPR in [0, 1] after clipping/extension.
    pub area: f64,
}

/// Region-based detection criterion.
pub fn rbdc(
    predictions: &PredictionSet,
    ground_truth: &[GroundTruthAnnotation],
    iou_threshold: f64,
) -> Result<f64> {
    Ok(rbdc_curve(predictions, ground_truth, iou_threshold)?.area)
}

pub fn rbdc_curve(
    predictions: &PredictionSet,
    ground_truth: &[GroundTruthAnnotation],
    iou_threshold: f64,
) -> Result<DetectionCurve> {
    let matched = match_predictions(predictions, ground_truth, iou_threshold)?;
    // Each GT region detects at its best-matching box's score.
    let unit_scores: Vec<f64> = matched.region_scores.clone();
    Ok(sweep_curve(
        &unit_scores,
        &matched.false_positive_scores,
        predictions.total_frames(),
    ))
}

/// Track-based detection criterion: a track counts as detected once at
/// least `track_fraction` of its regions are detected.
pub fn tbdc(
    predictions: &PredictionSet,
    ground_truth: &[GroundTruthAnnotation],
    iou_threshold: f64,
    track_fraction: f64,
) -> Result<f64> {
    Ok(tbdc_curve(predictions, ground_truth, iou_threshold, track_fraction)?.area)
}

pub fn tbdc_curve(
    predictions: &PredictionSet,
    ground_truth: &[GroundTruthAnnotation],
    iou_threshold: f64,
    track_fraction: f64,
) -> Result<DetectionCurve> {
    if !(track_fraction > 0.0 && track_fraction <= 1.0) {
        return Err(Error::invalid_argument("track_fraction must be in (0, 1]"));
    }
    let matched = match_predictions(predictions, ground_truth, iou_threshold)?;
    // Group region detection scores by track.
    let mut tracks: BTreeMap<(&str, u64), Vec<f64>> = BTreeMap::new();
    for (g, score) in ground_truth.iter().zip(&matched.region_scores) {
        tracks
            .entry((g.video_id.as_str(), g.track_id))
            .or_default()
            .push(*score);
    }
    // A track with m regions is detected at threshold t once c of its
    // regions score >= t, where c is the smallest count with c/m >=
    // track_fraction; its detection score is therefore its c-th largest
    // region score.
    let mut track_scores = Vec::with_capacity(tracks.len());
    for scores in tracks.values() {
        let m = scores.len();
        let mut need = 1;
        while (need as f64) / (m as f64) < track_fraction {
            need += 1;
        }
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        track_scores.push(sorted[need - 1]);
    }
    Ok(sweep_curve(
        &track_scores,
        &matched.false_positive_scores,
        predictions.total_frames(),
    ))
}

struct MatchedPredictions {
    /// Per GT region (input order): the highest score among predicted
    /// boxes matching it, or negative infinity when nothing matches.
    region_scores: Vec<f64>,
    /// Scores of predicted boxes matching no GT region at all.
    false_positive_scores: Vec<f64>,
}

fn match_predictions(
    predictions: &PredictionSet,
    ground_truth: &[GroundTruthAnnotation],
    iou_threshold: f64,
) -> Result<MatchedPredictions> {
    if ground_truth.is_empty() {
        return Err(Error::UndefinedMetric(
            "detection criteria need non-empty ground truth".into(),
        ));
    }
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::invalid_argument("iou_threshold must be in (0, 1]"));
    }
    for g in ground_truth {
        if predictions.video(&g.video_id).is_none() {
            return Err(Error::invalid_argument(format!(
                "ground truth references video {:?} absent from predictions",
                g.video_id
            )));
        }
    }
    let mut region_scores = vec![f64::NEG_INFINITY; ground_truth.len()];
    let mut false_positive_scores = Vec::new();
    // Index GT regions by (video, frame) for the box pass.
    let mut by_frame: BTreeMap<(&str, u64), Vec<usize>> = BTreeMap::new();
    for (i, g) in ground_truth.iter().enumerate() {
        by_frame
            .entry((g.video_id.as_str(), g.frame))
            .or_default()
            .push(i);
    }
    for (video_id, video) in predictions.videos() {
        for pb in &video.boxes {
            let mut matched_any = false;
            if let Some(regions) = by_frame.get(&(video_id.as_str(), pb.frame)) {
                for &gi in regions {
                    if iou(&pb.bbox, &ground_truth[gi].bbox) >= iou_threshold {
                        matched_any = true;
                        if pb.score > region_scores[gi] {
                            region_scores[gi] = pb.score;
                        }
                    }
                }
            }
            if !matched_any {
                false_positive_scores.push(pb.score);
            }
        }
    }
    Ok(MatchedPredictions {
        region_scores,
        false_positive_scores,
    })
}

/// Threshold sweep over all distinct prediction scores (descending, with
/// an implicit empty start), then trapezoidal area over FPR in [0, 1].
/// Unit detection scores and false-positive scores fully determine the
/// curve: at threshold t the detection rate counts units with score >= t
/// and the FPR counts false-positive boxes with score >= t per frame.
fn sweep_curve(unit_scores: &[f64], fp_scores: &[f64], total_frames: u64) -> DetectionCurve {
    let n_units = unit_scores.len() as f64;
    let frames = total_frames.max(1) as f64;
    let mut thresholds: Vec<f64> = unit_scores
        .iter()
        .chain(fp_scores.iter())
        .cloned()
        .filter(|s| s.is_finite())
        .collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut points = vec![(0.0, 0.0)];
    for &t in &thresholds {
        let detected = unit_scores.iter().filter(|&&s| s >= t).count() as f64;
        let fps = fp_scores.iter().filter(|&&s| s >= t).count() as f64;
        points.push((fps / frames, detected / n_units));
    }
    let area = clipped_area(&points);
    DetectionCurve { points, area }
}

/// Trapezoidal area under a curve of non-decreasing (fpr, dr) points
/// over FPR in [0, 1]: segments crossing FPR = 1 are clipped by linear
/// interpolation, and the final detection rate extends to FPR = 1.
fn clipped_area(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    let mut prev = points[0];
    for &(x, y) in &points[1..] {
        if prev.0 >= 1.0 {
            break;
        }
        if x <= 1.0 {
            area += (x - prev.0) * (prev.1 + y) / 2.0;
            prev = (x, y);
        } else {
            // Clip the crossing segment at FPR = 1.
            let t = (1.0 - prev.0) / (x - prev.0);
            let y_at_one = prev.1 + t * (y - prev.1);
            area += (1.0 - prev.0) * (prev.1 + y_at_one) / 2.0;
            prev = (1.0, y_at_one);
            break;
        }
    }
    if prev.0 < 1.0 {
        area += (1.0 - prev.0) * prev.1;
    }
    area
}

/// Bundled evaluation results for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frame_auc: f64,
    pub rbdc: f64,
    pub tbdc: f64,
    pub rbdc_curve: Vec<(f64, f64)>,
    pub tbdc_curve: Vec<(f64, f64)>,
}
