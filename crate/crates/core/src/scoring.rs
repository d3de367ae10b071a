//! Tracklet NLL scoring against regional models, frame-level
//! aggregation, and temporal Gaussian smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalcy::{assign_region, RegionalModelSet, Tracklet};
use crate::region::RegionMap;
use crate::types::BoundingBox;

pub const DEFAULT_SMOOTHING_SIGMA: f64 = 7.0;
/// Frame score for videos with no tracklets at all.
pub const DEFAULT_EMPTY_FLOOR: f64 = 0.0;

/// One scored tracklet with enough context for the evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletScore {
    pub video_id: String,
    pub track_id: u64,
    pub start_frame: u64,
    pub region: u32,
    pub nll: f64,
    pub boxes: Vec<BoundingBox>,
}

impl TrackletScore {
    /// Frames covered: `[start, start + window)`.
    pub fn frames(&self) -> std::ops::Range<u64> {
        self.start_frame..self.start_frame + self.boxes.len() as u64
    }
}

/// Per-frame anomaly scores of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScoreSeries {
    pub video_id: String,
    pub scores: Vec<f64>,
    /// Value given to frames no tracklet covers.
    pub floor: f64,
    /// Sigma of the smoothing already applied; 0 for raw series.
    pub smoothing_sigma: f64,
}

/// Score one tracklet by the NLL of its feature under its region's
/// model.
pub fn score_tracklet(
    set: &RegionalModelSet,
    map: &RegionMap,
    tracklet: &Tracklet,
) -> Result<TrackletScore> {
    set.validate_against(map)?;
    let region = assign_region(tracklet, map)?;
    let model = set.model_for(region)?;
    let feature = tracklet.feature().vector();
    let nll = -model.log_pdf(&feature.view())?;
    if !nll.is_finite() {
        return Err(Error::Internal(format!(
            "non-finite NLL for track {} at frame {}",
            tracklet.track_id, tracklet.start_frame
        )));
    }
    Ok(TrackletScore {
        video_id: tracklet.video_id.clone(),
        track_id: tracklet.track_id,
        start_frame: tracklet.start_frame,
        region,
        nll,
        boxes: tracklet.boxes.clone(),
    })
}

/// Scores for every tracklet of one video against one model set.
pub fn score_tracklets(
    set: &RegionalModelSet,
    map: &RegionMap,
    tracklets: &[Tracklet],
) -> Result<Vec<TrackletScore>> {
    tracklets
        .iter()
        .map(|t| score_tracklet(set, map, t))
        .collect()
}

/// Collapse tracklet scores to a per-frame series: each frame takes the
/// maximum NLL over the tracklets covering it; uncovered frames take the
/// video's minimum NLL (or `empty_floor` when there are no tracklets).
pub fn frame_scores(
    scores: &[TrackletScore],
    video_id: &str,
    n_frames: usize,
    empty_floor: f64,
) -> Result<FrameScoreSeries> {
    for s in scores {
        if s.video_id != video_id {
            return Err(Error::invalid_argument(format!(
                "tracklet from video {:?} in a {:?} series",
                s.video_id, video_id
            )));
        }
    }
    let floor = scores
        .iter()
        .map(|s| s.nll)
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { empty_floor };
    let mut out = vec![floor; n_frames];
    for s in scores {
        for frame in s.frames() {
            let f = frame as usize;
            if f < n_frames && s.nll > out[f] {
                out[f] = s.nll;
            }
        }
    }
    Ok(FrameScoreSeries {
        video_id: video_id.to_string(),
        scores: out,
        floor,
        smoothing_sigma: 0.0,
    })
}

/// Gaussian-smooth a series: kernel truncated at radius `ceil(3 sigma)`,
/// renormalized to sum 1, reflect padding at the boundaries. `sigma = 0`
/// is the identity.
pub fn smooth(series: &FrameScoreSeries, sigma: f64) -> Result<FrameScoreSeries> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid_argument("sigma must be finite and >= 0"));
    }
    if sigma == 0.0 || series.scores.is_empty() {
        return Ok(FrameScoreSeries {
            smoothing_sigma: sigma,
            ..series.clone()
        });
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for offset in -radius..=radius {
        kernel.push((-(offset * offset) as f64 * inv).exp());
    }
    let total: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= total;
    }
    let n = series.scores.len() as i64;
    let reflect = |i: i64| -> usize {
        let mut i = i;
        loop {
            if i < 0 {
                i = -1 - i;
            } else if i >= n {
                i = 2 * n - 1 - i;
            } else {
                return i as usize;
            }
        }
    };
    let smoothed: Vec<f64> = (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * series.scores[reflect(i + j as i64 - radius)])
                .sum()
        })
        .collect();
    Ok(FrameScoreSeries {
        video_id: series.video_id.clone(),
        scores: smoothed,
        floor: series.floor,
        smoothing_sigma: sigma,
    })
}
