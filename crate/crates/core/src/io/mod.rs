//! Bit-exact interchange formats: every writer/reader pair round-trips
//! exactly (integers, labels, rasters) or to within float-text fidelity,
//! and text reals always carry 17 significant digits.

mod annotations;
mod config;
mod flow;
mod json;
mod model_set;
mod region_map;
mod scores;
mod tracklets;

pub use annotations::{read_annotations, write_annotations};
pub use config::RunConfig;
pub use flow::{FLO_MAGIC, read_flo, write_flo};
pub use json::{format_real, read_json, to_json_string, write_json};
pub use model_set::{read_model_set, write_model_set};
pub use region_map::{RegionMapSidecar, read_region_map, write_region_map};
pub use scores::{
    FrameScoreRow, TrackletScoreRow, expand_tracklet_scores, frame_score_rows,
    read_frame_scores, read_tracklet_scores, write_frame_scores, write_tracklet_scores,
};
pub use tracklets::{
    TrackletRecord, observations_from_records, read_tracklet_records, read_tracklets,
    record_from_observation, window_tracklets, write_tracklet_records,
};

#[cfg(test)]
mod fuzz;
