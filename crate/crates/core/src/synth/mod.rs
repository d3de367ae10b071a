//! Ground-truthed synthetic data at desk scale: the tabular rule-based
//! toy and a lane-scene simulator with injected anomalies.

mod scene;
mod toy;

pub use scene::{
    AnomalyKind, AnomalySpec, SceneLayout, SynthOutput, Zone, emit_flow_rasters, simulate_scene,
};
pub use toy::{ToyData, ToyRuleSet, ToySample, generate_toy};
