//! Flat `key = value` run configuration shared by every pipeline stage.
//!
//! `to_text` emits keys in one fixed order with reals in scientific
//! notation, so `parse(config.to_text()) == config` and the echoed file
//! is byte-deterministic.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, LineIssue, Result};
use crate::heatmap::{DEFAULT_MIN_MASS, KernelPolicy};
use crate::io::json::format_real;
use crate::normalcy::{DEFAULT_K_MAX, DEFAULT_MIN_SAMPLES};
use crate::region::{ClusterMethod, DEFAULT_SUBSAMPLE};
use crate::scoring::DEFAULT_SMOOTHING_SIGMA;
use crate::synth::AnomalyKind;
use crate::evaluation::{DEFAULT_IOU_THRESHOLD, DEFAULT_TRACK_FRACTION};

pub const DEFAULT_WINDOW: usize = 3;

/// Every knob of the pipeline, in one flat bag.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // Scene synthesis.
    pub height: usize,
    pub width: usize,
    pub n_frames: u64,
    pub anomaly_rate: f64,
    pub anomaly_kinds: Vec<AnomalyKind>,
    // Toy generator.
    pub n_train: usize,
    pub n_test: usize,
    // Windowing and heatmap accumulation.
    pub t_w: usize,
    pub kernel: KernelPolicy,
    pub min_mass: f64,
    // Region discovery.
    pub k: Option<usize>,
    pub k_candidates: Vec<usize>,
    pub method: ClusterMethod,
    pub spatial_affinity: f64,
    pub subsample: usize,
    // Normalcy training.
    pub k_max: usize,
    pub min_samples: usize,
    // Scoring and evaluation.
    pub smoothing_sigma: f64,
    pub iou_threshold: f64,
    pub track_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            seed: 0,
            height: 96,
            width: 128,
            n_frames: 500,
            anomaly_rate: 0.0,
            anomaly_kinds: Vec::new(),
            n_train: 10_000,
            n_test: 20_000,
            t_w: DEFAULT_WINDOW,
            kernel: KernelPolicy::Adaptive,
            min_mass: DEFAULT_MIN_MASS,
            k: None,
            k_candidates: Vec::new(),
            method: ClusterMethod::GmmFull,
            spatial_affinity: 0.0,
            subsample: DEFAULT_SUBSAMPLE,
            k_max: DEFAULT_K_MAX,
            min_samples: DEFAULT_MIN_SAMPLES,
            smoothing_sigma: DEFAULT_SMOOTHING_SIGMA,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            track_fraction: DEFAULT_TRACK_FRACTION,
        }
    }
}

/// Fixed emission order; also the source of truth for known keys.
const KEYS: [&str; 21] = [
    "seed",
    "height",
    "width",
    "n_frames",
    "anomaly_rate",
    "anomaly_kinds",
    "n_train",
    "n_test",
    "t_w",
    "kernel",
    "min_mass",
    "k",
    "k_candidates",
    "method",
    "spatial_affinity",
    "subsample",
    "k_max",
    "min_samples",
    "smoothing_sigma",
    "iou_threshold",
    "track_fraction",
];

impl RunConfig {
    /// Set one key from its text form. Empty values clear the optional
    /// keys (`k`, `k_candidates`, `anomaly_kinds`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse_int(key, value)?,
            "height" => self.height = parse_int(key, value)?,
            "width" => self.width = parse_int(key, value)?,
            "n_frames" => self.n_frames = parse_int(key, value)?,
            "anomaly_rate" => self.anomaly_rate = parse_float(key, value)?,
            "anomaly_kinds" => {
                self.anomaly_kinds = parse_list(key, value, AnomalyKind::from_str)?
            }
            "n_train" => self.n_train = parse_int(key, value)?,
            "n_test" => self.n_test = parse_int(key, value)?,
            "t_w" => self.t_w = parse_int(key, value)?,
            "kernel" => self.kernel = parse_kernel(value)?,
            "min_mass" => self.min_mass = parse_float(key, value)?,
            "k" => {
                self.k = if value.is_empty() {
                    None
                } else {
                    Some(parse_int(key, value)?)
                }
            }
            "k_candidates" => {
                self.k_candidates = parse_list(key, value, |v| {
                    v.parse::<usize>()
                        .map_err(|_| Error::invalid_argument(format!("bad k candidate {v:?}")))
                })?
            }
            "method" => self.method = value.parse()?,
            "spatial_affinity" => self.spatial_affinity = parse_float(key, value)?,
            "subsample" => self.subsample = parse_int(key, value)?,
            "k_max" => self.k_max = parse_int(key, value)?,
            "min_samples" => self.min_samples = parse_int(key, value)?,
            "smoothing_sigma" => self.smoothing_sigma = parse_float(key, value)?,
            "iou_threshold" => self.iou_threshold = parse_float(key, value)?,
            "track_fraction" => self.track_fraction = parse_float(key, value)?,
            other => {
                return Err(Error::invalid_argument(format!("unknown key {other:?}")));
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "height" => self.height.to_string(),
            "width" => self.width.to_string(),
            "n_frames" => self.n_frames.to_string(),
            "anomaly_rate" => format_real(self.anomaly_rate),
            "anomaly_kinds" => {
                let names: Vec<&str> = self.anomaly_kinds.iter().map(|k| k.as_str()).collect();
                names.join(",")
            }
            "n_train" => self.n_train.to_string(),
            "n_test" => self.n_test.to_string(),
            "t_w" => self.t_w.to_string(),
            "kernel" => match self.kernel {
                KernelPolicy::Adaptive => "adaptive".to_string(),
                KernelPolicy::Fixed(s) => format!("fixed:{}", format_real(s)),
            },
            "min_mass" => format_real(self.min_mass),
            "k" => self.k.map(|k| k.to_string()).unwrap_or_default(),
            "k_candidates" => {
                let names: Vec<String> =
                    self.k_candidates.iter().map(|k| k.to_string()).collect();
                names.join(",")
            }
            "method" => self.method.as_str().to_string(),
            "spatial_affinity" => format_real(self.spatial_affinity),
            "subsample" => self.subsample.to_string(),
            "k_max" => self.k_max.to_string(),
            "min_samples" => self.min_samples.to_string(),
            "smoothing_sigma" => format_real(self.smoothing_sigma),
            "iou_threshold" => format_real(self.iou_threshold),
            "track_fraction" => format_real(self.track_fraction),
            other => unreachable!("unknown key {other}"),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key));
            out.push('\n');
        }
        out
    }

    /// Parse a config file body without cross-key validation, so callers
    /// may layer overrides before validating. `origin` names the source
    /// in errors.
    pub fn parse(text: &str, origin: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let mut issues = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                issues.push(LineIssue {
                    line: line_no,
                    message: "expected key = value".into(),
                });
                continue;
            };
            if let Err(e) = config.set(key.trim(), value.trim()) {
                issues.push(LineIssue {
                    line: line_no,
                    message: e.to_string(),
                });
            }
        }
        if !issues.is_empty() {
            return Err(Error::Validation {
                path: origin.to_string(),
                issues,
            });
        }
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let config = RunConfig::parse(&text, &path.display().to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid_argument("frame size must be positive"));
        }
        if self.n_frames == 0 {
            return Err(Error::invalid_argument("n_frames must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.anomaly_rate) {
            return Err(Error::invalid_argument("anomaly_rate must be in [0, 1]"));
        }
        if self.anomaly_rate > 0.0 && self.anomaly_kinds.is_empty() {
            return Err(Error::invalid_argument(
                "anomaly_rate > 0 needs at least one anomaly kind",
            ));
        }
        if self.t_w == 0 {
            return Err(Error::invalid_argument("t_w must be >= 1"));
        }
        if let KernelPolicy::Fixed(s) = self.kernel {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid_argument("fixed kernel sigma must be > 0"));
            }
        }
        if !(self.min_mass > 0.0) || !self.min_mass.is_finite() {
            return Err(Error::invalid_argument("min_mass must be > 0"));
        }
        if self.k == Some(0) || self.k == Some(1) {
            return Err(Error::invalid_argument("k must be >= 2"));
        }
        if self.k_candidates.iter().any(|&k| k < 2) {
            return Err(Error::invalid_argument("k candidates must be >= 2"));
        }
        if !(self.spatial_affinity >= 0.0) || !self.spatial_affinity.is_finite() {
            return Err(Error::invalid_argument("spatial_affinity must be >= 0"));
        }
        if self.subsample == 0 {
            return Err(Error::invalid_argument("subsample must be >= 1"));
        }
        if self.k_max == 0 {
            return Err(Error::invalid_argument("k_max must be >= 1"));
        }
        if !(self.smoothing_sigma >= 0.0) || !self.smoothing_sigma.is_finite() {
            return Err(Error::invalid_argument("smoothing_sigma must be >= 0"));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::invalid_argument("iou_threshold must be in (0, 1]"));
        }
        if !(self.track_fraction > 0.0 && self.track_fraction <= 1.0) {
            return Err(Error::invalid_argument("track_fraction must be in (0, 1]"));
        }
        Ok(())
    }
}

fn parse_int<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::invalid_argument(format!("bad {key} value {value:?}")))
}

fn parse_float(key: &str, value: &str) -> Result<f64> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::invalid_argument(format!(
            "bad {key} value {value:?}"
        ))),
    }
}

fn parse_list<T>(key: &str, value: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| {
            let v = v.trim();
            if v.is_empty() {
                Err(Error::invalid_argument(format!("empty item in {key}")))
            } else {
                item(v)
            }
        })
        .collect()
}

fn parse_kernel(value: &str) -> Result<KernelPolicy> {
    if value == "adaptive" {
        return Ok(KernelPolicy::Adaptive);
    }
    if let Some(sigma) = value.strip_prefix("fixed:") {
        let s = parse_float("kernel sigma", sigma)?;
        if s > 0.0 {
            return Ok(KernelPolicy::Fixed(s));
        }
    }
    Err(Error::invalid_argument(format!(
        "kernel must be \"adaptive\" or \"fixed:<sigma>\", got {value:?}"
    )))
}
