//! Incremental activity heatmap: every tracklet observation deposits a
//! Gaussian kernel into the channels describing its category and motion.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{self, MotionAttribute};
use crate::types::{Category, TrackletObservation};

/// Channel layout of the heatmap attribute axis: 4 category channels,
/// 12 direction channels, 4 log-speed channels, 1 stationary channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeLayout {
    pub category: usize,
    pub direction: usize,
    pub log_speed: usize,
    pub stationary: usize,
}

pub const CHANNELS: usize = 21;

impl Default for AttributeLayout {
    fn default() -> AttributeLayout {
        AttributeLayout {
            category: Category::COUNT,
            direction: motion::ORIENTATION_BINS,
            log_speed: motion::LOG_SPEED_BINS,
            stationary: 1,
        }
    }
}

impl AttributeLayout {
    pub fn channels(&self) -> usize {
        self.category + self.direction + self.log_speed + self.stationary
    }

    pub fn category_channel(&self, category: Category) -> usize {
        category.index()
    }

    pub fn direction_channel(&self, bin: usize) -> usize {
        debug_assert!(bin < self.direction);
        self.category + bin
    }

    pub fn log_speed_channel(&self, bin: usize) -> usize {
        debug_assert!(bin < self.log_speed);
        self.category + self.direction + bin
    }

    pub fn stationary_channel(&self) -> usize {
        self.category + self.direction + self.log_speed
    }

    /// Channels a given category/motion pair deposits into.
    pub fn active_channels(
        &self,
        category: Category,
        motion: &MotionAttribute,
    ) -> Result<Vec<usize>> {
        motion.validate()?;
        let mut channels = vec![self.category_channel(category)];
        if motion.stationary {
            channels.push(self.stationary_channel());
        } else {
            channels.push(self.direction_channel(motion.orientation_bin()));
            let speed_bin = motion::quantize_log_speed(motion.speed, motion::LOG_SPEED_BASE)?;
            channels.push(self.log_speed_channel(speed_bin));
        }
        Ok(channels)
    }
}

/// Spatial width of the deposit kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelPolicy {
    /// `sigma = max(box width, box height) / 4`.
    Adaptive,
    /// One sigma for every observation, in pixels.
    Fixed(f64),
}

impl KernelPolicy {
    fn sigma_for(&self, box_w: f64, box_h: f64) -> Result<f64> {
        let sigma = match *self {
            KernelPolicy::Adaptive => box_w.max(box_h) / 4.0,
            KernelPolicy::Fixed(s) => s,
        };
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid_argument(format!(
                "kernel sigma {sigma} must be positive and finite"
            )));
        }
        Ok(sigma)
    }
}

/// H x W x D accumulator of Gaussian activity deposits (Eq. 1 style:
/// `M(x,y,d) += 1_box(x,y) * G(x,y)`).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityHeatmap {
    layout: AttributeLayout,
    kernel_policy: KernelPolicy,
    data: Array3<f64>,
}

pub const DEFAULT_MIN_MASS: f64 = 1e-3;

impl ActivityHeatmap {
    pub fn new(height: usize, width: usize, kernel_policy: KernelPolicy) -> Result<ActivityHeatmap> {
        if height == 0 || width == 0 {
            return Err(Error::invalid_argument("heatmap must be non-empty"));
        }
        let layout = AttributeLayout::default();
        Ok(ActivityHeatmap {
            layout,
            kernel_policy,
            data: Array3::zeros((height, width, layout.channels())),
        })
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn layout(&self) -> &AttributeLayout {
        &self.layout
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// Deposit one observation: every in-box pixel receives
    /// `exp(-((x-xc)^2 + (y-yc)^2) / (2 sigma^2))` on each active channel.
    pub fn accumulate(&mut self, obs: &TrackletObservation) -> Result<()> {
        if !obs.bbox.is_valid() {
            return Err(Error::invalid_argument(format!(
                "degenerate bounding box {:?}",
                obs.bbox
            )));
        }
        let (xc, yc) = obs.bbox.center();
        if !(xc >= 0.0 && xc < self.width() as f64 && yc >= 0.0 && yc < self.height() as f64) {
            return Err(Error::invalid_argument(format!(
                "observation center ({xc}, {yc}) outside the {}x{} frame",
                self.width(),
                self.height()
            )));
        }
        let sigma = self
            .kernel_policy
            .sigma_for(obs.bbox.width(), obs.bbox.height())?;
        let channels = self.layout.active_channels(obs.category, &obs.motion)?;
        let inv = 1.0 / (2.0 * sigma * sigma);
        let rows = obs.bbox.pixel_rows(self.height());
        let cols = obs.bbox.pixel_cols(self.width());
        for y in rows {
            let dy = y as f64 - yc;
            for x in cols.clone() {
                let dx = x as f64 - xc;
                let g = (-(dx * dx + dy * dy) * inv).exp();
                for &d in &channels {
                    self.data[[y, x, d]] += g;
                }
            }
        }
        Ok(())
    }

    /// Active pixels (channel sum >= `min_mass`) in row-major order with
    /// their L1-normalized attribute vectors.
    pub fn pixel_features(&self, min_mass: f64) -> (Vec<(usize, usize)>, Array2<f64>) {
        let d = self.channels();
        let mut coords = Vec::new();
        let mut rows: Vec<f64> = Vec::new();
        for y in 0..self.height() {
            for x in 0..self.width() {
                let cell = self.data.slice(ndarray::s![y, x, ..]);
                let mass: f64 = cell.sum();
                if mass >= min_mass {
                    coords.push((y, x));
                    rows.extend(cell.iter().map(|v| v / mass));
                }
            }
        }
        let n = coords.len();
        let features = Array2::from_shape_vec((n, d), rows).expect("row-major construction");
        (coords, features)
    }
}
