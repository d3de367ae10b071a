//! Histogram-of-Flow descriptors and the two-dimensional motion
//! attribute (dominant orientation, speed) derived from them.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BoundingBox;

pub const ORIENTATION_BINS: usize = 12;
pub const BIN_WIDTH: f64 = PI / 6.0;
/// Flow magnitudes below this count as background.
pub const DEFAULT_MAG_THRESHOLD: f64 = 1.5;
/// Background ratio at or above which a histogram is stationary.
pub const DEFAULT_STATIONARY_RATIO: f64 = 0.9;
/// Left edge of the lowest log-speed bin.
pub const LOG_SPEED_BASE: f64 = 1.5;
pub const LOG_SPEED_BINS: usize = 4;

/// Dense per-pixel optical flow in pixels/frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    u: Array2<f32>,
    v: Array2<f32>,
}

impl FlowField {
    pub fn new(u: Array2<f32>, v: Array2<f32>) -> Result<FlowField> {
        if u.dim() != v.dim() {
            return Err(Error::invalid_argument(format!(
                "u is {:?} but v is {:?}",
                u.dim(),
                v.dim()
            )));
        }
        let (h, w) = u.dim();
        if h == 0 || w == 0 {
            return Err(Error::invalid_argument("flow field must be non-empty"));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid_argument("flow field has non-finite values"));
        }
        Ok(FlowField { u, v })
    }

    pub fn height(&self) -> usize {
        self.u.nrows()
    }

    pub fn width(&self) -> usize {
        self.u.ncols()
    }

    pub fn u(&self) -> &Array2<f32> {
        &self.u
    }

    pub fn v(&self) -> &Array2<f32> {
        &self.v
    }

    /// Flow vector at (row, col) widened to f64.
    pub fn at(&self, row: usize, col: usize) -> (f64, f64) {
        (self.u[[row, col]] as f64, self.v[[row, col]] as f64)
    }
}

/// One orientation bin: member count and accumulated magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HofBin {
    pub pixel_count: u64,
    pub speed_sum: f64,
}

impl HofBin {
    pub fn mean_speed(&self) -> f64 {
        if self.pixel_count == 0 {
            0.0
        } else {
            self.speed_sum / self.pixel_count as f64
        }
    }
}

/// Histogram of flow over a box: 12 orientation bins plus a background
/// bin for sub-threshold magnitudes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowHistogram {
    pub bins: [HofBin; ORIENTATION_BINS],
    pub background_count: u64,
    pub total_pixels: u64,
}

impl FlowHistogram {
    pub fn background_ratio(&self) -> f64 {
        if self.total_pixels == 0 {
            0.0
        } else {
            self.background_count as f64 / self.total_pixels as f64
        }
    }

    pub fn foreground_count(&self) -> u64 {
        self.total_pixels - self.background_count
    }

    /// Pool another histogram into this one (used to aggregate a
    /// tracklet's per-frame histograms into a single descriptor).
    pub fn merge(&mut self, other: &FlowHistogram) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.pixel_count += b.pixel_count;
            a.speed_sum += b.speed_sum;
        }
        self.background_count += other.background_count;
        self.total_pixels += other.total_pixels;
    }
}

/// Dominant orientation and speed of a tracklet; `f_mot` in R^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionAttribute {
    /// Radians in [0, 2pi); the center of the dominant bin. Zero when
    /// stationary.
    pub orientation: f64,
    /// Pixels/frame; zero when stationary.
    pub speed: f64,
    pub stationary: bool,
}

impl MotionAttribute {
    pub fn stationary() -> MotionAttribute {
        MotionAttribute {
            orientation: 0.0,
            speed: 0.0,
            stationary: true,
        }
    }

    pub fn moving(orientation: f64, speed: f64) -> MotionAttribute {
        MotionAttribute {
            orientation,
            speed,
            stationary: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.orientation.is_finite() || !self.speed.is_finite() {
            return Err(Error::invalid_argument("non-finite motion attribute"));
        }
        if self.stationary {
            if self.orientation != 0.0 || self.speed != 0.0 {
                return Err(Error::invalid_argument(
                    "stationary attribute must be (0, 0)",
                ));
            }
        } else {
            if !(0.0..2.0 * PI).contains(&self.orientation) {
                return Err(Error::invalid_argument(
                    "orientation must lie in [0, 2pi)",
                ));
            }
            if self.speed < DEFAULT_MAG_THRESHOLD {
                return Err(Error::invalid_argument(format!(
                    "moving attribute speed {} below threshold {}",
                    self.speed, DEFAULT_MAG_THRESHOLD
                )));
            }
        }
        Ok(())
    }

    /// Orientation bin of a non-stationary attribute.
    pub fn orientation_bin(&self) -> usize {
        orientation_bin_of(self.orientation)
    }
}

/// Orientation bin for an angle in [0, 2pi): half-open intervals
/// [b*pi/6, (b+1)*pi/6). Rounding at the top of the circle clamps into
/// the last bin.
pub fn orientation_bin_of(angle: f64) -> usize {
    ((angle / BIN_WIDTH) as usize).min(ORIENTATION_BINS - 1)
}

/// Histogram of flow over the pixels of `bbox` within the raster.
///
/// Magnitudes below `mag_threshold` count to the background bin;
/// others bin by `atan2(v, u)` mapped to [0, 2pi).
pub fn hof(flow: &FlowField, bbox: &BoundingBox, mag_threshold: f64) -> Result<FlowHistogram> {
    if !(mag_threshold > 0.0) {
        return Err(Error::invalid_argument("mag_threshold must be > 0"));
    }
    let rows = bbox.pixel_rows(flow.height());
    let cols = bbox.pixel_cols(flow.width());
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::invalid_argument(
            "box does not intersect the flow raster",
        ));
    }
    let mut hist = FlowHistogram::default();
    for r in rows {
        for c in cols.clone() {
            let (u, v) = flow.at(r, c);
            let mag = (u * u + v * v).sqrt();
            hist.total_pixels += 1;
            if mag < mag_threshold {
                hist.background_count += 1;
                continue;
            }
            let mut angle = v.atan2(u);
            if angle < 0.0 {
                angle += 2.0 * PI;
            }
            let bin = orientation_bin_of(angle);
            hist.bins[bin].pixel_count += 1;
            hist.bins[bin].speed_sum += mag;
        }
    }
    Ok(hist)
}

/// Reduce a histogram to the dominant motion attribute.
///
/// Stationary when the background ratio reaches `stationary_ratio` or no
/// orientation bin has members; otherwise the highest-count bin wins
/// (ties toward the smaller index), with orientation at the bin center.
pub fn dominant_motion(hist: &FlowHistogram, stationary_ratio: f64) -> MotionAttribute {
    if hist.total_pixels == 0 || hist.background_ratio() >= stationary_ratio {
        return MotionAttribute::stationary();
    }
    let mut best: Option<usize> = None;
    for (i, bin) in hist.bins.iter().enumerate() {
        if bin.pixel_count == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some(j) => bin.pixel_count > hist.bins[j].pixel_count,
        };
        if better {
            best = Some(i);
        }
    }
    match best {
        None => MotionAttribute::stationary(),
        Some(b) => MotionAttribute::moving((b as f64 + 0.5) * BIN_WIDTH, hist.bins[b].mean_speed()),
    }
}

/// Log-scale speed bin: geometric edges at `base * 2^j`, so with the
/// default base the bins are [1.5,3), [3,6), [6,12), [12,inf).
pub fn quantize_log_speed(speed: f64, base: f64) -> Result<usize> {
    if !(base > 0.0) {
        return Err(Error::invalid_argument("base must be > 0"));
    }
    if !speed.is_finite() {
        return Err(Error::invalid_argument("speed must be finite"));
    }
    if speed < base {
        return Err(Error::invalid_argument(format!(
            "speed {speed} below base {base}; stationary motion must be handled upstream"
        )));
    }
    Ok(if speed < 2.0 * base {
        0
    } else if speed < 4.0 * base {
        1
    } else if speed < 8.0 * base {
        2
    } else {
        3
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn constant_flow(h: usize, w: usize, u: f32, v: f32) -> FlowField {
        FlowField::new(Array2::from_elem((h, w), u), Array2::from_elem((h, w), v)).unwrap()
    }

    fn full_box(h: usize, w: usize) -> BoundingBox {
        BoundingBox::new(0.0, 0.0, w as f64, h as f64)
    }

    #[test]
    fn zero_flow_is_all_background() {
        let flow = constant_flow(4, 5, 0.0, 0.0);
        let hist = hof(&flow, &full_box(4, 5), DEFAULT_MAG_THRESHOLD).unwrap();
        assert_eq!(hist.total_pixels, 20);
        assert_abs_diff_eq!(hist.background_ratio(), 1.0);
        assert!(hist.bins.iter().all(|b| b.pixel_count == 0));
    }

    #[test]
    fn constant_rightward_flow_fills_bin_zero() {
        let flow = constant_flow(3, 3, 2.0, 0.0);
        let hist = hof(&flow, &full_box(3, 3), DEFAULT_MAG_THRESHOLD).unwrap();
        assert_eq!(hist.bins[0].pixel_count, 9);
        assert_abs_diff_eq!(hist.bins[0].mean_speed(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hist.background_ratio(), 0.0);
    }

    #[test]
    fn boundary_angle_falls_in_upper_bin() {
        // atan2(1.6, 0) = pi/2 sits exactly on the bin 2 | bin 3 edge;
        // the half-open convention puts it in bin 3.
        let flow = constant_flow(2, 2, 0.0, 1.6);
        let hist = hof(&flow, &full_box(2, 2), DEFAULT_MAG_THRESHOLD).unwrap();
        assert_eq!(hist.bins[3].pixel_count, 4);
        assert_abs_diff_eq!(hist.bins[3].mean_speed(), 1.6f32 as f64, epsilon = 1e-12);
    }

    #[test]
    fn hof_rejects_disjoint_box() {
        let flow = constant_flow(4, 4, 1.0, 0.0);
        let outside = BoundingBox::new(10.0, 10.0, 12.0, 12.0);
        assert!(hof(&flow, &outside, DEFAULT_MAG_THRESHOLD).is_err());
    }

    #[test]
    fn dominant_motion_stationary_on_background() {
        let hist = FlowHistogram {
            background_count: 95,
            total_pixels: 100,
            ..FlowHistogram::default()
        };
        let attr = dominant_motion(&hist, DEFAULT_STATIONARY_RATIO);
        assert!(attr.stationary);
        assert_eq!(attr.orientation, 0.0);
        assert_eq!(attr.speed, 0.0);
    }

    #[test]
    fn dominant_motion_picks_argmax_bin() {
        let mut hist = FlowHistogram::default();
        hist.bins[0] = HofBin {
            pixel_count: 100,
            speed_sum: 200.0,
        };
        hist.bins[6] = HofBin {
            pixel_count: 40,
            speed_sum: 120.0,
        };
        hist.total_pixels = 140;
        let attr = dominant_motion(&hist, DEFAULT_STATIONARY_RATIO);
        assert!(!attr.stationary);
        assert_abs_diff_eq!(attr.orientation, PI / 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(attr.speed, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn dominant_motion_tie_breaks_to_smaller_bin() {
        let mut hist = FlowHistogram::default();
        hist.bins[2] = HofBin {
            pixel_count: 50,
            speed_sum: 100.0,
        };
        hist.bins[5] = HofBin {
            pixel_count: 50,
            speed_sum: 250.0,
        };
        hist.total_pixels = 100;
        let attr = dominant_motion(&hist, DEFAULT_STATIONARY_RATIO);
        assert_abs_diff_eq!(attr.orientation, 2.5 * BIN_WIDTH, epsilon = 1e-12);
        assert_abs_diff_eq!(attr.speed, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn quantize_log_speed_edges() {
        assert_eq!(quantize_log_speed(1.5, LOG_SPEED_BASE).unwrap(), 0);
        assert_eq!(quantize_log_speed(2.9, LOG_SPEED_BASE).unwrap(), 0);
        assert_eq!(quantize_log_speed(3.0, LOG_SPEED_BASE).unwrap(), 1);
        assert_eq!(quantize_log_speed(7.0, LOG_SPEED_BASE).unwrap(), 2);
        assert_eq!(quantize_log_speed(12.0, LOG_SPEED_BASE).unwrap(), 3);
        assert_eq!(quantize_log_speed(100.0, LOG_SPEED_BASE).unwrap(), 3);
        assert!(quantize_log_speed(1.4, LOG_SPEED_BASE).is_err());
    }

    #[test]
    fn merge_pools_counts_and_sums() {
        let flow_a = constant_flow(2, 2, 2.0, 0.0);
        let flow_b = constant_flow(2, 2, 0.0, 0.0);
        let mut a = hof(&flow_a, &full_box(2, 2), DEFAULT_MAG_THRESHOLD).unwrap();
        let b = hof(&flow_b, &full_box(2, 2), DEFAULT_MAG_THRESHOLD).unwrap();
        a.merge(&b);
        assert_eq!(a.total_pixels, 8);
        assert_eq!(a.background_count, 4);
        assert_eq!(a.bins[0].pixel_count, 4);
    }

    fn arbitrary_flow() -> impl Strategy<Value = (FlowField, BoundingBox)> {
        (2usize..10, 2usize..10)
            .prop_flat_map(|(h, w)| {
                let n = h * w;
                (
                    Just(h),
                    Just(w),
                    proptest::collection::vec(-8.0f32..8.0, n),
                    proptest::collection::vec(-8.0f32..8.0, n),
                )
            })
            .prop_map(|(h, w, us, vs)| {
                let u = Array2::from_shape_vec((h, w), us).unwrap();
                let v = Array2::from_shape_vec((h, w), vs).unwrap();
                (FlowField::new(u, v).unwrap(), full_box(h, w))
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn hof_conserves_pixels((flow, bbox) in arbitrary_flow()) {
            let hist = hof(&flow, &bbox, DEFAULT_MAG_THRESHOLD).unwrap();
            let fg: u64 = hist.bins.iter().map(|b| b.pixel_count).sum();
            prop_assert_eq!(fg + hist.background_count, hist.total_pixels);
            prop_assert_eq!(hist.total_pixels as usize, flow.height() * flow.width());
        }

        #[test]
        fn scaling_magnitudes_never_demotes_pixels((flow, bbox) in arbitrary_flow()) {
            let scaled = FlowField::new(flow.u() * 2.5f32, flow.v() * 2.5f32).unwrap();
            let base = hof(&flow, &bbox, DEFAULT_MAG_THRESHOLD).unwrap();
            let big = hof(&scaled, &bbox, DEFAULT_MAG_THRESHOLD).unwrap();
            prop_assert!(big.background_count <= base.background_count);
            for (a, b) in base.bins.iter().zip(&big.bins) {
                if a.pixel_count > 0 && b.pixel_count == a.pixel_count {
                    prop_assert!(b.mean_speed() >= a.mean_speed());
                }
            }
        }

        #[test]
        fn quantize_log_speed_is_monotone(a in 1.5f64..200.0, b in 1.5f64..200.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(
                quantize_log_speed(lo, LOG_SPEED_BASE).unwrap()
                    <= quantize_log_speed(hi, LOG_SPEED_BASE).unwrap()
            );
        }

        #[test]
        fn rotating_by_one_bin_shifts_indices(
            bins in proptest::collection::vec((0usize..12, 0.1f64..0.9, 2.0f64..10.0), 1..30)
        ) {
            // Build pixels at angles safely inside their bins so the f64
            // rotation cannot cross a boundary.
            let n = bins.len();
            let mut u = Array2::<f32>::zeros((1, n));
            let mut v = Array2::<f32>::zeros((1, n));
            let mut ur = Array2::<f32>::zeros((1, n));
            let mut vr = Array2::<f32>::zeros((1, n));
            for (i, &(b, t, mag)) in bins.iter().enumerate() {
                let angle = (b as f64 + t) * BIN_WIDTH;
                u[[0, i]] = (mag * angle.cos()) as f32;
                v[[0, i]] = (mag * angle.sin()) as f32;
                let rotated = angle + BIN_WIDTH;
                ur[[0, i]] = (mag * rotated.cos()) as f32;
                vr[[0, i]] = (mag * rotated.sin()) as f32;
            }
            let bbox = full_box(1, n);
            let base = hof(&FlowField::new(u, v).unwrap(), &bbox, DEFAULT_MAG_THRESHOLD).unwrap();
            let rot = hof(&FlowField::new(ur, vr).unwrap(), &bbox, DEFAULT_MAG_THRESHOLD).unwrap();
            for b in 0..ORIENTATION_BINS {
                let shifted = (b + 1) % ORIENTATION_BINS;
                prop_assert_eq!(base.bins[b].pixel_count, rot.bins[shifted].pixel_count);
                prop_assert!((base.bins[b].mean_speed() - rot.bins[shifted].mean_speed()).abs() < 1e-5);
            }
        }
    }
}
