//! Lane-scene simulator: zones spawn tracked objects that follow their
//! zone's category/heading/speed profile; injected anomalies break it.

use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::GroundTruthAnnotation;
use crate::motion::{FlowField, MotionAttribute, ORIENTATION_BINS, orientation_bin_of};
use crate::region::{RegionMap, RegionProvenance};
use crate::types::{BoundingBox, Category, TrackletObservation};

/// Fixed box extents (width, height) per category, pixels.
pub fn category_box_size(category: Category) -> (f64, f64) {
    match category {
        Category::Person => (8.0, 16.0),
        Category::Bicycle => (10.0, 14.0),
        Category::Car => (26.0, 12.0),
        Category::Motorcycle => (10.0, 10.0),
    }
}

/// One rectangular zone with a behavior profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub name: String,
    /// Covered pixels, half-open like every box in the crate.
    pub rect: BoundingBox,
    /// Per-category spawn weights; zero forbids the category here.
    pub category_weights: [f64; 4],
    /// Travel direction, radians. Ignored when `any_direction`.
    pub heading: f64,
    pub any_direction: bool,
    /// Log-normal speed parameters in ln(px/frame) space.
    pub log_speed_mu: f64,
    pub log_speed_sigma: f64,
    /// Expected spawns per 100 frames.
    pub spawn_rate: f64,
    /// Probability a spawn stays parked for its lifetime.
    pub stationary_fraction: f64,
}

impl Zone {
    pub fn new(name: impl Into<String>, rect: BoundingBox) -> Zone {
        Zone {
            name: name.into(),
            rect,
            category_weights: [1.0, 0.0, 0.0, 0.0],
            heading: 0.0,
            any_direction: false,
            log_speed_mu: 2.0f64.ln(),
            log_speed_sigma: 0.15,
            spawn_rate: 20.0,
            stationary_fraction: 0.0,
        }
    }

    pub fn with_categories(mut self, weights: [f64; 4]) -> Zone {
        self.category_weights = weights;
        self
    }

    pub fn with_heading(mut self, heading: f64) -> Zone {
        self.heading = heading;
        self.any_direction = false;
        self
    }

    pub fn with_any_direction(mut self) -> Zone {
        self.any_direction = true;
        self
    }

    /// Parameterize the log-normal by its distribution mean.
    pub fn with_mean_speed(mut self, mean: f64, sigma: f64) -> Zone {
        self.log_speed_mu = mean.ln() - sigma * sigma / 2.0;
        self.log_speed_sigma = sigma;
        self
    }

    pub fn with_spawn_rate(mut self, per_100_frames: f64) -> Zone {
        self.spawn_rate = per_100_frames;
        self
    }

    pub fn with_stationary_fraction(mut self, fraction: f64) -> Zone {
        self.stationary_fraction = fraction;
        self
    }

    pub fn mean_speed(&self) -> f64 {
        (self.log_speed_mu + self.log_speed_sigma * self.log_speed_sigma / 2.0).exp()
    }

    /// Speeds above this are anomalous in the zone (3 sigma in ln space).
    pub fn overspeed_threshold(&self) -> f64 {
        (self.log_speed_mu + 3.0 * self.log_speed_sigma).exp()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.rect.x1 && x < self.rect.x2 && y >= self.rect.y1 && y < self.rect.y2
    }

    /// Whether an observed (category, motion) pair breaks this zone's
    /// profile: forbidden category, parked where parking never happens,
    /// off-heading by more than one orientation bin, or over 3 ln-sigma
    /// speed.
    pub fn violates(&self, category: Category, motion: &MotionAttribute) -> bool {
        if self.category_weights[category.index()] == 0.0 {
            return true;
        }
        if motion.stationary {
            return self.stationary_fraction == 0.0;
        }
        if !self.any_direction {
            let bin = orientation_bin_of(motion.orientation) as isize;
            let zone_bin = orientation_bin_of(normalize_angle(self.heading)) as isize;
            let diff = (bin - zone_bin).rem_euclid(ORIENTATION_BINS as isize);
            if diff.min(ORIENTATION_BINS as isize - diff) > 1 {
                return true;
            }
        }
        motion.speed > self.overspeed_threshold()
    }

    fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !self.rect.is_valid() {
            return Err(Error::invalid_argument(format!(
                "zone {:?} has a degenerate rectangle",
                self.name
            )));
        }
        if self.rect.x1 < 0.0
            || self.rect.y1 < 0.0
            || self.rect.x2 > width as f64
            || self.rect.y2 > height as f64
        {
            return Err(Error::invalid_argument(format!(
                "zone {:?} exceeds the {height}x{width} frame",
                self.name
            )));
        }
        let weight_sum: f64 = self.category_weights.iter().sum();
        if self.category_weights.iter().any(|&w| w < 0.0) || weight_sum <= 0.0 {
            return Err(Error::invalid_argument(format!(
                "zone {:?} category weights must be normalizable",
                self.name
            )));
        }
        if !self.heading.is_finite()
            || !(self.log_speed_sigma > 0.0 && self.log_speed_sigma.is_finite())
            || !self.log_speed_mu.is_finite()
        {
            return Err(Error::invalid_argument(format!(
                "zone {:?} motion profile must be finite with positive sigma",
                self.name
            )));
        }
        if !(self.spawn_rate >= 0.0 && self.spawn_rate.is_finite()) {
            return Err(Error::invalid_argument(format!(
                "zone {:?} spawn rate must be >= 0",
                self.name
            )));
        }
        if !(0.0..=1.0).contains(&self.stationary_fraction) {
            return Err(Error::invalid_argument(format!(
                "zone {:?} stationary fraction must be in [0, 1]",
                self.name
            )));
        }
        Ok(())
    }
}

/// Frame geometry plus its zones. Zones may leave gaps (flagged by
/// `has_gaps`); gap pixels take the nearest zone's label in the raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub height: usize,
    pub width: usize,
    pub zones: Vec<Zone>,
}

impl SceneLayout {
    pub fn new(height: usize, width: usize, zones: Vec<Zone>) -> Result<SceneLayout> {
        if height == 0 || width == 0 {
            return Err(Error::invalid_argument("frame must be non-empty"));
        }
        if zones.is_empty() {
            return Err(Error::invalid_argument("layout needs at least one zone"));
        }
        for zone in &zones {
            zone.validate(height, width)?;
        }
        Ok(SceneLayout {
            height,
            width,
            zones,
        })
    }

    /// The street scenario: four eastbound lanes whose category mixes
    /// form a cycle (person/bicycle, bicycle/car, car/motorcycle,
    /// motorcycle/person). Every zone pair then leaves exactly one
    /// category per side unsupported by the other, so the pairwise
    /// divergences of Eq. 3 stay homogeneous and any merge of two zones
    /// covers its neighbours' categories, diluting the mean. That keeps
    /// decomposition quality peaked at the true K: axes that factorize
    /// the layout (all strips one category, say) hand a coarser
    /// partition the same contrast at K = 2.
    ///
    /// No zone camps: a loiterer piles sixty frames of stationary mass
    /// onto a handful of pixels, which splits a strip's signature in
    /// two and hands discovery a spurious cluster at higher K.
    ///
    /// The shared heading sits mid-bin so conforming windows all report
    /// one orientation; a heading on a bin boundary would split every
    /// zone's motion evidence across two bins for nothing.
    pub fn four_lane(height: usize, width: usize) -> Result<SceneLayout> {
        let h = height as f64;
        let w = width as f64;
        let east = PI / 12.0;
        let strip = |i: f64| BoundingBox::new(0.0, i * h / 4.0, w, (i + 1.0) * h / 4.0);
        SceneLayout::new(
            height,
            width,
            vec![
                Zone::new("promenade", strip(0.0))
                    .with_categories([0.5, 0.5, 0.0, 0.0])
                    .with_heading(east)
                    .with_mean_speed(2.0, 0.15)
                    .with_spawn_rate(30.0),
                Zone::new("local-lane", strip(1.0))
                    .with_categories([0.0, 0.5, 0.5, 0.0])
                    .with_heading(east)
                    .with_mean_speed(4.0, 0.15)
                    .with_spawn_rate(25.0),
                Zone::new("express-lane", strip(2.0))
                    .with_categories([0.0, 0.0, 0.5, 0.5])
                    .with_heading(east)
                    .with_mean_speed(9.0, 0.2)
                    .with_spawn_rate(25.0),
                Zone::new("frontage", strip(3.0))
                    .with_categories([0.5, 0.0, 0.0, 0.5])
                    .with_heading(east)
                    .with_mean_speed(2.8, 0.15)
                    .with_spawn_rate(30.0),
            ],
        )
    }

    /// True when some pixel lies in no zone rectangle.
    pub fn has_gaps(&self) -> bool {
        for y in 0..self.height {
            for x in 0..self.width {
                if self.zone_at(x as f64, y as f64).is_none() {
                    return true;
                }
            }
        }
        false
    }

    /// Index of the first zone containing the point.
    pub fn zone_at(&self, x: f64, y: f64) -> Option<usize> {
        self.zones.iter().position(|z| z.contains(x, y))
    }

    /// Zone-label raster: each pixel takes its containing zone (first
    /// match), or the nearest zone when uncovered.
    pub fn raster(&self, seed: u64) -> Result<RegionMap> {
        let mut labels = Array2::<u32>::zeros((self.height, self.width));
        for y in 0..self.height {
            for x in 0..self.width {
                let label = match self.zone_at(x as f64, y as f64) {
                    Some(i) => i,
                    None => self.nearest_zone(x as f64, y as f64),
                };
                labels[[y, x]] = label as u32;
            }
        }
        RegionMap::new(
            labels,
            RegionProvenance {
                seed,
                requested_k: self.zones.len(),
                method: "scene-layout".into(),
                mu_kl: None,
                subsample: 0,
            },
        )
    }

    fn nearest_zone(&self, x: f64, y: f64) -> usize {
        let mut best = (f64::INFINITY, 0usize);
        for (i, zone) in self.zones.iter().enumerate() {
            let dx = (zone.rect.x1 - x).max(x - (zone.rect.x2 - 1.0)).max(0.0);
            let dy = (zone.rect.y1 - y).max(y - (zone.rect.y2 - 1.0)).max(0.0);
            let d = dx * dx + dy * dy;
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    /// A category the zone forbids.
    WrongCategory,
    /// Travel against the zone heading.
    WrongDirection,
    /// Roughly 3.5x the zone's mean speed.
    Overspeed,
    /// A walker that conforms to its home zone for a while, then turns
    /// to cut across the lanes; anomalous only once its motion breaks a
    /// zone profile.
    CrossZonePath,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 4] = [
        AnomalyKind::WrongCategory,
        AnomalyKind::WrongDirection,
        AnomalyKind::Overspeed,
        AnomalyKind::CrossZonePath,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::WrongCategory => "wrong-category",
            AnomalyKind::WrongDirection => "wrong-direction",
            AnomalyKind::Overspeed => "overspeed",
            AnomalyKind::CrossZonePath => "cross-zone-path",
        }
    }
}

impl std::str::FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<AnomalyKind> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid_argument(format!("unknown anomaly kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    /// Probability that a spawned track is anomalous.
    pub rate: f64,
    pub kinds: Vec<AnomalyKind>,
}

impl AnomalySpec {
    pub fn none() -> AnomalySpec {
        AnomalySpec {
            rate: 0.0,
            kinds: Vec::new(),
        }
    }

    pub fn all(rate: f64) -> AnomalySpec {
        AnomalySpec {
            rate,
            kinds: AnomalyKind::ALL.to_vec(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::invalid_argument(format!(
                "anomaly rate {} outside [0, 1]",
                self.rate
            )));
        }
        if self.rate > 0.0 && self.kinds.is_empty() {
            return Err(Error::invalid_argument(
                "anomaly rate > 0 requires at least one kind",
            ));
        }
        Ok(())
    }
}

/// Everything one simulation emits. The raster is the ground-truth
/// region layout that discovery should recover.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthOutput {
    pub video_id: String,
    pub n_frames: u64,
    pub seed: u64,
    pub layout: SceneLayout,
    pub anomalies: AnomalySpec,
    pub observations: Vec<TrackletObservation>,
    pub annotations: Vec<GroundTruthAnnotation>,
    /// Track id -> injected kind, spawn order.
    pub anomalous_tracks: Vec<(u64, AnomalyKind)>,
    pub raster: RegionMap,
}

const MOVING_MAX_AGE: u64 = 120;
const STATIONARY_MAX_AGE: u64 = 60;
const OVERSPEED_FACTOR: f64 = 3.5;
const HEADING_JITTER: f64 = 0.05;
const FRAME_HEADING_JITTER: f64 = 0.02;
const FRAME_SPEED_JITTER: f64 = 0.02;
/// Cross-zone walkers turn within this age window (frames).
const TURN_AGE_MIN: u64 = 10;
const TURN_AGE_MAX: u64 = 26;

struct LiveTrack {
    id: u64,
    zone: usize,
    category: Category,
    x: f64,
    y: f64,
    heading: f64,
    /// Zero when parked.
    speed: f64,
    anomaly: Option<AnomalyKind>,
    age: u64,
    max_age: u64,
    /// Cross-zone walkers swap to this heading at the given age.
    turn: Option<(u64, f64)>,
    /// Cross-zone walkers roam the whole frame; everyone else dies on
    /// leaving their zone.
    zone_bound: bool,
}

pub fn simulate_scene(
    layout: &SceneLayout,
    n_frames: u64,
    anomalies: &AnomalySpec,
    seed: u64,
) -> Result<SynthOutput> {
    if n_frames == 0 {
        return Err(Error::invalid_argument("n_frames must be >= 1"));
    }
    anomalies.validate()?;
    let raster = layout.raster(seed)?;
    let video_id = format!("synth-{seed:04}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracks: Vec<LiveTrack> = Vec::new();
    let mut next_id = 0u64;
    let mut observations = Vec::new();
    let mut annotations = Vec::new();
    let mut anomalous_tracks = Vec::new();

    for frame in 0..n_frames {
        for (zi, zone) in layout.zones.iter().enumerate() {
            if zone.spawn_rate <= 0.0 {
                continue;
            }
            let spawns = Poisson::new(zone.spawn_rate / 100.0)
                .map_err(|e| Error::invalid_argument(format!("zone {:?}: {e}", zone.name)))?
                .sample(&mut rng) as u64;
            for _ in 0..spawns {
                let track = spawn_track(layout, zi, anomalies, next_id, &mut rng);
                if let Some(track) = track {
                    if let Some(kind) = track.anomaly {
                        anomalous_tracks.push((track.id, kind));
                    }
                    tracks.push(track);
                    next_id += 1;
                }
            }
        }

        let mut survivors = Vec::with_capacity(tracks.len());
        for mut track in tracks.drain(..) {
            if let Some((at, heading)) = track.turn {
                if track.age == at {
                    track.heading = heading;
                }
            }
            let motion = step_motion(&track, &mut rng);
            let (w, h) = category_box_size(track.category);
            let bbox = BoundingBox::new(
                track.x - w / 2.0,
                track.y - h / 2.0,
                track.x + w / 2.0,
                track.y + h / 2.0,
            );
            observations.push(TrackletObservation {
                video_id: video_id.clone(),
                track_id: track.id,
                frame,
                bbox,
                category: track.category,
                motion,
            });
            if track.anomaly.is_some() {
                let zone = &layout.zones[current_zone(layout, &raster, track.x, track.y)];
                if zone.violates(track.category, &motion) {
                    annotations.push(GroundTruthAnnotation {
                        video_id: video_id.clone(),
                        frame,
                        bbox,
                        track_id: track.id,
                    });
                }
            }
            if motion.stationary {
                track.age += 1;
            } else {
                track.x += motion.speed * motion.orientation.cos();
                track.y += motion.speed * motion.orientation.sin();
                track.age += 1;
            }
            // Zone-bound tracks keep their whole box inside the zone so
            // deposited activity never bleeds across lane boundaries;
            // cross-zone walkers only need their center on the frame.
            let alive = track.age < track.max_age
                && track.x >= 0.0
                && track.x < layout.width as f64
                && track.y >= 0.0
                && track.y < layout.height as f64
                && (!track.zone_bound
                    || box_within(&layout.zones[track.zone].rect, track.x, track.y, w, h));
            if alive {
                survivors.push(track);
            }
        }
        tracks = survivors;
    }

    Ok(SynthOutput {
        video_id,
        n_frames,
        seed,
        layout: layout.clone(),
        anomalies: anomalies.clone(),
        observations,
        annotations,
        anomalous_tracks,
        raster,
    })
}

/// Zone owning a point, via the true raster so gap pixels resolve the
/// same way everywhere.
fn current_zone(layout: &SceneLayout, raster: &RegionMap, x: f64, y: f64) -> usize {
    let col = clamp_round(x, layout.width);
    let row = clamp_round(y, layout.height);
    raster.label_at(row, col) as usize
}

fn box_within(rect: &BoundingBox, x: f64, y: f64, w: f64, h: f64) -> bool {
    x - w / 2.0 >= rect.x1
        && x + w / 2.0 <= rect.x2
        && y - h / 2.0 >= rect.y1
        && y + h / 2.0 <= rect.y2
}

fn clamp_round(v: f64, limit: usize) -> usize {
    let idx = (v + 0.5).floor();
    if idx < 0.0 {
        0
    } else {
        (idx as usize).min(limit - 1)
    }
}

fn spawn_track(
    layout: &SceneLayout,
    zone_index: usize,
    anomalies: &AnomalySpec,
    id: u64,
    rng: &mut ChaCha8Rng,
) -> Option<LiveTrack> {
    let zone = &layout.zones[zone_index];
    let kind = if anomalies.rate > 0.0 && rng.random::<f64>() < anomalies.rate {
        let feasible: Vec<AnomalyKind> = anomalies
            .kinds
            .iter()
            .copied()
            .filter(|k| kind_feasible(*k, zone, layout))
            .collect();
        if feasible.is_empty() {
            None
        } else {
            Some(feasible[rng.random_range(0..feasible.len())])
        }
    } else {
        None
    };

    let category = match kind {
        Some(AnomalyKind::WrongCategory) => {
            let forbidden: Vec<Category> = Category::ALL
                .into_iter()
                .filter(|c| zone.category_weights[c.index()] == 0.0)
                .collect();
            forbidden[rng.random_range(0..forbidden.len())]
        }
        Some(AnomalyKind::CrossZonePath) => Category::Person,
        _ => sample_category(zone, rng),
    };

    let (bw, bh) = category_box_size(category);
    let x = spawn_coord(zone.rect.x1, zone.rect.x2, bw / 2.0, rng);
    let y = spawn_coord(zone.rect.y1, zone.rect.y2, bh / 2.0, rng);

    let heading_jitter = Normal::new(0.0, HEADING_JITTER).expect("const sigma");
    let conforming = |rng: &mut ChaCha8Rng| {
        if zone.any_direction {
            rng.random_range(0.0..TAU)
        } else {
            normalize_angle(zone.heading + heading_jitter.sample(rng))
        }
    };
    let heading = match kind {
        Some(AnomalyKind::WrongDirection) => {
            normalize_angle(zone.heading + PI + heading_jitter.sample(rng))
        }
        _ => conforming(rng),
    };
    // Walkers behave until the turn, then head for the farther
    // horizontal frame edge to cross the most lanes.
    let turn = match kind {
        Some(AnomalyKind::CrossZonePath) => {
            let toward = if y > layout.height as f64 / 2.0 {
                3.0 * PI / 2.0
            } else {
                PI / 2.0
            };
            Some((
                rng.random_range(TURN_AGE_MIN..TURN_AGE_MAX),
                normalize_angle(toward + heading_jitter.sample(rng)),
            ))
        }
        _ => None,
    };

    let mut max_age = MOVING_MAX_AGE;
    let speed = match kind {
        Some(AnomalyKind::Overspeed) => zone.mean_speed() * OVERSPEED_FACTOR,
        // Walkers and the other injected kinds move at the home zone's
        // normal pace; their violation lies elsewhere.
        Some(_) => draw_speed(zone.log_speed_mu, zone.log_speed_sigma, rng),
        None => {
            if rng.random::<f64>() < zone.stationary_fraction {
                max_age = STATIONARY_MAX_AGE;
                0.0
            } else {
                draw_speed(zone.log_speed_mu, zone.log_speed_sigma, rng)
            }
        }
    };

    Some(LiveTrack {
        id,
        zone: zone_index,
        category,
        x,
        y,
        heading,
        speed,
        anomaly: kind,
        age: 0,
        max_age,
        turn,
        zone_bound: kind != Some(AnomalyKind::CrossZonePath),
    })
}

fn kind_feasible(kind: AnomalyKind, zone: &Zone, layout: &SceneLayout) -> bool {
    match kind {
        AnomalyKind::WrongCategory => zone.category_weights.iter().any(|&w| w == 0.0),
        AnomalyKind::WrongDirection => !zone.any_direction,
        AnomalyKind::Overspeed => true,
        // The walker needs a person-friendly home and somewhere to
        // cross to; until the turn it is indistinguishable from a
        // resident.
        AnomalyKind::CrossZonePath => {
            layout.zones.len() > 1 && zone.category_weights[Category::Person.index()] > 0.0
        }
    }
}

fn sample_category(zone: &Zone, rng: &mut ChaCha8Rng) -> Category {
    let total: f64 = zone.category_weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for cat in Category::ALL {
        u -= zone.category_weights[cat.index()];
        if u <= 0.0 {
            return cat;
        }
    }
    Category::Motorcycle
}

fn spawn_coord(lo: f64, hi: f64, margin: f64, rng: &mut ChaCha8Rng) -> f64 {
    let (a, b) = (lo + margin, hi - margin);
    if a < b {
        rng.random_range(a..b)
    } else {
        (lo + hi) / 2.0
    }
}

/// Log-normal draw clamped into the zone's normal band: at least the
/// 1.5 px/frame moving floor, at most the 3-sigma overspeed threshold.
fn draw_speed(mu: f64, sigma: f64, rng: &mut ChaCha8Rng) -> f64 {
    let raw = LogNormal::new(mu, sigma).expect("validated sigma").sample(rng);
    raw.clamp((mu - 3.0 * sigma).exp().max(1.5), (mu + 3.0 * sigma).exp())
}

fn step_motion(track: &LiveTrack, rng: &mut ChaCha8Rng) -> MotionAttribute {
    if track.speed == 0.0 {
        return MotionAttribute::stationary();
    }
    let heading = normalize_angle(
        track.heading + Normal::new(0.0, FRAME_HEADING_JITTER).expect("const").sample(rng),
    );
    let speed = (track.speed
        * (1.0 + Normal::new(0.0, FRAME_SPEED_JITTER).expect("const").sample(rng)))
    .max(1.5);
    MotionAttribute::moving(heading, speed)
}

fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU { 0.0 } else { t }
}

/// Per requested frame, a flow raster with every observed box filled by
/// its velocity; overlaps resolve to the later-spawned (higher id)
/// track.
pub fn emit_flow_rasters(output: &SynthOutput, frames: &[u64]) -> Result<Vec<FlowField>> {
    for &f in frames {
        if f >= output.n_frames {
            return Err(Error::invalid_argument(format!(
                "frame {f} outside the simulated range 0..{}",
                output.n_frames
            )));
        }
    }
    let (h, w) = (output.layout.height, output.layout.width);
    let mut rasters = Vec::with_capacity(frames.len());
    for &f in frames {
        let mut u = Array2::<f32>::zeros((h, w));
        let mut v = Array2::<f32>::zeros((h, w));
        for obs in output.observations.iter().filter(|o| o.frame == f) {
            let (vu, vv) = if obs.motion.stationary {
                (0.0f32, 0.0f32)
            } else {
                (
                    (obs.motion.speed * obs.motion.orientation.cos()) as f32,
                    (obs.motion.speed * obs.motion.orientation.sin()) as f32,
                )
            };
            for row in obs.bbox.pixel_rows(h) {
                for col in obs.bbox.pixel_cols(w) {
                    u[[row, col]] = vu;
                    v[[row, col]] = vv;
                }
            }
        }
        rasters.push(FlowField::new(u, v)?);
    }
    Ok(rasters)
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, BTreeSet};

    use crate::heatmap::{ActivityHeatmap, KernelPolicy};
    use crate::motion::hof;
    use crate::region::{DiscoverOptions, discover_regions, label_agreement};

    use super::*;

    #[test]
    fn zero_rate_emits_no_annotations() {
        let layout = SceneLayout::four_lane(96, 128).unwrap();
        let out = simulate_scene(&layout, 200, &AnomalySpec::none(), 1).unwrap();
        assert!(out.annotations.is_empty());
        assert!(out.anomalous_tracks.is_empty());
        assert!(out.observations.len() > 500, "{}", out.observations.len());
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let layout = SceneLayout::four_lane(64, 96).unwrap();
        let spec = AnomalySpec::all(0.1);
        let a = simulate_scene(&layout, 120, &spec, 9).unwrap();
        let b = simulate_scene(&layout, 120, &spec, 9).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = simulate_scene(&layout, 120, &spec, 10).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap()
        );
    }

    #[test]
    fn emitted_speeds_track_zone_mean() {
        let zone = Zone::new("road", BoundingBox::new(0.0, 0.0, 400.0, 60.0))
            .with_heading(0.0)
            .with_mean_speed(4.0, 0.2)
            .with_spawn_rate(60.0);
        let layout = SceneLayout::new(60, 400, vec![zone]).unwrap();
        let out = simulate_scene(&layout, 400, &AnomalySpec::none(), 3).unwrap();
        let tracks: BTreeSet<u64> = out.observations.iter().map(|o| o.track_id).collect();
        assert!(tracks.len() >= 100, "only {} tracks", tracks.len());
        let speeds: Vec<f64> = out
            .observations
            .iter()
            .filter(|o| !o.motion.stationary)
            .map(|o| o.motion.speed)
            .collect();
        let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
        assert!((mean - 4.0).abs() / 4.0 < 0.1, "mean speed {mean}");
    }

    #[test]
    fn campers_spawn_and_conform_where_allowed() {
        let zone = Zone::new("plaza", BoundingBox::new(0.0, 0.0, 200.0, 80.0))
            .with_heading(0.0)
            .with_mean_speed(2.0, 0.15)
            .with_spawn_rate(40.0)
            .with_stationary_fraction(0.5);
        let layout = SceneLayout::new(80, 200, vec![zone]).unwrap();
        let out = simulate_scene(&layout, 300, &AnomalySpec::none(), 5).unwrap();
        let campers: Vec<_> = out
            .observations
            .iter()
            .filter(|o| o.motion.stationary)
            .collect();
        assert!(!campers.is_empty());
        assert!(campers.iter().all(|o| o.motion.speed == 0.0));
        // Camping is part of the plaza profile, not an anomaly.
        assert!(out.annotations.is_empty());
    }

    #[test]
    fn invalid_anomaly_specs_are_rejected() {
        let layout = SceneLayout::four_lane(64, 96).unwrap();
        for rate in [-0.1, 1.1] {
            let spec = AnomalySpec {
                rate,
                kinds: AnomalyKind::ALL.to_vec(),
            };
            assert!(matches!(
                simulate_scene(&layout, 10, &spec, 0),
                Err(Error::InvalidArgument(_))
            ));
        }
        let spec = AnomalySpec {
            rate: 0.5,
            kinds: vec![],
        };
        assert!(matches!(
            simulate_scene(&layout, 10, &spec, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn annotations_are_emitted_observations_of_anomalous_tracks() {
        let layout = SceneLayout::four_lane(96, 128).unwrap();
        let out = simulate_scene(&layout, 300, &AnomalySpec::all(0.3), 17).unwrap();
        assert!(!out.annotations.is_empty());
        let anomalous: BTreeSet<u64> = out.anomalous_tracks.iter().map(|(id, _)| *id).collect();
        for ann in &out.annotations {
            assert!(anomalous.contains(&ann.track_id));
            assert!(out.observations.iter().any(|o| {
                o.video_id == ann.video_id
                    && o.track_id == ann.track_id
                    && o.frame == ann.frame
                    && o.bbox == ann.bbox
            }));
        }
    }

    #[test]
    fn annotation_set_matches_violation_recheck() {
        let layout = SceneLayout::four_lane(96, 128).unwrap();
        let out = simulate_scene(&layout, 300, &AnomalySpec::all(0.25), 23).unwrap();
        let anomalous: BTreeSet<u64> = out.anomalous_tracks.iter().map(|(id, _)| *id).collect();
        let mut expected = Vec::new();
        for obs in &out.observations {
            if !anomalous.contains(&obs.track_id) {
                continue;
            }
            let zi = current_zone(&layout, &out.raster, obs.bbox.center().0, obs.bbox.center().1);
            if layout.zones[zi].violates(obs.category, &obs.motion) {
                expected.push((obs.track_id, obs.frame));
            }
        }
        let got: Vec<(u64, u64)> = out
            .annotations
            .iter()
            .map(|a| (a.track_id, a.frame))
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn cross_zone_walker_is_normal_at_home() {
        let layout = SceneLayout::four_lane(120, 96).unwrap();
        let spec = AnomalySpec {
            rate: 0.8,
            kinds: vec![AnomalyKind::CrossZonePath],
        };
        let out = simulate_scene(&layout, 400, &spec, 31).unwrap();
        let walkers: Vec<u64> = out
            .anomalous_tracks
            .iter()
            .filter(|(_, k)| *k == AnomalyKind::CrossZonePath)
            .map(|(id, _)| *id)
            .collect();
        assert!(!walkers.is_empty());
        let annotated: BTreeSet<(u64, u64)> = out
            .annotations
            .iter()
            .map(|a| (a.track_id, a.frame))
            .collect();
        let mut crossed_any = false;
        let mut conforming_prefix = false;
        for id in walkers {
            let obs: Vec<&TrackletObservation> = out
                .observations
                .iter()
                .filter(|o| o.track_id == id)
                .collect();
            let mut zones = BTreeSet::new();
            for o in &obs {
                let (cx, cy) = o.bbox.center();
                let zi = current_zone(&layout, &out.raster, cx, cy);
                zones.insert(zi);
                // Persons are forbidden in the traffic lanes, so any
                // visit there must be annotated.
                if layout.zones[zi].category_weights[Category::Person.index()] == 0.0 {
                    assert!(annotated.contains(&(id, o.frame)));
                }
            }
            // Before the turn the walker matches its home profile.
            assert!(!annotated.contains(&(id, obs[0].frame)));
            if obs
                .iter()
                .take(5)
                .all(|o| !annotated.contains(&(id, o.frame)))
            {
                conforming_prefix = true;
            }
            if zones.len() > 1 {
                crossed_any = true;
            }
        }
        assert!(crossed_any, "no walker left its origin zone");
        assert!(conforming_prefix, "no walker had an unannotated prefix");
    }

    #[test]
    fn injected_kinds_break_their_zone_profiles() {
        let layout = SceneLayout::four_lane(96, 128).unwrap();
        let out = simulate_scene(&layout, 300, &AnomalySpec::all(0.3), 41).unwrap();
        let kinds: BTreeMap<u64, AnomalyKind> = out.anomalous_tracks.iter().copied().collect();
        let mut seen = BTreeSet::new();
        for obs in &out.observations {
            let Some(kind) = kinds.get(&obs.track_id) else {
                continue;
            };
            seen.insert(*kind);
            let (cx, cy) = obs.bbox.center();
            let zone = &layout.zones[current_zone(&layout, &out.raster, cx, cy)];
            match kind {
                AnomalyKind::WrongCategory => {
                    assert_eq!(zone.category_weights[obs.category.index()], 0.0);
                }
                AnomalyKind::Overspeed => {
                    assert!(obs.motion.speed > zone.overspeed_threshold());
                }
                _ => {}
            }
        }
        assert!(seen.len() >= 3, "kinds seen: {seen:?}");
    }

    #[test]
    fn raster_matches_strips_and_gaps_are_flagged() {
        let layout = SceneLayout::four_lane(96, 128).unwrap();
        assert!(!layout.has_gaps());
        let map = layout.raster(0).unwrap();
        assert_eq!(map.k(), 4);
        assert_eq!(map.label_at(0, 0), 0);
        assert_eq!(map.label_at(30, 64), 1);
        assert_eq!(map.label_at(60, 64), 2);
        assert_eq!(map.label_at(95, 127), 3);

        let gapped = SceneLayout::new(
            40,
            40,
            vec![
                Zone::new("a", BoundingBox::new(0.0, 0.0, 40.0, 18.0)),
                Zone::new("b", BoundingBox::new(0.0, 22.0, 40.0, 40.0)),
            ],
        )
        .unwrap();
        assert!(gapped.has_gaps());
        let map = gapped.raster(0).unwrap();
        // Gap rows split to the nearest strip.
        assert_eq!(map.label_at(19, 5), 0);
        assert_eq!(map.label_at(21, 5), 1);
    }

    #[test]
    fn flow_rasters_reproduce_observation_motion() {
        let layout = SceneLayout::four_lane(96, 128).unwrap();
        let out = simulate_scene(&layout, 60, &AnomalySpec::none(), 5).unwrap();
        let err = emit_flow_rasters(&out, &[60]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));

        // A frame with no objects gives an all-zero raster.
        let empty = simulate_scene(&layout, 1, &AnomalySpec::none(), 12).unwrap();
        if empty.observations.is_empty() {
            let raster = &emit_flow_rasters(&empty, &[0]).unwrap()[0];
            assert!(raster.u().iter().all(|&x| x == 0.0));
        }

        let frame = out.observations[0].frame;
        let raster = &emit_flow_rasters(&out, &[frame]).unwrap()[0];
        // The last-emitted observation of the frame owns its box pixels.
        let obs = out
            .observations
            .iter()
            .filter(|o| o.frame == frame)
            .next_back()
            .unwrap();
        let hist = hof(raster, &obs.bbox, 1.5).unwrap();
        if !obs.motion.stationary {
            let expect_u = (obs.motion.speed * obs.motion.orientation.cos()) as f32;
            let (cx, cy) = obs.bbox.center();
            let got = raster.at(cy as usize, cx as usize);
            assert!((got.0 - expect_u as f64).abs() < 1e-12);
            assert!(hist.foreground_count() > 0);
        }
    }

    #[test]
    fn discovery_recovers_zone_layout() {
        let layout = SceneLayout::four_lane(72, 96).unwrap();
        for seed in [2u64, 7] {
            let out = simulate_scene(&layout, 500, &AnomalySpec::none(), seed).unwrap();
            let mut hm = ActivityHeatmap::new(72, 96, KernelPolicy::Adaptive).unwrap();
            for obs in &out.observations {
                hm.accumulate(obs).unwrap();
            }
            let opts = DiscoverOptions {
                seed,
                ..DiscoverOptions::default()
            };
            let map = discover_regions(&hm, 4, &opts).unwrap();
            let agreement = label_agreement(&map, &out.raster).unwrap();
            assert!(agreement >= 0.9, "seed {seed}: agreement {agreement}");
        }
    }
}
