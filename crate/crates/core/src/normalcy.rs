//! Object features, tracklet-to-region assignment, and per-region
//! normalcy mixtures with the two-tier small-sample fallback.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{
    select_components_bic, CovarianceMode, EmConfig, FitMetadata, GaussianComponent,
    GaussianMixture,
};
use crate::motion::MotionAttribute;
use crate::region::RegionMap;
use crate::types::{BoundingBox, Category, TrackletObservation};

/// Dimension of the object feature: 4 one-hot category entries plus
/// orientation and speed.
pub const FEATURE_DIM: usize = 6;
pub const DEFAULT_MIN_SAMPLES: usize = 50;
pub const DEFAULT_K_MAX: usize = 20;

const REGION_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// `f = [one-hot category | orientation | speed]` in R^6.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectFeature {
    pub category: Category,
    pub orientation: f64,
    pub speed: f64,
}

impl ObjectFeature {
    pub fn new(category: Category, motion: &MotionAttribute) -> ObjectFeature {
        ObjectFeature {
            category,
            orientation: motion.orientation,
            speed: motion.speed,
        }
    }

    pub fn vector(&self) -> Array1<f64> {
        let mut v = Array1::<f64>::zeros(FEATURE_DIM);
        v[self.category.index()] = 1.0;
        v[4] = self.orientation;
        v[5] = self.speed;
        v
    }
}

/// A fixed-length window of one track: per-frame boxes and centers plus
/// the object feature shared by the window.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub video_id: String,
    pub track_id: u64,
    pub start_frame: u64,
    pub boxes: Vec<BoundingBox>,
    pub centers: Vec<(f64, f64)>,
    pub category: Category,
    pub motion: MotionAttribute,
}

impl Tracklet {
    pub fn new(
        video_id: impl Into<String>,
        track_id: u64,
        start_frame: u64,
        boxes: Vec<BoundingBox>,
        category: Category,
        motion: MotionAttribute,
    ) -> Result<Tracklet> {
        if boxes.is_empty() {
            return Err(Error::invalid_argument("tracklet needs >= 1 frame"));
        }
        for (i, b) in boxes.iter().enumerate() {
            if !b.is_valid() {
                return Err(Error::invalid_argument(format!(
                    "tracklet frame {i} has a degenerate box"
                )));
            }
        }
        motion.validate()?;
        let centers = boxes.iter().map(|b| b.center()).collect();
        Ok(Tracklet {
            video_id: video_id.into(),
            track_id,
            start_frame,
            boxes,
            centers,
            category,
            motion,
        })
    }

    pub fn window(&self) -> usize {
        self.boxes.len()
    }

    /// Frames covered: `[start, start + t_w)`.
    pub fn frames(&self) -> std::ops::Range<u64> {
        self.start_frame..self.start_frame + self.window() as u64
    }

    pub fn feature(&self) -> ObjectFeature {
        ObjectFeature::new(self.category, &self.motion)
    }

    /// Per-frame observations for heatmap accumulation.
    pub fn observations(&self) -> impl Iterator<Item = TrackletObservation> + '_ {
        self.boxes.iter().enumerate().map(move |(i, b)| TrackletObservation {
            video_id: self.video_id.clone(),
            track_id: self.track_id,
            frame: self.start_frame + i as u64,
            bbox: *b,
            category: self.category,
            motion: self.motion,
        })
    }
}

/// Region label at the tracklet's first center, rounded half-up and
/// clamped into the frame.
pub fn assign_region(tracklet: &Tracklet, map: &RegionMap) -> Result<u32> {
    let (x, y) = *tracklet
        .centers
        .first()
        .ok_or_else(|| Error::invalid_argument("tracklet has no centers"))?;
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::invalid_argument("non-finite tracklet center"));
    }
    let col = clamp_round(x, map.width());
    let row = clamp_round(y, map.height());
    Ok(map.label_at(row, col))
}

fn clamp_round(v: f64, limit: usize) -> usize {
    let rounded = (v + 0.5).floor();
    if rounded < 0.0 {
        0
    } else if rounded > (limit - 1) as f64 {
        limit - 1
    } else {
        rounded as usize
    }
}

/// Model tier a region ended up with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionModelKind {
    /// BIC-selected mixture trained on the region's own samples.
    BicMixture,
    /// Single full-covariance Gaussian (ridge-regularized).
    SingleGaussian,
    /// Too few samples; scoring uses the global pooled model.
    PooledGlobal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel {
    pub kind: RegionModelKind,
    pub training_samples: usize,
    /// Present for the first two tiers; `None` defers to the global model.
    pub mixture: Option<GaussianMixture>,
}

/// Per-region normalcy models bound to a specific region map by content
/// hash, plus the global pooled fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalModelSet {
    pub region_map_hash: String,
    pub regions: Vec<RegionModel>,
    pub global: GaussianMixture,
}

impl RegionalModelSet {
    pub fn k(&self) -> usize {
        self.regions.len()
    }

    /// The mixture that scores region `label`.
    pub fn model_for(&self, label: u32) -> Result<&GaussianMixture> {
        let region = self
            .regions
            .get(label as usize)
            .ok_or_else(|| Error::invalid_argument(format!("no region {label}")))?;
        Ok(region.mixture.as_ref().unwrap_or(&self.global))
    }

    pub fn validate_against(&self, map: &RegionMap) -> Result<()> {
        if self.regions.len() != map.k() {
            return Err(Error::ArtifactMismatch(format!(
                "model set has {} regions but the map has {}",
                self.regions.len(),
                map.k()
            )));
        }
        let hash = map.content_hash();
        if self.region_map_hash != hash {
            return Err(Error::ArtifactMismatch(format!(
                "model set was trained on region map {} but got {}",
                self.region_map_hash, hash
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k_max: usize,
    pub min_samples: usize,
    pub em: EmConfig,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            k_max: DEFAULT_K_MAX,
            min_samples: DEFAULT_MIN_SAMPLES,
            em: EmConfig::default(),
        }
    }
}

/// Train one normalcy model per region.
///
/// Tiering: `n >= min_samples` gets a BIC-selected mixture;
/// `D+2 <= n < min_samples` a single ridge-regularized Gaussian;
/// smaller regions defer to the global pooled mixture.
pub fn train_regional_models(
    map: &RegionMap,
    features_by_region: &[Array2<f64>],
    config: &TrainConfig,
) -> Result<RegionalModelSet> {
    if features_by_region.len() != map.k() {
        return Err(Error::invalid_argument(format!(
            "{} feature groups for a {}-region map",
            features_by_region.len(),
            map.k()
        )));
    }
    let d = FEATURE_DIM;
    for (label, group) in features_by_region.iter().enumerate() {
        if group.nrows() > 0 && group.ncols() != d {
            return Err(Error::invalid_argument(format!(
                "region {label} features have dimension {}, expected {d}",
                group.ncols()
            )));
        }
    }
    let total: usize = features_by_region.iter().map(|g| g.nrows()).sum();
    if total == 0 {
        return Err(Error::invalid_argument("no training samples"));
    }
    if !features_by_region
        .iter()
        .any(|g| g.nrows() >= config.min_samples)
    {
        return Err(Error::invalid_argument(format!(
            "no region reaches min_samples = {}",
            config.min_samples
        )));
    }

    let mut pooled = Array2::<f64>::zeros((total, d));
    let mut at = 0;
    for group in features_by_region {
        let n = group.nrows();
        if n > 0 {
            pooled.slice_mut(ndarray::s![at..at + n, ..]).assign(group);
            at += n;
        }
    }
    let global = select_components_bic(
        &pooled,
        config.k_max,
        CovarianceMode::Full,
        &config.em,
    )?;

    let mut regions = Vec::with_capacity(map.k());
    for (label, group) in features_by_region.iter().enumerate() {
        let n = group.nrows();
        let em = EmConfig {
            seed: config
                .em
                .seed
                .wrapping_add((label as u64 + 1).wrapping_mul(REGION_SEED_STRIDE)),
            ..config.em.clone()
        };
        let model = if n >= config.min_samples {
            RegionModel {
                kind: RegionModelKind::BicMixture,
                training_samples: n,
                mixture: Some(select_components_bic(
                    group,
                    config.k_max,
                    CovarianceMode::Full,
                    &em,
                )?),
            }
        } else if n >= d + 2 {
            RegionModel {
                kind: RegionModelKind::SingleGaussian,
                training_samples: n,
                mixture: Some(single_gaussian(group, config.em.ridge)?),
            }
        } else {
            RegionModel {
                kind: RegionModelKind::PooledGlobal,
                training_samples: n,
                mixture: None,
            }
        };
        regions.push(model);
    }

    Ok(RegionalModelSet {
        region_map_hash: map.content_hash(),
        regions,
        global,
    })
}

/// Maximum-likelihood single Gaussian with `ridge` added to the
/// covariance diagonal.
fn single_gaussian(samples: &Array2<f64>, ridge: f64) -> Result<GaussianMixture> {
    let (n, d) = samples.dim();
    let mean = samples.mean_axis(Axis(0)).expect("n >= 1");
    let mut cov = Array2::<f64>::zeros((d, d));
    for row in samples.rows() {
        let v = row.to_owned() - &mean;
        for a in 0..d {
            for b in 0..=a {
                cov[[a, b]] += v[a] * v[b];
            }
        }
    }
    cov /= n as f64;
    for a in 0..d {
        for b in (a + 1)..d {
            cov[[a, b]] = cov[[b, a]];
        }
        cov[[a, a]] += ridge.max(1e-9);
    }
    GaussianMixture::new(
        vec![GaussianComponent::new(1.0, mean, cov)],
        CovarianceMode::Full,
        FitMetadata::default(),
    )
}

/// One mixture component's explanation: its parameters and the training
/// sample nearest to its mean in Mahalanobis distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub component: usize,
    pub weight: f64,
    pub mean: Array1<f64>,
    /// Row index into the provided training features.
    pub nearest: usize,
    pub distance: f64,
}

/// Prototypical events of a region with a trained (non-fallback)
/// mixture; fallback tiers yield an empty list. Components are reported
/// in descending weight.
pub fn prototypical_events(
    set: &RegionalModelSet,
    label: u32,
    features: &Array2<f64>,
) -> Result<Vec<Prototype>> {
    let region = set
        .regions
        .get(label as usize)
        .ok_or_else(|| Error::invalid_argument(format!("no region {label}")))?;
    if region.kind != RegionModelKind::BicMixture {
        return Ok(Vec::new());
    }
    let mixture = region
        .mixture
        .as_ref()
        .ok_or_else(|| Error::Internal("BIC tier without a mixture".into()))?;
    if features.nrows() == 0 {
        return Err(Error::invalid_argument(
            "prototype lookup needs training features",
        ));
    }
    let mut out = Vec::with_capacity(mixture.components().len());
    for (j, comp) in mixture.components().iter().enumerate() {
        let mut nearest = 0usize;
        let mut best = f64::INFINITY;
        for (i, row) in features.rows().into_iter().enumerate() {
            let dist = mixture.mahalanobis_sq(j, &row)?;
            if dist < best {
                best = dist;
                nearest = i;
            }
        }
        out.push(Prototype {
            component: j,
            weight: comp.weight,
            mean: comp.mean.clone(),
            nearest,
            distance: best.sqrt(),
        });
    }
    out.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .unwrap()
            .then(a.component.cmp(&b.component))
    });
    Ok(out)
}

/// Group tracklet features by their assigned region.
pub fn group_features_by_region(
    tracklets: &[Tracklet],
    map: &RegionMap,
) -> Result<Vec<Array2<f64>>> {
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); map.k()];
    for t in tracklets {
        let label = assign_region(t, map)? as usize;
        rows[label].extend(t.feature().vector().iter());
    }
    Ok(rows
        .into_iter()
        .map(|flat| {
            let n = flat.len() / FEATURE_DIM;
            Array2::from_shape_vec((n, FEATURE_DIM), flat).expect("row-major construction")
        })
        .collect())
}
