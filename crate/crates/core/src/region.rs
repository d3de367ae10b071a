//! Region discovery: cluster per-pixel activity vectors into K regions,
//! choose K by the average pairwise divergence of the resulting regional
//! models, and render region maps.

use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gmm::{
    self, fit_em, mean_pairwise_divergence, CovarianceMode, EmConfig, FitMetadata,
    GaussianComponent, GaussianMixture,
};
use crate::heatmap::{ActivityHeatmap, DEFAULT_MIN_MASS};
use crate::normalcy::{self, TrainConfig, Tracklet};

/// Clustering backend for pixel vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterMethod {
    GmmFull,
    GmmDiagonal,
    GmmSpherical,
    GmmTied,
    Kmeans,
}

impl ClusterMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterMethod::GmmFull => "gmm-full",
            ClusterMethod::GmmDiagonal => "gmm-diag",
            ClusterMethod::GmmSpherical => "gmm-spherical",
            ClusterMethod::GmmTied => "gmm-tied",
            ClusterMethod::Kmeans => "kmeans",
        }
    }

    fn covariance_mode(self) -> Option<CovarianceMode> {
        match self {
            ClusterMethod::GmmFull => Some(CovarianceMode::Full),
            ClusterMethod::GmmDiagonal => Some(CovarianceMode::Diagonal),
            ClusterMethod::GmmSpherical => Some(CovarianceMode::Spherical),
            ClusterMethod::GmmTied => Some(CovarianceMode::Tied),
            ClusterMethod::Kmeans => None,
        }
    }
}

impl FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<ClusterMethod> {
        match s {
            "gmm-full" => Ok(ClusterMethod::GmmFull),
            "gmm-diag" => Ok(ClusterMethod::GmmDiagonal),
            "gmm-spherical" => Ok(ClusterMethod::GmmSpherical),
            "gmm-tied" => Ok(ClusterMethod::GmmTied),
            "kmeans" => Ok(ClusterMethod::Kmeans),
            other => Err(Error::invalid_argument(format!(
                "unknown cluster method {other:?}"
            ))),
        }
    }
}

/// How a region map was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProvenance {
    pub seed: u64,
    /// K requested at discovery time; the map's own `k()` can be smaller
    /// when clusters collapse.
    pub requested_k: usize,
    pub method: String,
    /// Mean pairwise symmetric KL between the discovered regions'
    /// single-Gaussian summaries; near zero flags non-separable structure.
    pub mu_kl: Option<f64>,
    /// Pixel count the clustering model was fit on.
    pub subsample: usize,
}

impl RegionProvenance {
    /// Provenance for maps constructed directly (grids, tests, IO).
    pub fn direct(requested_k: usize) -> RegionProvenance {
        RegionProvenance {
            seed: 0,
            requested_k,
            method: "direct".into(),
            mu_kl: None,
            subsample: 0,
        }
    }
}

/// Full-frame region labeling. Labels are dense: every value in
/// `[0, k)` appears at least once.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionMap {
    labels: Array2<u32>,
    k: usize,
    provenance: RegionProvenance,
}

impl RegionMap {
    pub fn new(labels: Array2<u32>, provenance: RegionProvenance) -> Result<RegionMap> {
        let (h, w) = labels.dim();
        if h == 0 || w == 0 {
            return Err(Error::invalid_argument("region map must be non-empty"));
        }
        let max = *labels.iter().max().expect("non-empty") as usize;
        let k = max + 1;
        let mut seen = vec![false; k];
        for &v in labels.iter() {
            seen[v as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::invalid_argument(format!(
                "label {missing} never appears; labels must be dense in [0, {k})"
            )));
        }
        Ok(RegionMap {
            labels,
            k,
            provenance,
        })
    }

    pub fn height(&self) -> usize {
        self.labels.nrows()
    }

    pub fn width(&self) -> usize {
        self.labels.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &Array2<u32> {
        &self.labels
    }

    pub fn label_at(&self, row: usize, col: usize) -> u32 {
        self.labels[[row, col]]
    }

    pub fn provenance(&self) -> &RegionProvenance {
        &self.provenance
    }

    /// Pixel count per label.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.k];
        for &v in self.labels.iter() {
            counts[v as usize] += 1;
        }
        counts
    }

    /// SHA-256 over dimensions and row-major little-endian labels; binds
    /// model sets to the exact map they were trained on.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.height() as u64).to_le_bytes());
        hasher.update((self.width() as u64).to_le_bytes());
        for &v in self.labels.iter() {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

pub const DEFAULT_SUBSAMPLE: usize = 200_000;
/// Per-region sample cap for the provenance divergence estimate.
const PROVENANCE_KL_CAP: usize = 1000;
/// Active-pixel count below which nearest-active fill brute-forces.
const BRUTE_FORCE_ACTIVE: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoverOptions {
    pub method: ClusterMethod,
    /// Weight of the appended normalized pixel coordinates; 0 disables
    /// the spatial columns.
    pub spatial_affinity: f64,
    pub subsample: usize,
    pub seed: u64,
    pub min_mass: f64,
}

impl Default for DiscoverOptions {
    fn default() -> DiscoverOptions {
        DiscoverOptions {
            method: ClusterMethod::GmmFull,
            spatial_affinity: 0.0,
            subsample: DEFAULT_SUBSAMPLE,
            seed: 0,
            min_mass: DEFAULT_MIN_MASS,
        }
    }
}

/// Cluster the heatmap's active-pixel vectors into `k` regions and label
/// the full frame.
///
/// The clustering model is fit on a seeded uniform subsample; every
/// active pixel is then assigned exactly (argmax posterior, or nearest
/// centroid for k-means), inactive pixels take the label of the nearest
/// active pixel, and labels are renumbered by descending pixel count.
pub fn discover_regions(
    heatmap: &ActivityHeatmap,
    k: usize,
    options: &DiscoverOptions,
) -> Result<RegionMap> {
    if k < 2 {
        return Err(Error::invalid_argument("region discovery needs K >= 2"));
    }
    if !(options.spatial_affinity >= 0.0) {
        return Err(Error::invalid_argument("spatial_affinity must be >= 0"));
    }
    if options.subsample == 0 {
        return Err(Error::invalid_argument("subsample must be >= 1"));
    }
    let (coords, mut features) = heatmap.pixel_features(options.min_mass);
    let n_active = coords.len();
    if n_active < k {
        return Err(Error::invalid_argument(format!(
            "{n_active} active pixels cannot form {k} regions"
        )));
    }
    if options.spatial_affinity > 0.0 {
        features = append_spatial_columns(
            &features,
            &coords,
            heatmap.height(),
            heatmap.width(),
            options.spatial_affinity,
        );
    }

    let sub_n = options.subsample.min(n_active).max(k);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let sub_indices: Vec<usize> = if sub_n < n_active {
        let mut picked = rand::seq::index::sample(&mut rng, n_active, sub_n).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n_active).collect()
    };
    let mut sub = Array2::<f64>::zeros((sub_indices.len(), features.ncols()));
    for (row, &idx) in sub_indices.iter().enumerate() {
        sub.row_mut(row).assign(&features.row(idx));
    }

    // Fit on the subsample, assign every active pixel exactly.
    let mut assignments: Vec<u32> = Vec::with_capacity(n_active);
    match options.method.covariance_mode() {
        Some(mode) => {
            let model = fit_em(&sub, k, mode, &EmConfig::with_seed(options.seed))?;
            for row in features.rows() {
                assignments.push(model.argmax_posterior(&row)? as u32);
            }
        }
        None => {
            let (centers, _) = gmm::kmeans(&sub, k, options.seed, 30);
            for row in features.rows() {
                assignments.push(nearest_center(&row, &centers));
            }
        }
    }

    // Provisional full-frame labels, then renumber by size over the
    // complete map so label 0 is always the largest region.
    let mut labels = fill_full_frame(heatmap.height(), heatmap.width(), &coords, &assignments);
    let remap = size_ordering(&labels, k);
    for v in labels.iter_mut() {
        *v = remap[*v as usize];
    }
    let k_eff = remap.iter().filter(|&&m| m != u32::MAX).count();

    let mu_kl = provenance_divergence(&sub, &sub_indices, &assignments, &remap, k_eff);

    RegionMap::new(
        labels,
        RegionProvenance {
            seed: options.seed,
            requested_k: k,
            method: options.method.as_str().into(),
            mu_kl: Some(mu_kl),
            subsample: sub_indices.len(),
        },
    )
}

fn append_spatial_columns(
    features: &Array2<f64>,
    coords: &[(usize, usize)],
    height: usize,
    width: usize,
    lambda: f64,
) -> Array2<f64> {
    let (n, d) = features.dim();
    let mut out = Array2::<f64>::zeros((n, d + 2));
    for i in 0..n {
        out.slice_mut(ndarray::s![i, ..d])
            .assign(&features.row(i));
        let (y, x) = coords[i];
        out[[i, d]] = lambda * x as f64 / width as f64;
        out[[i, d + 1]] = lambda * y as f64 / height as f64;
    }
    out
}

fn nearest_center(row: &ArrayView1<f64>, centers: &Array2<f64>) -> u32 {
    let mut best = 0u32;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.rows().into_iter().enumerate() {
        let d: f64 = row
            .iter()
            .zip(center.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best_d {
            best_d = d;
            best = c as u32;
        }
    }
    best
}

/// Label every pixel: active pixels use their cluster assignment,
/// inactive pixels copy the nearest active pixel (Euclidean; ties to the
/// smaller label, then row-major order).
fn fill_full_frame(
    height: usize,
    width: usize,
    coords: &[(usize, usize)],
    assignments: &[u32],
) -> Array2<u32> {
    let mut labels = Array2::<u32>::from_elem((height, width), u32::MAX);
    for (&(y, x), &a) in coords.iter().zip(assignments) {
        labels[[y, x]] = a;
    }
    if coords.len() == height * width {
        return labels;
    }
    if coords.len() <= BRUTE_FORCE_ACTIVE {
        for y in 0..height {
            for x in 0..width {
                if labels[[y, x]] != u32::MAX {
                    continue;
                }
                let mut best = (u64::MAX, u32::MAX);
                for (&(ay, ax), &a) in coords.iter().zip(assignments) {
                    let dy = ay as i64 - y as i64;
                    let dx = ax as i64 - x as i64;
                    let d2 = (dy * dy + dx * dx) as u64;
                    if (d2, a) < best {
                        best = (d2, a);
                    }
                }
                labels[[y, x]] = best.1;
            }
        }
        return labels;
    }
    let reference = labels.clone();
    for y in 0..height {
        for x in 0..width {
            if reference[[y, x]] != u32::MAX {
                continue;
            }
            labels[[y, x]] = nearest_active_ring(&reference, y, x);
        }
    }
    labels
}

/// Expanding Chebyshev ring search for the nearest labeled pixel. Rings
/// keep expanding until the ring's minimum possible squared distance
/// exceeds the best found, guaranteeing the Euclidean optimum.
fn nearest_active_ring(labels: &Array2<u32>, y: usize, x: usize) -> u32 {
    let (h, w) = labels.dim();
    let mut best = (u64::MAX, u32::MAX);
    let max_r = h.max(w);
    for r in 1..=max_r {
        if best.0 != u64::MAX && (r as u64) * (r as u64) > best.0 {
            break;
        }
        let yi = y as i64;
        let xi = x as i64;
        let r = r as i64;
        let visit = |py: i64, px: i64, best: &mut (u64, u32)| {
            if py < 0 || px < 0 || py >= h as i64 || px >= w as i64 {
                return;
            }
            let label = labels[[py as usize, px as usize]];
            if label == u32::MAX {
                return;
            }
            let dy = py - yi;
            let dx = px - xi;
            let d2 = (dy * dy + dx * dx) as u64;
            if (d2, label) < *best {
                *best = (d2, label);
            }
        };
        for px in (xi - r)..=(xi + r) {
            visit(yi - r, px, &mut best);
            visit(yi + r, px, &mut best);
        }
        for py in (yi - r + 1)..=(yi + r - 1) {
            visit(py, xi - r, &mut best);
            visit(py, xi + r, &mut best);
        }
    }
    best.1
}

/// Old-label -> new-label mapping ordered by descending pixel count
/// (ties to the smaller old label); labels with no pixels map to
/// `u32::MAX` and must not appear in the input map.
fn size_ordering(labels: &Array2<u32>, k: usize) -> Vec<u32> {
    let mut counts = vec![0usize; k];
    for &v in labels.iter() {
        counts[v as usize] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut remap = vec![u32::MAX; k];
    let mut next = 0u32;
    for old in order {
        if counts[old] > 0 {
            remap[old] = next;
            next += 1;
        }
    }
    remap
}

/// Single-Gaussian summary divergence between the discovered regions,
/// estimated on capped per-region subsample slices. A collapsed map
/// (fewer than two populated regions) reports zero separation.
fn provenance_divergence(
    sub: &Array2<f64>,
    sub_indices: &[usize],
    assignments: &[u32],
    remap: &[u32],
    k_eff: usize,
) -> f64 {
    if k_eff < 2 {
        return 0.0;
    }
    let d = sub.ncols();
    let mut by_region: Vec<Vec<usize>> = vec![Vec::new(); k_eff];
    for (row, &idx) in sub_indices.iter().enumerate() {
        let new = remap[assignments[idx] as usize];
        if new != u32::MAX {
            by_region[new as usize].push(row);
        }
    }
    let mut models = Vec::new();
    let mut samples = Vec::new();
    for rows in &by_region {
        if rows.len() < 2 {
            continue;
        }
        let take: Vec<usize> = if rows.len() > PROVENANCE_KL_CAP {
            (0..PROVENANCE_KL_CAP)
                .map(|i| rows[i * rows.len() / PROVENANCE_KL_CAP])
                .collect()
        } else {
            rows.clone()
        };
        let mut mat = Array2::<f64>::zeros((take.len(), d));
        for (i, &r) in take.iter().enumerate() {
            mat.row_mut(i).assign(&sub.row(r));
        }
        match summary_gaussian(&mat) {
            Ok(model) => {
                models.push(model);
                samples.push(mat);
            }
            Err(_) => continue,
        }
    }
    if models.len() < 2 {
        return 0.0;
    }
    let model_refs: Vec<&GaussianMixture> = models.iter().collect();
    let sample_refs: Vec<&Array2<f64>> = samples.iter().collect();
    mean_pairwise_divergence(&model_refs, &sample_refs).unwrap_or(0.0)
}

fn summary_gaussian(samples: &Array2<f64>) -> Result<GaussianMixture> {
    let (n, d) = samples.dim();
    let mean = samples.mean_axis(ndarray::Axis(0)).expect("n >= 2");
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
        cov[[a, a]] += 1e-6;
    }
    GaussianMixture::new(
        vec![GaussianComponent::new(1.0, mean, cov)],
        CovarianceMode::Full,
        FitMetadata::default(),
    )
}

/// Non-overlapping `cell` x `cell` grid baseline; partial cells at the
/// right/bottom borders are their own regions. Labels run row-major over
/// cells.
pub fn grid_region_map(height: usize, width: usize, cell: usize) -> Result<RegionMap> {
    if height == 0 || width == 0 {
        return Err(Error::invalid_argument("grid map must be non-empty"));
    }
    if cell == 0 {
        return Err(Error::invalid_argument("cell size must be >= 1"));
    }
    let cells_x = width.div_ceil(cell);
    let mut labels = Array2::<u32>::zeros((height, width));
    for y in 0..height {
        for x in 0..width {
            labels[[y, x]] = ((y / cell) * cells_x + x / cell) as u32;
        }
    }
    let mut provenance = RegionProvenance::direct(height.div_ceil(cell) * cells_x);
    provenance.method = "grid".into();
    RegionMap::new(labels, provenance)
}

/// Best pixel agreement between two same-shape label maps over all
/// relabelings of `predicted`. Exhaustive in the larger label count, so
/// it is limited to 8 labels.
pub fn label_agreement(predicted: &RegionMap, truth: &RegionMap) -> Result<f64> {
    if predicted.height() != truth.height() || predicted.width() != truth.width() {
        return Err(Error::invalid_argument("label maps differ in shape"));
    }
    let k = predicted.k().max(truth.k());
    if k > 8 {
        return Err(Error::invalid_argument(
            "exhaustive label matching supports at most 8 labels",
        ));
    }
    let total = (predicted.height() * predicted.width()) as f64;
    let mut best = 0.0f64;
    for perm in label_permutations(k) {
        let matches = predicted
            .labels()
            .iter()
            .zip(truth.labels().iter())
            .filter(|(&p, &t)| perm[p as usize] == t as usize)
            .count();
        best = best.max(matches as f64 / total);
    }
    Ok(best)
}

fn label_permutations(k: usize) -> Vec<Vec<usize>> {
    if k <= 1 {
        return vec![vec![0; k]];
    }
    let mut out = Vec::new();
    for sub in label_permutations(k - 1) {
        for pos in 0..k {
            let mut p = sub.clone();
            p.insert(pos, k - 1);
            out.push(p);
        }
    }
    out
}

/// Result of the Eq. 3 search over candidate K values.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectKReport {
    pub best_k: usize,
    /// `(K, mu_KL)` per candidate in ascending K; failed candidates hold
    /// negative infinity.
    pub table: Vec<(usize, f64)>,
}

/// For each candidate K: discover regions, train regional normalcy
/// models on the tracklets, and score the candidate by the mean pairwise
/// symmetric KL between regional models over their own training
/// features. The maximizing K wins; ties go to the smaller K.
pub fn select_k(
    heatmap: &ActivityHeatmap,
    tracklets: &[Tracklet],
    k_candidates: &[usize],
    discover: &DiscoverOptions,
    train: &TrainConfig,
) -> Result<SelectKReport> {
    if k_candidates.is_empty() {
        return Err(Error::invalid_argument("no candidate K values"));
    }
    if k_candidates.iter().any(|&k| k < 2) {
        return Err(Error::invalid_argument("candidate K values must be >= 2"));
    }
    let mut candidates = k_candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();

    let mut table = Vec::with_capacity(candidates.len());
    for &k in &candidates {
        let mu = candidate_mu_kl(heatmap, tracklets, k, discover, train)
            .unwrap_or(f64::NEG_INFINITY);
        table.push((k, mu));
    }
    let mut best: Option<(usize, f64)> = None;
    for &(k, mu) in &table {
        if mu == f64::NEG_INFINITY {
            continue;
        }
        // Strict comparison keeps the smaller K on ties.
        if best.map_or(true, |(_, b)| mu > b) {
            best = Some((k, mu));
        }
    }
    let (best_k, _) = best.ok_or_else(|| {
        Error::invalid_argument("no candidate K produced a usable region decomposition")
    })?;
    Ok(SelectKReport { best_k, table })
}

fn candidate_mu_kl(
    heatmap: &ActivityHeatmap,
    tracklets: &[Tracklet],
    k: usize,
    discover: &DiscoverOptions,
    train: &TrainConfig,
) -> Result<f64> {
    let map = discover_regions(heatmap, k, discover)?;
    let groups = normalcy::group_features_by_region(tracklets, &map)?;
    let set = normalcy::train_regional_models(&map, &groups, train)?;
    let mut models = Vec::new();
    let mut samples = Vec::new();
    for (label, group) in groups.iter().enumerate() {
        if group.nrows() == 0 {
            continue;
        }
        models.push(set.model_for(label as u32)?);
        samples.push(group);
    }
    if models.len() < 2 {
        return Err(Error::UndefinedMetric(
            "fewer than two regions hold training features".into(),
        ));
    }
    mean_pairwise_divergence(&models, &samples)
}

/// Deterministic distinct colors for region rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

impl Palette {
    pub fn generate(k: usize) -> Palette {
        let mut colors: Vec<[u8; 3]> = Vec::with_capacity(k);
        for i in 0..k {
            let hue = (i as f64 * 0.618033988749895).fract();
            let value = match i % 3 {
                0 => 0.95,
                1 => 0.70,
                _ => 0.82,
            };
            let mut rgb = hsv_to_rgb(hue, 0.65, value);
            while colors.contains(&rgb) {
                rgb[2] = rgb[2].wrapping_add(1);
            }
            colors.push(rgb);
        }
        Palette { colors }
    }

    pub fn from_colors(colors: Vec<[u8; 3]>) -> Result<Palette> {
        if colors.is_empty() {
            return Err(Error::invalid_argument("palette needs at least one color"));
        }
        Ok(Palette { colors })
    }

    pub fn color(&self, label: u32) -> [u8; 3] {
        self.colors[label as usize % self.colors.len()]
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = h * 6.0;
    let i = h6.floor() as i64;
    let f = h6 - i as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match i.rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

/// Render the map as a binary PPM (P6) raster with one palette color per
/// label.
pub fn render_region_map(map: &RegionMap, palette: &Palette) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", map.width(), map.height());
    let mut out = Vec::with_capacity(header.len() + map.height() * map.width() * 3);
    out.extend_from_slice(header.as_bytes());
    for &label in map.labels().iter() {
        out.extend_from_slice(&palette.color(label));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::KernelPolicy;
    use crate::motion::MotionAttribute;
    use crate::types::{BoundingBox, Category, TrackletObservation};

    fn obs(x: f64, y: f64, category: Category, motion: MotionAttribute) -> TrackletObservation {
        TrackletObservation {
            video_id: "v".into(),
            track_id: 0,
            frame: 0,
            bbox: BoundingBox::new(x - 4.0, y - 3.0, x + 4.0, y + 3.0),
            category,
            motion,
        }
    }

    /// Cars moving east across the top strip, pedestrians across the
    /// bottom strip.
    fn two_lane_heatmap() -> (ActivityHeatmap, Array2<u32>) {
        let h = 40;
        let w = 60;
        let mut hm = ActivityHeatmap::new(h, w, KernelPolicy::Adaptive).unwrap();
        let east = MotionAttribute::moving(std::f64::consts::PI / 12.0, 8.0);
        let slow = MotionAttribute::moving(std::f64::consts::PI / 12.0, 1.8);
        for step in 0..40 {
            let x = 5.0 + step as f64 * 1.25;
            if x + 4.0 >= w as f64 {
                break;
            }
            hm.accumulate(&obs(x, 10.0, Category::Car, east)).unwrap();
            hm.accumulate(&obs(x, 30.0, Category::Person, slow)).unwrap();
        }
        let mut truth = Array2::<u32>::zeros((h, w));
        for y in 20..h {
            for x in 0..w {
                truth[[y, x]] = 1;
            }
        }
        (hm, truth)
    }

    fn permutation_agreement(a: &Array2<u32>, b: &Array2<u32>, k: usize) -> f64 {
        let perms: Vec<Vec<usize>> = permutations(k);
        let total = a.len() as f64;
        perms
            .iter()
            .map(|perm| {
                let matches = a
                    .iter()
                    .zip(b.iter())
                    .filter(|(&x, &y)| perm[x as usize] == y as usize)
                    .count();
                matches as f64 / total
            })
            .fold(0.0, f64::max)
    }

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for sub in permutations(k - 1) {
            for pos in 0..k {
                let mut p = sub.clone();
                p.insert(pos, k - 1);
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn two_lane_scene_recovers_layout() {
        let (hm, truth) = two_lane_heatmap();
        let map = discover_regions(&hm, 2, &DiscoverOptions::default()).unwrap();
        assert_eq!(map.k(), 2);
        let agreement = permutation_agreement(map.labels(), &truth, 2);
        assert!(agreement >= 0.95, "agreement {agreement}");
        // Size ordering: label 0 is the largest region.
        let counts = map.counts();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
        // Separable structure shows up as a clearly positive divergence.
        assert!(map.provenance().mu_kl.unwrap() > 1.0);
    }

    #[test]
    fn discovery_is_deterministic() {
        let (hm, _) = two_lane_heatmap();
        let a = discover_regions(&hm, 3, &DiscoverOptions::default()).unwrap();
        let b = discover_regions(&hm, 3, &DiscoverOptions::default()).unwrap();
        assert_eq!(a, b);
        let c = discover_regions(
            &hm,
            3,
            &DiscoverOptions {
                seed: 99,
                ..DiscoverOptions::default()
            },
        )
        .unwrap();
        assert_eq!(c.provenance().seed, 99);
    }

    #[test]
    fn identical_activity_collapses_with_zero_divergence() {
        let mut hm = ActivityHeatmap::new(24, 24, KernelPolicy::Fixed(2.0)).unwrap();
        let motion = MotionAttribute::moving(0.3, 2.0);
        for y in [6.0, 12.0, 18.0] {
            for x in [6.0, 12.0, 18.0] {
                hm.accumulate(&obs(x, y, Category::Person, motion)).unwrap();
            }
        }
        let map = discover_regions(&hm, 2, &DiscoverOptions::default()).unwrap();
        let mu = map.provenance().mu_kl.unwrap();
        assert!(mu.abs() < 1e-3, "mu_kl {mu}");
    }

    #[test]
    fn inactive_pixels_take_nearest_active_label() {
        let mut hm = ActivityHeatmap::new(30, 30, KernelPolicy::Fixed(1.5)).unwrap();
        let east = MotionAttribute::moving(std::f64::consts::PI / 12.0, 8.0);
        let slow = MotionAttribute::moving(std::f64::consts::PI / 12.0, 1.8);
        hm.accumulate(&obs(6.0, 6.0, Category::Car, east)).unwrap();
        hm.accumulate(&obs(24.0, 24.0, Category::Person, slow)).unwrap();
        let map = discover_regions(&hm, 2, &DiscoverOptions::default()).unwrap();
        // Far corners are inactive; each must copy its nearby cluster.
        assert_eq!(map.label_at(0, 0), map.label_at(6, 6));
        assert_eq!(map.label_at(29, 29), map.label_at(24, 24));
    }

    #[test]
    fn discovery_rejects_small_inputs() {
        let hm = ActivityHeatmap::new(8, 8, KernelPolicy::Adaptive).unwrap();
        assert!(discover_regions(&hm, 2, &DiscoverOptions::default()).is_err());
        let (populated, _) = two_lane_heatmap();
        assert!(discover_regions(&populated, 1, &DiscoverOptions::default()).is_err());
    }

    #[test]
    fn kmeans_method_matches_layout_too() {
        let (hm, truth) = two_lane_heatmap();
        let map = discover_regions(
            &hm,
            2,
            &DiscoverOptions {
                method: ClusterMethod::Kmeans,
                ..DiscoverOptions::default()
            },
        )
        .unwrap();
        let agreement = permutation_agreement(map.labels(), &truth, 2);
        assert!(agreement >= 0.9, "agreement {agreement}");
    }

    #[test]
    fn spatial_affinity_accepts_lambda() {
        let (hm, truth) = two_lane_heatmap();
        let map = discover_regions(
            &hm,
            2,
            &DiscoverOptions {
                spatial_affinity: 0.5,
                ..DiscoverOptions::default()
            },
        )
        .unwrap();
        let agreement = permutation_agreement(map.labels(), &truth, 2);
        assert!(agreement >= 0.9, "agreement {agreement}");
    }

    #[test]
    fn grid_region_map_examples() {
        assert_eq!(grid_region_map(160, 160, 80).unwrap().k(), 4);
        assert_eq!(grid_region_map(720, 1280, 80).unwrap().k(), 144);
        assert_eq!(grid_region_map(50, 50, 80).unwrap().k(), 1);
        // Partial border cells are their own regions.
        let map = grid_region_map(100, 90, 80).unwrap();
        assert_eq!(map.k(), 4);
        assert_eq!(map.label_at(0, 0), 0);
        assert_eq!(map.label_at(0, 85), 1);
        assert_eq!(map.label_at(99, 0), 2);
        assert_eq!(map.label_at(99, 85), 3);
    }

    #[test]
    fn region_map_rejects_sparse_labels() {
        let mut labels = Array2::<u32>::zeros((4, 4));
        labels[[0, 0]] = 2;
        assert!(RegionMap::new(labels, RegionProvenance::direct(3)).is_err());
    }

    #[test]
    fn content_hash_tracks_labels() {
        let a = grid_region_map(16, 16, 8).unwrap();
        let b = grid_region_map(16, 16, 8).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = grid_region_map(16, 16, 4).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }

    #[test]
    fn render_covers_palette_and_is_uniform_for_k1() {
        let map = grid_region_map(10, 10, 80).unwrap();
        let palette = Palette::generate(1);
        let bytes = render_region_map(&map, &palette);
        assert!(bytes.starts_with(b"P6\n10 10\n255\n"));
        let body = &bytes[bytes.len() - 300..];
        let c = palette.color(0);
        assert!(body.chunks(3).all(|px| px == c));

        let grid = grid_region_map(160, 160, 80).unwrap();
        let pal4 = Palette::generate(4);
        let rendered = render_region_map(&grid, &pal4);
        let body = &rendered[rendered.len() - 160 * 160 * 3..];
        for label in 0..4u32 {
            let c = pal4.color(label);
            assert!(body.chunks(3).any(|px| px == c));
        }
    }

    #[test]
    fn palette_colors_are_distinct() {
        let palette = Palette::generate(256);
        let mut seen = std::collections::HashSet::new();
        for c in palette.colors() {
            assert!(seen.insert(*c));
        }
    }
}
