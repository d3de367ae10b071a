//! Gaussian mixture numerics: EM fitting, log-density, sampling, BIC
//! model selection, and Monte-Carlo symmetric KL divergence between
//! mixtures.

mod em;
pub(crate) mod linalg;

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use em::fit_em;
pub(crate) use em::kmeans;

/// Covariance structure shared by all components of a mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    /// Each component has its own unrestricted D x D covariance.
    Full,
    /// Each component has its own diagonal covariance.
    Diagonal,
    /// Each component has an isotropic covariance `sigma^2 I`.
    Spherical,
    /// All components share one full covariance.
    Tied,
}

impl CovarianceMode {
    /// Free parameters of a k-component, D-dimensional mixture:
    /// `(k-1)` weights plus means plus the mode's covariance parameters.
    pub fn free_parameters(self, k: usize, d: usize) -> usize {
        let base = (k - 1) + k * d;
        match self {
            CovarianceMode::Full => base + k * d * (d + 1) / 2,
            CovarianceMode::Diagonal => base + k * d,
            CovarianceMode::Spherical => base + k,
            CovarianceMode::Tied => base + d * (d + 1) / 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceMode::Full => "full",
            CovarianceMode::Diagonal => "diagonal",
            CovarianceMode::Spherical => "spherical",
            CovarianceMode::Tied => "tied",
        }
    }
}

/// One weighted Gaussian of a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Array1<f64>, covariance: Array2<f64>) -> GaussianComponent {
        GaussianComponent {
            weight,
            mean,
            covariance,
        }
    }
}

/// EM fitting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the relative log-likelihood change.
    pub rel_tolerance: f64,
    /// Added to every covariance diagonal at each M-step.
    pub ridge: f64,
    /// Number of seeded k-means++ restarts; the best final
    /// log-likelihood wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> EmConfig {
        EmConfig {
            max_iterations: 200,
            rel_tolerance: 1e-4,
            ridge: 1e-6,
            restarts: 3,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn with_seed(seed: u64) -> EmConfig {
        EmConfig {
            seed,
            ..EmConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::invalid_argument("max_iterations must be >= 1"));
        }
        if !(self.rel_tolerance > 0.0) {
            return Err(Error::invalid_argument("rel_tolerance must be > 0"));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::invalid_argument("ridge must be >= 0"));
        }
        Ok(())
    }
}

/// One row of the BIC-vs-k table retained by [`select_components_bic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicEntry {
    pub k: usize,
    pub bic: f64,
}

/// Provenance of a fit: seed, iterations, final log-likelihood, and the
/// per-iteration log-likelihood trace of the winning restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub seed: u64,
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub log_likelihood_history: Vec<f64>,
    /// Components re-seeded at the lowest-likelihood sample after losing
    /// all responsibility.
    pub reseeded_components: usize,
    /// Filled by BIC selection with the full (k, BIC) table searched.
    pub bic_table: Vec<BicEntry>,
}

impl Default for FitMetadata {
    fn default() -> FitMetadata {
        FitMetadata {
            seed: 0,
            iterations: 0,
            final_log_likelihood: 0.0,
            log_likelihood_history: Vec::new(),
            reseeded_components: 0,
            bic_table: Vec::new(),
        }
    }
}

/// Cached per-component scoring state.
#[derive(Debug, Clone, PartialEq)]
struct ComponentScorer {
    log_weight: f64,
    chol: Array2<f64>,
    /// `-(D ln 2pi + ln det Sigma) / 2`
    log_norm: f64,
}

/// An immutable fitted Gaussian mixture.
///
/// Construction validates the invariants (weights sum to 1 within 1e-9,
/// consistent dimension, positive-definite covariances after at most a
/// tiny diagonal bump) and caches Cholesky factors, so scoring is safe to
/// share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureDoc", into = "MixtureDoc")]
pub struct GaussianMixture {
    dimension: usize,
    covariance_mode: CovarianceMode,
    components: Vec<GaussianComponent>,
    fit_metadata: FitMetadata,
    scorers: Vec<ComponentScorer>,
}

impl GaussianMixture {
    pub fn new(
        components: Vec<GaussianComponent>,
        covariance_mode: CovarianceMode,
        fit_metadata: FitMetadata,
    ) -> Result<GaussianMixture> {
        if components.is_empty() {
            return Err(Error::invalid_argument("mixture needs >= 1 component"));
        }
        let dimension = components[0].mean.len();
        if dimension == 0 {
            return Err(Error::invalid_argument("mixture dimension must be >= 1"));
        }
        let mut weight_sum = 0.0;
        for (i, c) in components.iter().enumerate() {
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(Error::invalid_argument(format!(
                    "component {i} weight {} must be positive and finite",
                    c.weight
                )));
            }
            if c.mean.len() != dimension || c.covariance.shape() != [dimension, dimension] {
                return Err(Error::invalid_argument(format!(
                    "component {i} dimension mismatch (expected {dimension})"
                )));
            }
            if c.mean.iter().any(|v| !v.is_finite())
                || c.covariance.iter().any(|v| !v.is_finite())
            {
                return Err(Error::invalid_argument(format!(
                    "component {i} has non-finite parameters"
                )));
            }
            weight_sum += c.weight;
        }
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid_argument(format!(
                "component weights sum to {weight_sum}, expected 1 within 1e-9"
            )));
        }
        if covariance_mode == CovarianceMode::Tied {
            let first = &components[0].covariance;
            if components.iter().any(|c| c.covariance != *first) {
                return Err(Error::invalid_argument(
                    "tied mode requires one shared covariance",
                ));
            }
        }
        let scorers = components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let chol = factorize(&c.covariance).ok_or_else(|| {
                    Error::invalid_argument(format!(
                        "component {i} covariance is not positive definite"
                    ))
                })?;
                let log_norm =
                    -0.5 * (dimension as f64 * (2.0 * PI).ln() + linalg::log_det_from_cholesky(&chol));
                Ok(ComponentScorer {
                    log_weight: c.weight.ln(),
                    chol,
                    log_norm,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianMixture {
            dimension,
            covariance_mode,
            components,
            fit_metadata,
            scorers,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn covariance_mode(&self) -> CovarianceMode {
        self.covariance_mode
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn fit_metadata(&self) -> &FitMetadata {
        &self.fit_metadata
    }

    pub(crate) fn set_bic_table(&mut self, table: Vec<BicEntry>) {
        self.fit_metadata.bic_table = table;
    }

    /// Mixture log-density at `x` via log-sum-exp over components.
    pub fn log_pdf(&self, x: &ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.dimension {
            return Err(Error::invalid_argument(format!(
                "point dimension {} does not match mixture dimension {}",
                x.len(),
                self.dimension
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_argument("point has non-finite entries"));
        }
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.scorers)
            .map(|(c, s)| {
                let v = x.to_owned() - &c.mean;
                s.log_weight + s.log_norm - 0.5 * linalg::mahalanobis_sq(&s.chol, &v.view())
            })
            .collect();
        Ok(linalg::logsumexp(&terms))
    }

    /// Per-sample log-densities for the rows of `samples`.
    pub fn log_pdf_rows(&self, samples: &Array2<f64>) -> Result<Vec<f64>> {
        samples
            .rows()
            .into_iter()
            .map(|row| self.log_pdf(&row))
            .collect()
    }

    /// Squared Mahalanobis distance of `x` from component `idx` under
    /// that component's covariance.
    pub fn mahalanobis_sq(&self, idx: usize, x: &ArrayView1<f64>) -> Result<f64> {
        let comp = self
            .components
            .get(idx)
            .ok_or_else(|| Error::invalid_argument(format!("no component {idx}")))?;
        if x.len() != self.dimension {
            return Err(Error::invalid_argument("dimension mismatch"));
        }
        let v = x.to_owned() - &comp.mean;
        Ok(linalg::mahalanobis_sq(&self.scorers[idx].chol, &v.view()))
    }

    /// Index of the component with the highest posterior responsibility
    /// for `x`; ties break toward the smaller index.
    pub fn argmax_posterior(&self, x: &ArrayView1<f64>) -> Result<usize> {
        if x.len() != self.dimension {
            return Err(Error::invalid_argument("dimension mismatch"));
        }
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (i, (c, s)) in self.components.iter().zip(&self.scorers).enumerate() {
            let v = x.to_owned() - &c.mean;
            let score =
                s.log_weight + s.log_norm - 0.5 * linalg::mahalanobis_sq(&s.chol, &v.view());
            if score > best_score {
                best_score = score;
                best = i;
            }
        }
        Ok(best)
    }

    /// Bayesian Information Criterion of this mixture on `samples`:
    /// `p ln N - 2 LL`, lower is better.
    pub fn bic(&self, samples: &Array2<f64>) -> Result<f64> {
        let n = samples.nrows();
        if n == 0 {
            return Err(Error::invalid_argument("BIC needs at least one sample"));
        }
        let ll: f64 = self.log_pdf_rows(samples)?.iter().sum();
        let p = self
            .covariance_mode
            .free_parameters(self.components.len(), self.dimension);
        Ok(p as f64 * (n as f64).ln() - 2.0 * ll)
    }

    /// Draw `n` rows; the component is chosen by weight, then the point by
    /// its Cholesky factor. Deterministic given `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Array2::<f64>::zeros((n, self.dimension));
        for mut row in out.rows_mut() {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut idx = self.components.len() - 1;
            for (i, c) in self.components.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            let comp = &self.components[idx];
            let chol = &self.scorers[idx].chol;
            let z: Vec<f64> = (0..self.dimension)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            for d in 0..self.dimension {
                let mut v = comp.mean[d];
                for j in 0..=d {
                    v += chol[[d, j]] * z[j];
                }
                row[d] = v;
            }
        }
        out
    }
}

/// Attempt a Cholesky factorization, bumping the diagonal once by a tiny
/// relative amount if the matrix is only borderline positive definite.
fn factorize(cov: &Array2<f64>) -> Option<Array2<f64>> {
    if let Some(l) = linalg::cholesky_lower(&cov.view()) {
        return Some(l);
    }
    let max_diag = cov.diag().iter().cloned().fold(0.0f64, f64::max);
    let bump = (max_diag * 1e-9).max(1e-300);
    let mut bumped = cov.clone();
    for d in 0..bumped.nrows() {
        bumped[[d, d]] += bump;
    }
    linalg::cholesky_lower(&bumped.view())
}

/// Fit `k = 1..=min(k_max, N)` mixtures and return the minimum-BIC model;
/// ties break toward smaller k. The searched (k, BIC) table is retained in
/// the winner's fit metadata. A k whose fit fails is skipped.
pub fn select_components_bic(
    samples: &Array2<f64>,
    k_max: usize,
    mode: CovarianceMode,
    config: &EmConfig,
) -> Result<GaussianMixture> {
    if k_max < 1 {
        return Err(Error::invalid_argument("k_max must be >= 1"));
    }
    if samples.nrows() == 0 {
        return Err(Error::invalid_argument("no samples"));
    }
    let upper = k_max.min(samples.nrows());
    let mut table = Vec::new();
    let mut best: Option<(f64, GaussianMixture)> = None;
    for k in 1..=upper {
        let fitted = match fit_em(samples, k, mode, config) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let bic = match fitted.bic(samples) {
            Ok(b) if b.is_finite() => b,
            _ => continue,
        };
        table.push(BicEntry { k, bic });
        // Strict less-than keeps the smallest k on ties.
        if best.as_ref().map_or(true, |(b, _)| bic < *b) {
            best = Some((bic, fitted));
        }
    }
    let (_, mut winner) =
        best.ok_or_else(|| Error::Internal("every candidate k failed to fit".into()))?;
    winner.set_bic_table(table);
    Ok(winner)
}

/// Monte-Carlo symmetric KL divergence between two mixtures:
/// `D_KL(P_i || P_j) + D_KL(P_j || P_i)`, each direction estimated as the
/// plug-in mean of the log-density ratio over that side's sample set.
pub fn symmetric_kl(
    model_i: &GaussianMixture,
    model_j: &GaussianMixture,
    samples_i: &Array2<f64>,
    samples_j: &Array2<f64>,
) -> Result<f64> {
    if samples_i.nrows() == 0 || samples_j.nrows() == 0 {
        return Err(Error::invalid_argument(
            "symmetric KL needs non-empty sample sets",
        ));
    }
    if model_i.dimension() != model_j.dimension() {
        return Err(Error::invalid_argument("mixture dimensions differ"));
    }
    let forward = mean_log_ratio(model_i, model_j, samples_i)?;
    let backward = mean_log_ratio(model_j, model_i, samples_j)?;
    Ok(forward + backward)
}

fn mean_log_ratio(
    p: &GaussianMixture,
    q: &GaussianMixture,
    samples: &Array2<f64>,
) -> Result<f64> {
    let n = samples.nrows() as f64;
    let mut acc = 0.0;
    for row in samples.rows() {
        acc += p.log_pdf(&row)? - q.log_pdf(&row)?;
    }
    Ok(acc / n)
}

/// Average symmetric KL over all ordered pairs `i != j` of K mixtures,
/// `1/(K(K-1)) * sum_{i != j} D_sym(P_i, P_j)`.
pub fn mean_pairwise_divergence(
    models: &[&GaussianMixture],
    samples: &[&Array2<f64>],
) -> Result<f64> {
    let k = models.len();
    if k < 2 {
        return Err(Error::invalid_argument(
            "mean pairwise divergence needs K >= 2 models",
        ));
    }
    if samples.len() != k {
        return Err(Error::invalid_argument("models and sample sets misaligned"));
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            // D_sym is symmetric, so each unordered pair covers both
            // ordered pairs.
            total += 2.0 * symmetric_kl(models[i], models[j], samples[i], samples[j])?;
        }
    }
    Ok(total / (k * (k - 1)) as f64)
}

/// Serialized form: covariance is always written as the full row-major
/// D x D matrix regardless of mode.
#[derive(Serialize, Deserialize)]
struct MixtureDoc {
    dimension: usize,
    covariance_mode: CovarianceMode,
    components: Vec<ComponentDoc>,
    fit_metadata: FitMetadata,
}

#[derive(Serialize, Deserialize)]
struct ComponentDoc {
    weight: f64,
    mean: Vec<f64>,
    covariance_row_major: Vec<f64>,
}

impl From<GaussianMixture> for MixtureDoc {
    fn from(m: GaussianMixture) -> MixtureDoc {
        MixtureDoc {
            dimension: m.dimension,
            covariance_mode: m.covariance_mode,
            components: m
                .components
                .iter()
                .map(|c| ComponentDoc {
                    weight: c.weight,
                    mean: c.mean.to_vec(),
                    covariance_row_major: c.covariance.iter().cloned().collect(),
                })
                .collect(),
            fit_metadata: m.fit_metadata,
        }
    }
}

impl TryFrom<MixtureDoc> for GaussianMixture {
    type Error = Error;

    fn try_from(doc: MixtureDoc) -> Result<GaussianMixture> {
        let d = doc.dimension;
        let components = doc
            .components
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                if c.mean.len() != d || c.covariance_row_major.len() != d * d {
                    return Err(Error::invalid_argument(format!(
                        "serialized component {i} does not match dimension {d}"
                    )));
                }
                let covariance = Array2::from_shape_vec((d, d), c.covariance_row_major)
                    .map_err(|e| Error::invalid_argument(e.to_string()))?;
                Ok(GaussianComponent::new(
                    c.weight,
                    Array1::from_vec(c.mean),
                    covariance,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(components, doc.covariance_mode, doc.fit_metadata)
    }
}
