//! Expectation-maximization fitting with k-means++ initialization and
//! deterministic seeded restarts.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::linalg;
use super::{CovarianceMode, EmConfig, FitMetadata, GaussianComponent, GaussianMixture};

const KMEANS_MAX_ITERATIONS: usize = 30;
const RESTART_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;
const EMPTY_RESPONSIBILITY: f64 = 1e-10;

/// Fit a k-component mixture to the rows of `samples` by EM.
///
/// Each of `config.restarts` runs re-initializes with k-means++ under
/// seed `config.seed + r * stride`; the run with the best final
/// log-likelihood wins. Components that lose all responsibility are
/// re-seeded at the sample the current model explains worst.
pub fn fit_em(
    samples: &Array2<f64>,
    k: usize,
    mode: CovarianceMode,
    config: &EmConfig,
) -> Result<GaussianMixture> {
    config.validate()?;
    let (n, d) = samples.dim();
    if k < 1 {
        return Err(Error::invalid_argument("k must be >= 1"));
    }
    if d < 1 {
        return Err(Error::invalid_argument("samples need >= 1 dimension"));
    }
    if n < k {
        return Err(Error::invalid_argument(format!(
            "{n} samples cannot support {k} components"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_argument("samples contain non-finite values"));
    }
    let restarts = config.restarts.max(1);
    let mut best: Option<GaussianMixture> = None;
    let mut last_err: Option<Error> = None;
    for r in 0..restarts {
        let seed = config
            .seed
            .wrapping_add((r as u64).wrapping_mul(RESTART_SEED_STRIDE));
        match run_em(samples, k, mode, config, seed) {
            Ok(candidate) => {
                let better = best.as_ref().map_or(true, |b| {
                    candidate.fit_metadata.final_log_likelihood
                        > b.fit_metadata.final_log_likelihood
                });
                if better {
                    best = Some(candidate);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| match last_err {
        Some(e) => e,
        None => Error::Internal("all EM restarts failed".into()),
    })
}

struct Params {
    weights: Vec<f64>,
    means: Array2<f64>,
    covs: Vec<Array2<f64>>,
}

struct Scorer {
    log_weight: f64,
    mean: Array1<f64>,
    chol: Array2<f64>,
    log_norm: f64,
}

fn run_em(
    samples: &Array2<f64>,
    k: usize,
    mode: CovarianceMode,
    config: &EmConfig,
    seed: u64,
) -> Result<GaussianMixture> {
    let (n, _d) = samples.dim();
    let (_, assignments) = kmeans(samples, k, seed, KMEANS_MAX_ITERATIONS);
    let mut resp = Array2::<f64>::zeros((n, k));
    for (i, &a) in assignments.iter().enumerate() {
        resp[[i, a]] = 1.0;
    }
    let mut reseeded = 0usize;
    // Row log-densities of the previous E-step, used to pick reseed
    // targets; the hard k-means assignment has none yet.
    let mut row_ll: Option<Vec<f64>> = None;
    let mut params = m_step(samples, &resp.view(), mode, config.ridge, row_ll.as_deref(), &mut reseeded)?;

    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0usize;
    let mut converged = false;
    let mut final_ll = f64::NEG_INFINITY;
    let mut prev_ll = f64::NEG_INFINITY;
    for it in 1..=config.max_iterations {
        let scorers = build_scorers(&params)?;
        let (ll, rows) = e_step(samples, &scorers, &mut resp);
        history.push(ll);
        iterations = it;
        if it > 1 {
            let scale = prev_ll.abs().max(1.0);
            if (ll - prev_ll).abs() <= config.rel_tolerance * scale {
                converged = true;
                final_ll = ll;
                break;
            }
        }
        row_ll = Some(rows);
        params = m_step(samples, &resp.view(), mode, config.ridge, row_ll.as_deref(), &mut reseeded)?;
        prev_ll = ll;
    }
    if !converged {
        // The last M-step moved the parameters after the last measured
        // log-likelihood; score once more so final_log_likelihood matches
        // the returned model.
        let scorers = build_scorers(&params)?;
        let (ll, _) = e_step(samples, &scorers, &mut resp);
        history.push(ll);
        final_ll = ll;
    }

    let components = params
        .weights
        .iter()
        .enumerate()
        .map(|(j, &w)| {
            GaussianComponent::new(w, params.means.row(j).to_owned(), params.covs[j].clone())
        })
        .collect();
    GaussianMixture::new(
        components,
        mode,
        FitMetadata {
            seed,
            iterations,
            final_log_likelihood: final_ll,
            log_likelihood_history: history,
            reseeded_components: reseeded,
            bic_table: Vec::new(),
        },
    )
}

fn build_scorers(params: &Params) -> Result<Vec<Scorer>> {
    use std::f64::consts::PI;
    let d = params.means.ncols();
    params
        .weights
        .iter()
        .enumerate()
        .map(|(j, &w)| {
            let cov = &params.covs[j];
            let chol = super::factorize(cov)
                .ok_or_else(|| Error::Internal("EM covariance lost positive definiteness".into()))?;
            let log_norm =
                -0.5 * (d as f64 * (2.0 * PI).ln() + linalg::log_det_from_cholesky(&chol));
            Ok(Scorer {
                log_weight: w.ln(),
                mean: params.means.row(j).to_owned(),
                chol,
                log_norm,
            })
        })
        .collect()
}

/// Fills `resp` with posterior responsibilities and returns the total
/// log-likelihood along with per-row log-densities.
fn e_step(samples: &Array2<f64>, scorers: &[Scorer], resp: &mut Array2<f64>) -> (f64, Vec<f64>) {
    let n = samples.nrows();
    let k = scorers.len();
    let mut rows = Vec::with_capacity(n);
    let mut terms = vec![0.0f64; k];
    let mut total = 0.0;
    for i in 0..n {
        let x = samples.row(i);
        for (j, s) in scorers.iter().enumerate() {
            let v = x.to_owned() - &s.mean;
            terms[j] =
                s.log_weight + s.log_norm - 0.5 * linalg::mahalanobis_sq(&s.chol, &v.view());
        }
        let row = linalg::logsumexp(&terms);
        rows.push(row);
        total += row;
        for j in 0..k {
            resp[[i, j]] = (terms[j] - row).exp();
        }
    }
    (total, rows)
}

fn m_step(
    samples: &Array2<f64>,
    resp: &ArrayView2<f64>,
    mode: CovarianceMode,
    ridge: f64,
    row_ll: Option<&[f64]>,
    reseeded: &mut usize,
) -> Result<Params> {
    let (n, d) = samples.dim();
    let k = resp.ncols();
    let nk: Vec<f64> = (0..k).map(|j| resp.column(j).sum()).collect();

    let mut weights = vec![0.0f64; k];
    let mut means = Array2::<f64>::zeros((k, d));
    let mut covs: Vec<Array2<f64>> = vec![Array2::zeros((d, d)); k];
    let mut empty: Vec<usize> = Vec::new();

    for j in 0..k {
        if nk[j] <= EMPTY_RESPONSIBILITY {
            empty.push(j);
            continue;
        }
        weights[j] = nk[j] / n as f64;
        let mut mu = Array1::<f64>::zeros(d);
        for i in 0..n {
            mu.scaled_add(resp[[i, j]], &samples.row(i));
        }
        mu /= nk[j];
        means.row_mut(j).assign(&mu);
    }

    match mode {
        CovarianceMode::Full | CovarianceMode::Diagonal | CovarianceMode::Spherical => {
            for j in 0..k {
                if nk[j] <= EMPTY_RESPONSIBILITY {
                    continue;
                }
                covs[j] = component_covariance(samples, resp, j, &means.row(j), nk[j], mode, ridge);
            }
        }
        CovarianceMode::Tied => {
            let mut pooled = Array2::<f64>::zeros((d, d));
            for j in 0..k {
                if nk[j] <= EMPTY_RESPONSIBILITY {
                    continue;
                }
                accumulate_scatter(&mut pooled, samples, resp, j, &means.row(j));
            }
            pooled /= n as f64;
            for i in 0..d {
                pooled[[i, i]] += ridge;
            }
            for j in 0..k {
                covs[j] = pooled.clone();
            }
        }
    }

    if !empty.is_empty() {
        // Global covariance gives the revived component broad support.
        let global_mean = samples.mean_axis(Axis(0)).expect("n >= 1");
        let uniform = Array2::<f64>::from_elem((n, 1), 1.0);
        let global_cov = component_covariance(
            samples,
            &uniform.view(),
            0,
            &global_mean.view(),
            n as f64,
            if mode == CovarianceMode::Tied {
                CovarianceMode::Full
            } else {
                mode
            },
            ridge,
        );
        let mut used: Vec<usize> = Vec::new();
        for &j in &empty {
            // With log-densities available, revive at the worst-explained
            // sample; before the first E-step (degenerate k-means init),
            // spread revivals evenly across the data.
            let target = match row_ll {
                Some(rows) => worst_row(rows, &used),
                None => {
                    let mut idx = (j * n / k).min(n - 1);
                    while used.contains(&idx) {
                        idx = (idx + 1) % n;
                    }
                    idx
                }
            };
            used.push(target);
            means.row_mut(j).assign(&samples.row(target));
            if mode != CovarianceMode::Tied {
                covs[j] = global_cov.clone();
            }
            weights[j] = 1.0 / n as f64;
            *reseeded += 1;
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
    }

    Ok(Params {
        weights,
        means,
        covs,
    })
}

/// Index of the lowest log-density row not already used for a reseed;
/// ties break toward the smaller index.
fn worst_row(rows: &[f64], used: &[usize]) -> usize {
    let mut best = 0usize;
    let mut best_ll = f64::INFINITY;
    for (i, &ll) in rows.iter().enumerate() {
        if used.contains(&i) {
            continue;
        }
        if ll < best_ll {
            best_ll = ll;
            best = i;
        }
    }
    best
}

fn component_covariance(
    samples: &Array2<f64>,
    resp: &ArrayView2<f64>,
    j: usize,
    mean: &ArrayView1<f64>,
    nk: f64,
    mode: CovarianceMode,
    ridge: f64,
) -> Array2<f64> {
    let (n, d) = samples.dim();
    match mode {
        CovarianceMode::Full | CovarianceMode::Tied => {
            let mut cov = Array2::<f64>::zeros((d, d));
            accumulate_scatter(&mut cov, samples, resp, j, mean);
            cov /= nk;
            for i in 0..d {
                cov[[i, i]] += ridge;
            }
            cov
        }
        CovarianceMode::Diagonal => {
            let mut diag = Array1::<f64>::zeros(d);
            for i in 0..n {
                let r = resp[[i, j]];
                if r == 0.0 {
                    continue;
                }
                for c in 0..d {
                    let v = samples[[i, c]] - mean[c];
                    diag[c] += r * v * v;
                }
            }
            diag /= nk;
            diag += ridge;
            Array2::from_diag(&diag)
        }
        CovarianceMode::Spherical => {
            let mut acc = 0.0;
            for i in 0..n {
                let r = resp[[i, j]];
                if r == 0.0 {
                    continue;
                }
                let mut sq = 0.0;
                for c in 0..d {
                    let v = samples[[i, c]] - mean[c];
                    sq += v * v;
                }
                acc += r * sq;
            }
            let sigma2 = acc / (nk * d as f64) + ridge;
            Array2::from_diag(&Array1::from_elem(d, sigma2))
        }
    }
}

fn accumulate_scatter(
    cov: &mut Array2<f64>,
    samples: &Array2<f64>,
    resp: &ArrayView2<f64>,
    j: usize,
    mean: &ArrayView1<f64>,
) {
    let (n, d) = samples.dim();
    for i in 0..n {
        let r = resp[[i, j]];
        if r == 0.0 {
            continue;
        }
        for a in 0..d {
            let va = samples[[i, a]] - mean[a];
            for b in 0..=a {
                cov[[a, b]] += r * va * (samples[[i, b]] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in (a + 1)..d {
            cov[[a, b]] = cov[[b, a]];
        }
    }
}

/// Seeded k-means++ followed by Lloyd iterations. Returns the final
/// centers (k x D) and per-row assignments. Empty clusters are relocated
/// to the point farthest from its current center.
pub(crate) fn kmeans(
    samples: &Array2<f64>,
    k: usize,
    seed: u64,
    max_iterations: usize,
) -> (Array2<f64>, Vec<usize>) {
    let (n, d) = samples.dim();
    debug_assert!(n >= k && k >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Array2::<f64>::zeros((k, d));
    let mut chosen: Vec<usize> = Vec::with_capacity(k);

    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&samples.row(first));
    chosen.push(first);
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(&samples.row(i), &centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining mass is zero; take the smallest index not yet
            // chosen so duplicated data still yields k distinct centers.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        centers.row_mut(c).assign(&samples.row(next));
        chosen.push(next);
        for i in 0..n {
            let dist = squared_distance(&samples.row(i), &centers.row(c));
            if dist < d2[i] {
                d2[i] = dist;
            }
        }
    }

    let mut assignments = vec![0usize; n];
    for _ in 0..max_iterations {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dist = squared_distance(&samples.row(i), &centers.row(c));
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, d));
        for i in 0..n {
            counts[assignments[i]] += 1;
            let mut row = sums.row_mut(assignments[i]);
            row += &samples.row(i);
        }
        let mut relocated: Vec<usize> = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = centers.row_mut(c);
                row.assign(&sums.row(c));
                row /= counts[c] as f64;
            } else {
                let target = farthest_point(samples, &centers, &assignments, &relocated);
                relocated.push(target);
                centers.row_mut(c).assign(&samples.row(target));
            }
        }
    }
    (centers, assignments)
}

/// Sample farthest from its assigned center, skipping already-relocated
/// rows; ties break toward the smaller index.
fn farthest_point(
    samples: &Array2<f64>,
    centers: &Array2<f64>,
    assignments: &[usize],
    skip: &[usize],
) -> usize {
    let mut best = 0usize;
    let mut best_d = -1.0f64;
    for i in 0..samples.nrows() {
        if skip.contains(&i) {
            continue;
        }
        let dist = squared_distance(&samples.row(i), &centers.row(assignments[i]));
        if dist > best_d {
            best_d = dist;
            best = i;
        }
    }
    best
}

fn squared_distance(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}
