//! Classifier likelihoods and Monte Carlo test inversion.
//!
//! A logistic classifier separates matched pairs (𝒴_j, θ_j) from pairs with
//! permuted θ; its odds ĥ/(1−ĥ) are proportional to p_θ(𝒴). Confidence sets
//! come from kernel-smoothing the indicators B_j = 1{T(θ_j, 𝒴_j) ≥ T(θ_j, 𝒴_obs)}.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbiError};
use crate::grid::Grid;
use crate::model_zoo::{simulate, simulate_at, Family, ModelSpec};
use crate::relative_fit::{ConfidenceSet, PValueSurface};
use crate::rng::{child_seed, rng_from_seed, tagged_seed};
use crate::sample::Sample;
use crate::stats::{mean, quantile_sorted, BandwidthRule};

const PROB_CLAMP: f64 = 1e-6;

/// Per coordinate: mean, variance, skewness, kurtosis and the j/6 quantiles
/// (j = 1..5); for multivariate data, pairwise correlations follow.
pub fn summary_stats(s: &Sample) -> Vec<f64> {
    let d = s.dim();
    let n = s.len() as f64;
    let mut out = Vec::with_capacity(9 * d + d * (d - 1) / 2);
    let cols: Vec<Vec<f64>> = (0..d).map(|a| s.rows().map(|p| p[a]).collect()).collect();
    let mut sds = Vec::with_capacity(d);
    for c in &cols {
        let mu = mean(c);
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for v in c {
            let e = v - mu;
            m2 += e * e;
            m3 += e * e * e;
            m4 += e * e * e * e;
        }
        let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
        let (skew, kurt) = if m2 > 0.0 {
            (m3 / m2.powf(1.5), m4 / (m2 * m2))
        } else {
            (0.0, 0.0)
        };
        out.extend([mu, m2, skew, kurt]);
        let mut sorted = c.clone();
        sorted.sort_by(f64::total_cmp);
        out.extend((1..=5).map(|j| quantile_sorted(&sorted, j as f64 / 6.0)));
        sds.push(m2.sqrt());
    }
    for a in 0..d {
        for b in (a + 1)..d {
            let (ma, mb) = (mean(&cols[a]), mean(&cols[b]));
            let cov = cols[a]
                .iter()
                .zip(&cols[b])
                .map(|(x, y)| (x - ma) * (y - mb))
                .sum::<f64>()
                / n;
            out.push(if sds[a] > 0.0 && sds[b] > 0.0 {
                cov / (sds[a] * sds[b])
            } else {
                0.0
            });
        }
    }
    out
}

/// Raw feature vector: [stats, θ, stats², θ_aθ_b (a ≤ b), θ_a·stat_b].
fn raw_features(stats: &[f64], theta: &[f64]) -> Vec<f64> {
    let mut f =
        Vec::with_capacity(stats.len() * (2 + theta.len()) + theta.len() * (theta.len() + 3) / 2);
    f.extend_from_slice(stats);
    f.extend_from_slice(theta);
    f.extend(stats.iter().map(|s| s * s));
    for a in 0..theta.len() {
        for b in a..theta.len() {
            f.push(theta[a] * theta[b]);
        }
    }
    for t in theta {
        f.extend(stats.iter().map(|s| t * s));
    }
    f
}

/// 2N classification rows built from N simulated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbiDataset {
    pub theta_dim: usize,
    /// θ_j, row-major (N × d).
    pub thetas: Vec<f64>,
    /// Summary statistics of 𝒴_j.
    pub summaries: Vec<Vec<f64>>,
    /// The permutation q used for the Z = 0 rows.
    pub permutation: Vec<usize>,
}

impl SbiDataset {
    pub fn n_pairs(&self) -> usize {
        self.summaries.len()
    }

    pub fn theta(&self, j: usize) -> &[f64] {
        &self.thetas[j * self.theta_dim..(j + 1) * self.theta_dim]
    }

    /// Row r of the 2N rows: (Z, summary, θ).
    pub fn row(&self, r: usize) -> (u8, &[f64], &[f64]) {
        let n = self.n_pairs();
        if r < n {
            (1, &self.summaries[r], self.theta(r))
        } else {
            (
                0,
                &self.summaries[r - n],
                self.theta(self.permutation[r - n]),
            )
        }
    }

    pub fn n_rows(&self) -> usize {
        2 * self.n_pairs()
    }

    /// CSV with columns z, theta…, s… (one row per classification row).
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let k = self.summaries.first().map_or(0, Vec::len);
        let mut header = vec!["z".to_string()];
        header.extend((0..self.theta_dim).map(|a| format!("theta{a}")));
        header.extend((0..k).map(|a| format!("s{a}")));
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let (z, stats, th) = self.row(r);
            let mut rec = vec![z.to_string()];
            rec.extend(th.iter().chain(stats).map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pairs N parameter values with the summaries of their simulated datasets.
pub fn build_dataset(thetas: &Grid, sims: &[Sample], seed: u64) -> Result<SbiDataset> {
    let n = thetas.len();
    if n < 2 {
        return Err(SbiError::Degenerate("the permutation needs N ≥ 2".into()));
    }
    if sims.len() != n {
        return Err(SbiError::Dimension {
            expected: n,
            got: sims.len(),
        });
    }
    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(&mut rng_from_seed(seed));
    Ok(SbiDataset {
        theta_dim: thetas.dim,
        thetas: thetas.points.clone(),
        summaries: sims.iter().map(summary_stats).collect(),
        permutation,
    })
}

/// Regularized logistic model on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub theta_dim: usize,
    pub feature_mean: Vec<f64>,
    pub feature_sd: Vec<f64>,
    /// Intercept first.
    pub weights: Vec<f64>,
    pub iterations: usize,
}

impl Classifier {
    fn design_row(&self, stats: &[f64], theta: &[f64]) -> Vec<f64> {
        let raw = raw_features(stats, theta);
        std::iter::once(1.0)
            .chain(
                raw.iter()
                    .zip(self.feature_mean.iter().zip(&self.feature_sd))
                    .map(|(v, (m, s))| (v - m) / s),
            )
            .collect()
    }

    /// log(ĥ/(1−ĥ)) at the clamped probability: log L̂ up to a constant.
    pub fn log_likelihood_stats(&self, stats: &[f64], theta: &[f64]) -> f64 {
        let x = self.design_row(stats, theta);
        let eta: f64 = x.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        let lim = ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln();
        eta.clamp(-lim, lim)
    }

    pub fn log_likelihood(&self, data: &Sample, theta: &[f64]) -> f64 {
        self.log_likelihood_stats(&summary_stats(data), theta)
    }

    pub fn probability(&self, stats: &[f64], theta: &[f64]) -> f64 {
        let eta = self.log_likelihood_stats(stats, theta);
        1.0 / (1.0 + (-eta).exp())
    }

    /// L̂(θ; 𝒴) = ĥ/(1−ĥ).
    pub fn likelihood(&self, data: &Sample, theta: &[f64]) -> f64 {
        self.log_likelihood(data, theta).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsConfig {
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-4,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// Ridge-penalized logistic regression by Newton/IRLS with step halving.
/// `x` has one row per observation (intercept included); the intercept is
/// not penalized.
pub fn logistic_irls(
    x: &DMatrix<f64>,
    y: &[f64],
    cfg: &IrlsConfig,
) -> Result<(DVector<f64>, usize)> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(SbiError::Dimension {
            expected: n,
            got: y.len(),
        });
    }
    let penalty = |w: &DVector<f64>| 0.5 * cfg.ridge * w.iter().skip(1).map(|v| v * v).sum::<f64>();
    let objective = |w: &DVector<f64>| -> f64 {
        let eta = x * w;
        let ll: f64 = eta.iter().zip(y).map(|(e, t)| t * e - softplus(*e)).sum();
        ll / n as f64 - penalty(w)
    };
    let mut w = DVector::zeros(p);
    let mut obj = objective(&w);
    let mut grad_norm = f64::INFINITY;
    for it in 0..cfg.max_iter {
        let eta = x * &w;
        let prob: Vec<f64> = eta.iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect();
        let resid = DVector::from_iterator(n, y.iter().zip(&prob).map(|(t, q)| t - q));
        let mut grad = x.transpose() * resid / n as f64;
        for j in 1..p {
            grad[j] -= cfg.ridge * w[j];
        }
        grad_norm = grad.norm();
        if grad_norm <= cfg.tol {
            return Ok((w, it));
        }
        let mut xw = x.clone();
        for (i, q) in prob.iter().enumerate() {
            let s = (q * (1.0 - q)).max(1e-12).sqrt();
            xw.row_mut(i).scale_mut(s);
        }
        let mut h = xw.transpose() * xw / n as f64;
        for j in 0..p {
            h[(j, j)] += if j == 0 { 1e-10 } else { cfg.ridge };
        }
        let dir = h.cholesky().map(|c| c.solve(&grad)).ok_or_else(|| {
            SbiError::Numerical("logistic Hessian is not positive definite".into())
        })?;
        let mut step = 1.0;
        loop {
            let cand = &w + &dir * step;
            let c = objective(&cand);
            if c >= obj || step < 1e-10 {
                w = cand;
                obj = c;
                break;
            }
            step *= 0.5;
        }
    }
    Err(SbiError::NoConvergence {
        iterations: cfg.max_iter,
        grad_norm,
    })
}

fn softplus(e: f64) -> f64 {
    if e > 0.0 {
        e + (-e).exp().ln_1p()
    } else {
        e.exp().ln_1p()
    }
}

/// Fits the likelihood-ratio classifier on the 2N rows.
pub fn fit_likelihood(ds: &SbiDataset, cfg: &IrlsConfig) -> Result<Classifier> {
    let rows: Vec<(u8, Vec<f64>)> = (0..ds.n_rows())
        .map(|r| {
            let (z, s, t) = ds.row(r);
            (z, raw_features(s, t))
        })
        .collect();
    let p = rows[0].1.len();
    let nr = rows.len() as f64;
    let mut fm = vec![0.0; p];
    for (_, f) in &rows {
        for (a, v) in f.iter().enumerate() {
            fm[a] += v / nr;
        }
    }
    let mut fs = vec![0.0; p];
    for (_, f) in &rows {
        for (a, v) in f.iter().enumerate() {
            fs[a] += (v - fm[a]).powi(2) / nr;
        }
    }
    let fs: Vec<f64> = fs
        .iter()
        .map(|v| if *v > 1e-24 { v.sqrt() } else { 1.0 })
        .collect();
    let x = DMatrix::from_fn(rows.len(), p + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            (rows[i].1[j - 1] - fm[j - 1]) / fs[j - 1]
        }
    });
    let y: Vec<f64> = rows.iter().map(|(z, _)| f64::from(*z)).collect();
    let (w, iterations) = logistic_irls(&x, &y, cfg)?;
    Ok(Classifier {
        theta_dim: ds.theta_dim,
        feature_mean: fm,
        feature_sd: fs,
        weights: w.iter().copied().collect(),
        iterations,
    })
}

/// Monte Carlo test inversion with a user statistic T(θ, 𝒴) (larger means
/// less compatible with θ).
pub fn invert_test_cs(
    thetas: &Grid,
    sims: &[Sample],
    obs: &Sample,
    statistic: &(dyn Fn(&[f64], &Sample) -> f64 + Sync),
    alpha: f64,
    bandwidth: &BandwidthRule,
) -> Result<(PValueSurface, ConfidenceSet)> {
    if sims.len() != thetas.len() {
        return Err(SbiError::Dimension {
            expected: thetas.len(),
            got: sims.len(),
        });
    }
    let b: Vec<f64> = (0..thetas.len())
        .into_par_iter()
        .map(|j| {
            let th = thetas.point(j);
            if statistic(th, &sims[j]) >= statistic(th, obs) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let surface = PValueSurface::from_raw(thetas, b, None, bandwidth, alpha)?;
    let set = surface.confidence_set();
    Ok((surface, set))
}

/// Alternative likelihood: one pointwise classifier per θ_j against a fixed
/// reference sample, log L̂(θ_j; 𝒴) = Σ_i logit ĥ_j(Y_i) + const.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceClassifiers {
    pub degree: usize,
    pub models: Vec<Vec<f64>>,
    pub center: f64,
    pub scale: f64,
}

impl ReferenceClassifiers {
    fn feats(&self, y: f64) -> Vec<f64> {
        let u = (y - self.center) / self.scale;
        (0..=self.degree).map(|k| u.powi(k as i32)).collect()
    }

    pub fn log_likelihood(&self, j: usize, data: &Sample) -> f64 {
        let w = &self.models[j];
        data.as_flat()
            .iter()
            .map(|y| {
                let eta: f64 = self.feats(*y).iter().zip(w).map(|(a, b)| a * b).sum();
                let lim = ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln();
                eta.clamp(-lim, lim)
            })
            .sum()
    }
}

/// Fits per-θ polynomial-logistic classifiers (1-D data) of 𝒴_j vs `reference`.
pub fn fit_reference_classifiers(
    sims: &[Sample],
    reference: &Sample,
    degree: usize,
    cfg: &IrlsConfig,
) -> Result<ReferenceClassifiers> {
    let r = reference.values_1d()?;
    let center = mean(r);
    let scale = crate::stats::variance(r).sqrt().max(1e-12);
    let mut out = ReferenceClassifiers {
        degree,
        models: Vec::with_capacity(sims.len()),
        center,
        scale,
    };
    for s in sims {
        let ys = s.values_1d()?;
        let n = ys.len() + r.len();
        let x = DMatrix::from_fn(n, degree + 1, |i, k| {
            let y = if i < ys.len() { ys[i] } else { r[i - ys.len()] };
            ((y - center) / scale).powi(k as i32)
        });
        let labels: Vec<f64> = (0..n)
            .map(|i| if i < ys.len() { 1.0 } else { 0.0 })
            .collect();
        let (w, _) = logistic_irls(&x, &labels, cfg)?;
        out.models.push(w.iter().copied().collect());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodConfig {
    pub alpha: f64,
    pub irls: IrlsConfig,
    pub bandwidth: BandwidthRule,
    /// Per-θ reference classifiers instead of the pooled one.
    pub reference: Option<ModelSpec>,
    pub reference_size: usize,
    pub reference_degree: usize,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            irls: IrlsConfig::default(),
            bandwidth: BandwidthRule::default(),
            reference: None,
            reference_size: 2000,
            reference_degree: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodResult {
    /// log L̂(θ_j; 𝒴_obs) over the design.
    pub log_lik_obs: Vec<f64>,
    /// Design point maximizing log L̂(θ; 𝒴_obs).
    pub theta_mle: Vec<f64>,
    pub b: Vec<f64>,
    pub surface: PValueSurface,
    pub set: ConfidenceSet,
}

/// Simulates one dataset of the observed size at every design point.
pub fn simulate_datasets(
    family: &Family,
    thetas: &Grid,
    n: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    (0..thetas.len())
        .into_par_iter()
        .map(|j| simulate_at(family, thetas.point(j), n, child_seed(seed, j as u64)))
        .collect()
}

/// Classifier likelihood with test inversion using T = −log L̂.
pub fn likelihood_cs(
    obs: &Sample,
    family: &Family,
    thetas: &Grid,
    cfg: &LikelihoodConfig,
    seed: u64,
) -> Result<LikelihoodResult> {
    let sims = simulate_datasets(family, thetas, obs.len(), tagged_seed(seed, "datasets"))?;
    likelihood_cs_with(obs, thetas, &sims, cfg, seed)
}

/// As [`likelihood_cs`] with caller-provided simulated datasets.
pub fn likelihood_cs_with(
    obs: &Sample,
    thetas: &Grid,
    sims: &[Sample],
    cfg: &LikelihoodConfig,
    seed: u64,
) -> Result<LikelihoodResult> {
    let (log_lik_obs, log_lik_sim): (Vec<f64>, Vec<f64>) = match &cfg.reference {
        None => {
            let ds = build_dataset(thetas, sims, tagged_seed(seed, "permutation"))?;
            let clf = fit_likelihood(&ds, &cfg.irls)?;
            let obs_stats = summary_stats(obs);
            (0..thetas.len())
                .map(|j| {
                    let th = thetas.point(j);
                    (
                        clf.log_likelihood_stats(&obs_stats, th),
                        clf.log_likelihood_stats(&ds.summaries[j], th),
                    )
                })
                .unzip()
        }
        Some(g) => {
            let reference = simulate(g, cfg.reference_size, tagged_seed(seed, "reference"))?;
            let rc = fit_reference_classifiers(sims, &reference, cfg.reference_degree, &cfg.irls)?;
            (0..thetas.len())
                .map(|j| (rc.log_likelihood(j, obs), rc.log_likelihood(j, &sims[j])))
                .unzip()
        }
    };
    // T = −log L̂, so B_j = 1{ℓ(𝒴_j) ≤ ℓ(𝒴_obs)}
    let b: Vec<f64> = log_lik_sim
        .iter()
        .zip(&log_lik_obs)
        .map(|(s, o)| if s <= o { 1.0 } else { 0.0 })
        .collect();
    let best = (0..thetas.len()).fold(0, |bi, j| {
        if log_lik_obs[j] > log_lik_obs[bi] {
            j
        } else {
            bi
        }
    });
    let surface = PValueSurface::from_raw(thetas, b.clone(), None, &cfg.bandwidth, cfg.alpha)?;
    let set = surface.confidence_set();
    Ok(LikelihoodResult {
        log_lik_obs,
        theta_mle: thetas.point(best).to_vec(),
        b,
        surface,
        set,
    })
}
