//! Exponential-tilt model expansion p_{θ,β} ∝ p_θ·exp(βᵀb(x)).
//!
//! β̂(θ) maximizes ℓ̂_θ(β) = nβᵀb̄ − n log ĉ(θ, β) with ĉ estimated from a
//! single simulated sample at θ, so the expanded model never has to be
//! simulated directly: tilted draws come from reweighting that sample.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbiError};
use crate::grid::Grid;
use crate::likelihood_sbi::{build_dataset, fit_likelihood, summary_stats, IrlsConfig};
use crate::model_zoo::{density, simulate_at, Family};
use crate::relative_fit::{ConfidenceSet, PValueSurface};
use crate::rng::{child_seed, rng_from_seed, tagged_seed};
use crate::sample::{Provenance, Sample};
use crate::stats::BandwidthRule;

/// One tilt function b_r.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum BasisFn {
    /// x^p.
    Power { p: i32 },
    /// x^p·1{|x^p| < τ}.
    TruncatedPower { p: i32, tau: f64 },
}

impl BasisFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Self::Power { p } => x.powi(p),
            Self::TruncatedPower { p, tau } => {
                let v = x.powi(p);
                if v.abs() < tau {
                    v
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltBasis {
    pub functions: Vec<BasisFn>,
}

impl TiltBasis {
    pub fn new(functions: Vec<BasisFn>) -> Result<Self> {
        if functions.is_empty() {
            return Err(SbiError::Config("tilt basis needs k ≥ 1 functions".into()));
        }
        Ok(Self { functions })
    }

    /// The basis x³·1{|x³| < τ}, x⁴.
    pub fn cubic_quartic(tau: f64) -> Self {
        Self {
            functions: vec![
                BasisFn::TruncatedPower { p: 3, tau },
                BasisFn::Power { p: 4 },
            ],
        }
    }

    pub fn k(&self) -> usize {
        self.functions.len()
    }

    /// b(Y_i) for every point, row-major (len × k).
    pub fn eval_sample(&self, s: &Sample) -> Result<Vec<f64>> {
        let ys = s.values_1d()?;
        let mut out = Vec::with_capacity(ys.len() * self.k());
        for y in ys {
            for (r, f) in self.functions.iter().enumerate() {
                let v = f.eval(*y);
                if !v.is_finite() {
                    return Err(SbiError::Numerical(format!(
                        "basis function {r} is not finite at y = {y}"
                    )));
                }
                out.push(v);
            }
        }
        Ok(out)
    }

    pub fn mean(&self, s: &Sample) -> Result<Vec<f64>> {
        let b = self.eval_sample(s)?;
        let k = self.k();
        let n = s.len() as f64;
        let mut m = vec![0.0; k];
        for row in b.chunks_exact(k) {
            for r in 0..k {
                m[r] += row[r] / n;
            }
        }
        Ok(m)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// log(m⁻¹ Σ exp(βᵀb_i)) by max shift; errors name the largest-contributing
/// basis index if the result is not finite.
fn log_mean_exp(beta: &[f64], b: &[f64], k: usize) -> Result<f64> {
    let eta: Vec<f64> = b.chunks_exact(k).map(|row| dot(beta, row)).collect();
    let mx = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = eta.iter().map(|e| (e - mx).exp()).sum();
    let v = mx + (s / eta.len() as f64).ln();
    if !v.is_finite() {
        let worst = (0..k)
            .max_by(|&r, &q| {
                let f = |r: usize| {
                    b.chunks_exact(k)
                        .map(|row| (beta[r] * row[r]).abs())
                        .fold(0.0, f64::max)
                };
                f(r).total_cmp(&f(q))
            })
            .unwrap_or(0);
        return Err(SbiError::Numerical(format!(
            "tilt normalizer overflows (basis index {worst})"
        )));
    }
    Ok(v)
}

/// ℓ̂_θ(β) = nβᵀb̄ − n log(m⁻¹ Σ exp(βᵀb(Y_i(θ)))).
pub fn profile_loglik(beta: &[f64], obs: &Sample, sim: &Sample, basis: &TiltBasis) -> Result<f64> {
    if beta.len() != basis.k() {
        return Err(SbiError::Dimension {
            expected: basis.k(),
            got: beta.len(),
        });
    }
    if sim.is_empty() {
        return Err(SbiError::Degenerate("simulated sample is empty".into()));
    }
    let n = obs.len() as f64;
    let bbar = basis.mean(obs)?;
    let b = basis.eval_sample(sim)?;
    Ok(n * dot(beta, &bbar) - n * log_mean_exp(beta, &b, basis.k())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    /// Bound on ‖S‖ with S the score in standardized basis coordinates.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltFit {
    pub theta: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub c_hat: f64,
    pub log_c_hat: f64,
    /// ℓ̂_θ(β̂).
    pub loglik: f64,
    /// Resampling weights ∝ exp(β̂ᵀb(Y_i(θ))), summing to 1.
    pub weights: Vec<f64>,
    /// m⁻¹ Σ_i β̂ᵀb(Y_i(θ)).
    pub mean_tilt: f64,
    pub score_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl TiltFit {
    pub fn degenerate_weights(&self) -> bool {
        self.weights.iter().any(|w| *w >= 1.0 - 1e-12)
    }
}

/// Newton–Raphson from β = 0 with step halving. Iterates run in basis
/// coordinates standardized by the simulated sample; β̂ is reported in the
/// original coordinates.
pub fn newton_beta(
    theta: &[f64],
    obs: &Sample,
    sim: &Sample,
    basis: &TiltBasis,
    cfg: &NewtonConfig,
) -> Result<TiltFit> {
    let k = basis.k();
    let m = sim.len();
    if m == 0 || obs.is_empty() {
        return Err(SbiError::Degenerate(
            "tilt fit needs nonempty samples".into(),
        ));
    }
    let n = obs.len() as f64;
    let raw = basis.eval_sample(sim)?;
    let bbar_raw = basis.mean(obs)?;
    let mut mu = vec![0.0; k];
    let mut sd = vec![0.0; k];
    for row in raw.chunks_exact(k) {
        for r in 0..k {
            mu[r] += row[r] / m as f64;
        }
    }
    for row in raw.chunks_exact(k) {
        for r in 0..k {
            sd[r] += (row[r] - mu[r]).powi(2) / m as f64;
        }
    }
    for (r, v) in sd.iter_mut().enumerate() {
        *v = v.sqrt();
        if !(*v > 0.0) {
            return Err(SbiError::Degenerate(format!(
                "basis function {r} is constant on the simulated sample"
            )));
        }
    }
    let z: Vec<f64> = raw
        .chunks_exact(k)
        .flat_map(|row| (0..k).map(|r| (row[r] - mu[r]) / sd[r]).collect::<Vec<_>>())
        .collect();
    let zbar: Vec<f64> = (0..k).map(|r| (bbar_raw[r] - mu[r]) / sd[r]).collect();
    let objective =
        |b: &[f64]| -> Result<f64> { Ok(n * dot(b, &zbar) - n * log_mean_exp(b, &z, k)?) };

    let mut warnings = Vec::new();
    let mut beta = vec![0.0; k];
    let mut obj = objective(&beta)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut score_norm = f64::INFINITY;
    let mut failed_halvings = 0;
    for it in 0..=cfg.max_iter {
        iterations = it;
        let eta: Vec<f64> = z.chunks_exact(k).map(|row| dot(&beta, row)).collect();
        let mx = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = eta.iter().map(|e| (e - mx).exp()).collect();
        let tot: f64 = w.iter().sum();
        let mut e = vec![0.0; k];
        for (row, wi) in z.chunks_exact(k).zip(&w) {
            for r in 0..k {
                e[r] += wi / tot * row[r];
            }
        }
        let mut cov = DMatrix::zeros(k, k);
        for (row, wi) in z.chunks_exact(k).zip(&w) {
            let d = DVector::from_iterator(k, (0..k).map(|r| row[r] - e[r]));
            cov += (&d * d.transpose()) * (wi / tot);
        }
        let g = DVector::from_iterator(k, (0..k).map(|r| zbar[r] - e[r]));
        score_norm = n * g.norm();
        if score_norm <= cfg.tol {
            converged = true;
            break;
        }
        if it == cfg.max_iter {
            break;
        }
        let step = match cov.clone().cholesky() {
            Some(c) => c.solve(&g),
            None => {
                warnings.push(format!(
                    "singular curvature at iteration {it}; ridge 1e-6 added"
                ));
                let mut damped = cov;
                for r in 0..k {
                    damped[(r, r)] += 1e-6;
                }
                match damped.cholesky() {
                    Some(c) => c.solve(&g),
                    None => break,
                }
            }
        };
        let slack = 1e-12 * (1.0 + obj.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = (0..k).map(|r| beta[r] + t * step[r]).collect();
            if let Ok(c) = objective(&cand) {
                if c >= obj - slack {
                    beta = cand;
                    obj = c.max(obj);
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if t < 1.0 {
            failed_halvings += 1;
        }
        if !accepted {
            warnings.push("step halving could not increase the objective".into());
            break;
        }
        let _ = failed_halvings;
    }
    let beta_hat: Vec<f64> = (0..k).map(|r| beta[r] / sd[r]).collect();
    let log_c_hat = log_mean_exp(&beta_hat, &raw, k)?;
    let eta: Vec<f64> = raw.chunks_exact(k).map(|row| dot(&beta_hat, row)).collect();
    let mean_tilt = eta.iter().sum::<f64>() / m as f64;
    let mx = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = eta.iter().map(|e| (e - mx).exp()).collect();
    let tot: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= tot;
    }
    if !converged {
        warnings.push(format!("Newton stopped with ‖S‖ = {score_norm:.3e}"));
    }
    Ok(TiltFit {
        theta: theta.to_vec(),
        loglik: n * dot(&beta_hat, &bbar_raw) - n * log_c_hat,
        c_hat: log_c_hat.exp(),
        log_c_hat,
        beta_hat,
        weights,
        mean_tilt,
        score_norm,
        converged,
        iterations,
        warnings,
    })
}

/// m_out draws with replacement from `sim` with the fit's weights.
pub fn resample_tilted(sim: &Sample, fit: &TiltFit, m_out: usize, seed: u64) -> Result<Sample> {
    if fit.weights.len() != sim.len() {
        return Err(SbiError::Dimension {
            expected: sim.len(),
            got: fit.weights.len(),
        });
    }
    let dist = WeightedIndex::new(&fit.weights)
        .map_err(|e| SbiError::Numerical(format!("invalid tilt weights: {e}")))?;
    let mut rng = rng_from_seed(seed);
    let idx: Vec<usize> = (0..m_out).map(|_| dist.sample(&mut rng)).collect();
    Ok(sim.select(&idx).with_provenance(Provenance::Resampled))
}

/// Test statistic for tilted test inversion (larger = better fit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiltStatistic {
    /// `profile_density` when the family has a density, else `classifier`.
    #[default]
    Auto,
    /// Σ log p_θ(Y_i) + β̂ᵀΣ b(Y_i) − n log ĉ: the profile log-likelihood.
    ProfileDensity,
    /// Logistic classifier likelihood trained on resampled tilted datasets.
    Classifier,
    /// β̂ᵀΣ b(Y_i) − n log ĉ alone (the ratio to p_θ; no power for θ).
    TiltRatio,
}

/// Multiplicative weights w_j in the p-value smoother.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiltWeighting {
    Uniform,
    /// exp(m⁻¹Σ_i β̂ᵀb(Y_i(θ_j))) / ĉ: the per-point geometric mean.
    #[default]
    PerPoint,
    /// exp(Σ_i β̂ᵀb(Y_i(θ_j))) / ĉ, normalized by its maximum.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltConfig {
    pub basis: TiltBasis,
    pub m: usize,
    pub alpha: f64,
    pub newton: NewtonConfig,
    pub statistic: TiltStatistic,
    pub weighting: TiltWeighting,
    pub bandwidth: BandwidthRule,
    /// One simulation seed for every θ (common random numbers), which makes
    /// the profile smooth in θ.
    pub common_sims: bool,
}

impl TiltConfig {
    pub fn new(basis: TiltBasis, m: usize) -> Self {
        Self {
            basis,
            m,
            alpha: 0.05,
            newton: NewtonConfig::default(),
            statistic: TiltStatistic::Auto,
            weighting: TiltWeighting::PerPoint,
            bandwidth: BandwidthRule::default(),
            common_sims: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltCsResult {
    /// Fits over the whole grid (weights dropped).
    pub fits: Vec<TiltFit>,
    /// Indices of grid points that entered the test inversion.
    pub kept: Vec<usize>,
    /// Observed statistic (profile log-likelihood) at kept points.
    pub profile: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub b: Vec<f64>,
    pub surface: PValueSurface,
    pub set: ConfidenceSet,
    pub warnings: Vec<String>,
}

impl TiltCsResult {
    pub fn converged_fraction(&self) -> f64 {
        self.fits.iter().filter(|f| f.converged).count() as f64 / self.fits.len() as f64
    }

    /// CSV with columns θ…, beta…, c_hat, loglik, converged.
    pub fn write_fits_csv<W: Write>(&self, out: W) -> Result<()> {
        write_fits_csv(&self.fits, out)
    }
}

pub fn write_fits_csv<W: Write>(fits: &[TiltFit], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(f) = fits.first() {
        let mut header: Vec<String> = (0..f.theta.len()).map(|a| format!("theta{a}")).collect();
        header.extend((0..f.beta_hat.len()).map(|r| format!("beta{r}")));
        header.extend(["c_hat", "loglik", "converged"].map(String::from));
        w.write_record(&header)?;
    }
    for f in fits {
        let mut rec: Vec<String> = f
            .theta
            .iter()
            .chain(&f.beta_hat)
            .map(|v| format!("{v}"))
            .collect();
        rec.push(format!("{}", f.c_hat));
        rec.push(format!("{}", f.loglik));
        rec.push(if f.converged { "1".into() } else { "0".into() });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// SBI profile likelihood and weighted test-inversion confidence set for θ
/// in the tilted expansion of `family`.
pub fn tilt_profile_cs(
    obs: &Sample,
    family: &Family,
    grid: &Grid,
    cfg: &TiltConfig,
    seed: u64,
) -> Result<TiltCsResult> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(SbiError::Domain(format!(
            "α must lie in (0, 1), got {}",
            cfg.alpha
        )));
    }
    if cfg.basis.k() == 0 {
        return Err(SbiError::Config("tilt basis needs k ≥ 1 functions".into()));
    }
    let n = obs.len();
    let sim_seed = tagged_seed(seed, "sims");
    let draw_seed = tagged_seed(seed, "resample");
    let per_theta: Vec<(TiltFit, Sample, Option<Sample>)> = (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let th = grid.point(j);
            let s = if cfg.common_sims {
                sim_seed
            } else {
                child_seed(sim_seed, j as u64)
            };
            let sim = simulate_at(family, th, cfg.m, s)?;
            let fit = newton_beta(th, obs, &sim, &cfg.basis, &cfg.newton)?;
            let draw = if fit.converged {
                Some(resample_tilted(
                    &sim,
                    &fit,
                    n,
                    child_seed(draw_seed, j as u64),
                )?)
            } else {
                None
            };
            Ok((fit, sim, draw))
        })
        .collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    let kept: Vec<usize> = (0..grid.len())
        .filter(|j| per_theta[*j].0.converged)
        .collect();
    for j in (0..grid.len()).filter(|j| !per_theta[*j].0.converged) {
        warnings.push(format!("θ index {j} excluded: Newton did not converge"));
    }
    if kept.len() < 2 {
        return Err(SbiError::Degenerate(
            "fewer than two grid points with converged tilt fits".into(),
        ));
    }
    let statistic = match cfg.statistic {
        TiltStatistic::Auto if family.at(grid.point(0))?.has_density() => {
            TiltStatistic::ProfileDensity
        }
        TiltStatistic::Auto => TiltStatistic::Classifier,
        s => s,
    };
    let tilt_part = |fit: &TiltFit, data: &Sample| -> Result<f64> {
        let bbar = cfg.basis.mean(data)?;
        Ok(data.len() as f64 * (dot(&fit.beta_hat, &bbar) - fit.log_c_hat))
    };
    let (t_obs, t_sim): (Vec<f64>, Vec<f64>) = match statistic {
        TiltStatistic::ProfileDensity | TiltStatistic::TiltRatio => {
            let with_density = statistic == TiltStatistic::ProfileDensity;
            let eval = |j: usize, data: &Sample| -> Result<f64> {
                let fit = &per_theta[j].0;
                let mut t = tilt_part(fit, data)?;
                if with_density {
                    let model = family.at(grid.point(j))?;
                    for y in data.rows() {
                        t += density(&model, y)?.ln();
                    }
                }
                Ok(t)
            };
            let pairs: Vec<(f64, f64)> = kept
                .par_iter()
                .map(|&j| {
                    Ok((
                        eval(j, obs)?,
                        eval(j, per_theta[j].2.as_ref().expect("kept fits have draws"))?,
                    ))
                })
                .collect::<Result<_>>()?;
            pairs.into_iter().unzip()
        }
        _ => {
            let d = grid.dim;
            let k = cfg.basis.k();
            let mut pts = Vec::with_capacity(kept.len() * (d + k));
            for &j in &kept {
                pts.extend_from_slice(grid.point(j));
                pts.extend_from_slice(&per_theta[j].0.beta_hat);
            }
            let aug = Grid::new(pts, d + k)?;
            let draws: Vec<Sample> = kept
                .iter()
                .map(|&j| per_theta[j].2.clone().expect("kept fits have draws"))
                .collect();
            let ds = build_dataset(&aug, &draws, tagged_seed(seed, "permutation"))?;
            let clf = fit_likelihood(&ds, &IrlsConfig::default())?;
            let obs_stats = summary_stats(obs);
            (0..kept.len())
                .map(|i| {
                    (
                        clf.log_likelihood_stats(&obs_stats, aug.point(i)),
                        clf.log_likelihood_stats(&ds.summaries[i], aug.point(i)),
                    )
                })
                .unzip()
        }
    };
    let b: Vec<f64> = t_sim
        .iter()
        .zip(&t_obs)
        .map(|(s, o)| if s <= o { 1.0 } else { 0.0 })
        .collect();
    let weights = match cfg.weighting {
        TiltWeighting::Uniform => None,
        TiltWeighting::PerPoint => Some(
            kept.iter()
                .map(|&j| (per_theta[j].0.mean_tilt - per_theta[j].0.log_c_hat).exp())
                .collect(),
        ),
        TiltWeighting::Sum => {
            let lw: Vec<f64> = kept
                .iter()
                .map(|&j| {
                    let f = &per_theta[j].0;
                    cfg.m as f64 * f.mean_tilt - f.log_c_hat
                })
                .collect();
            let mx = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Some(lw.iter().map(|v| (v - mx).exp()).collect())
        }
    };
    let mut design = Vec::with_capacity(kept.len() * grid.dim);
    for &j in &kept {
        design.extend_from_slice(grid.point(j));
    }
    let design = Grid::new(design, grid.dim)?;
    let surface = PValueSurface::from_raw_weighted(
        &design,
        b.clone(),
        weights,
        None,
        &cfg.bandwidth,
        cfg.alpha,
    )?;
    let set = surface.confidence_set();
    let best = (0..kept.len()).fold(0, |bi, i| if t_obs[i] > t_obs[bi] { i } else { bi });
    let theta_hat = design.point(best).to_vec();
    let fits = per_theta
        .into_iter()
        .map(|(mut f, _, _)| {
            f.weights = Vec::new();
            f
        })
        .collect();
    Ok(TiltCsResult {
        fits,
        kept,
        profile: t_obs,
        theta_hat,
        b,
        surface,
        set,
        warnings,
    })
}

/// Tilt fit at a single θ using the same simulation stream as grid index
/// `index` of [`tilt_profile_cs`] with the same seed.
pub fn refit_at(
    obs: &Sample,
    family: &Family,
    theta: &[f64],
    index: usize,
    cfg: &TiltConfig,
    seed: u64,
) -> Result<(TiltFit, Sample)> {
    let sim_seed = tagged_seed(seed, "sims");
    let s = if cfg.common_sims {
        sim_seed
    } else {
        child_seed(sim_seed, index as u64)
    };
    let sim = simulate_at(family, theta, cfg.m, s)?;
    let fit = newton_beta(theta, obs, &sim, &cfg.basis, &cfg.newton)?;
    Ok((fit, sim))
}

/// Pearson χ² between a histogram of 1-D data and the weighted simulation
/// distribution: `bins` equal-width bins over the data range (outer bins
/// open), adjacent bins merged until each expects ≥ 5 counts. Returns the
/// statistic and the degrees of freedom (merged bins − 1).
pub fn histogram_chi2(
    obs: &Sample,
    sim: &Sample,
    weights: &[f64],
    bins: usize,
) -> Result<(f64, usize)> {
    if obs.dim() != 1 || sim.dim() != 1 {
        return Err(SbiError::Dimension {
            expected: 1,
            got: obs.dim().max(sim.dim()),
        });
    }
    if weights.len() != sim.len() || bins < 2 || obs.is_empty() {
        return Err(SbiError::Degenerate(
            "histogram check needs matching weights, data and ≥ 2 bins".into(),
        ));
    }
    let y = obs.values_1d()?;
    let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    if !(width > 0.0) {
        return Err(SbiError::Degenerate("data are constant".into()));
    }
    let bin_of = |v: f64| (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
    let mut observed = vec![0.0; bins];
    for v in y {
        observed[bin_of(*v)] += 1.0;
    }
    let total_w: f64 = weights.iter().sum();
    let mut expected = vec![0.0; bins];
    for (v, w) in sim.values_1d()?.iter().zip(weights) {
        expected[bin_of(*v)] += w / total_w * y.len() as f64;
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for b in 0..bins {
        o_acc += observed[b];
        e_acc += expected[b];
        if e_acc >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    match cells.last_mut() {
        Some(last) => {
            last.0 += o_acc;
            last.1 += e_acc;
        }
        None => {
            return Err(SbiError::Degenerate(
                "fewer than 5 expected counts in total".into(),
            ))
        }
    }
    let stat = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    Ok((stat, cells.len().saturating_sub(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::{simulate, ModelSpec};

    fn linear() -> TiltBasis {
        TiltBasis::new(vec![BasisFn::Power { p: 1 }]).unwrap()
    }

    fn std_normal(m: usize, seed: u64) -> Sample {
        simulate(
            &ModelSpec::GaussianLoc {
                theta: 0.0,
                sigma: 1.0,
            },
            m,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_tilt_has_zero_loglik() {
        let obs = std_normal(100, 1);
        let sim = std_normal(200, 2);
        assert_eq!(profile_loglik(&[0.0], &obs, &sim, &linear()).unwrap(), 0.0);
    }

    #[test]
    fn normalizer_matches_gaussian_mgf() {
        let sim = std_normal(1_000_000, 3);
        let b = linear().eval_sample(&sim).unwrap();
        let c = log_mean_exp(&[0.5], &b, 1).unwrap().exp();
        assert!((c - 0.125f64.exp()).abs() < 0.005, "{c}");
    }

    #[test]
    fn newton_recovers_linear_tilt() {
        let obs = simulate(
            &ModelSpec::GaussianLoc {
                theta: 0.5,
                sigma: 1.0,
            },
            10_000,
            4,
        )
        .unwrap();
        let sim = std_normal(10_000, 5);
        let fit = newton_beta(&[0.0], &obs, &sim, &linear(), &NewtonConfig::default()).unwrap();
        assert!(fit.converged, "{:?}", fit.warnings);
        assert!((fit.beta_hat[0] - 0.5).abs() < 0.05, "{:?}", fit.beta_hat);
        let s: f64 = fit.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let direct = b_mean_exp(&fit.beta_hat, &sim);
        assert!((fit.c_hat - direct).abs() < 1e-12 * direct);

        let draw = resample_tilted(&sim, &fit, 20_000, 6).unwrap();
        let mean = crate::stats::mean(draw.as_flat());
        // tilted N(0,1) by βx has mean β
        assert!(
            (mean - fit.beta_hat[0]).abs() < 3.0 * (1.0 / 20_000f64).sqrt() + 0.02,
            "{mean}"
        );
    }

    fn b_mean_exp(beta: &[f64], sim: &Sample) -> f64 {
        sim.as_flat()
            .iter()
            .map(|y| (beta[0] * y).exp())
            .sum::<f64>()
            / sim.len() as f64
    }

    #[test]
    fn newton_near_zero_for_untilted_data() {
        let obs = std_normal(10_000, 7);
        let sim = std_normal(10_000, 8);
        let fit = newton_beta(&[0.0], &obs, &sim, &linear(), &NewtonConfig::default()).unwrap();
        assert!(fit.beta_hat[0].abs() < 0.05);
    }

    #[test]
    fn zero_weights_resample_uniformly_and_point_mass_repeats() {
        let sim = Sample::observed(vec![1.0, 2.0, 3.0]).unwrap();
        let mut fit = newton_beta(&[0.0], &sim, &sim, &linear(), &NewtonConfig::default()).unwrap();
        assert!(fit.weights.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-12));
        fit.weights = vec![0.0, 1.0, 0.0];
        assert!(fit.degenerate_weights());
        let r = resample_tilted(&sim, &fit, 10, 1).unwrap();
        assert!(r.as_flat().iter().all(|v| *v == 2.0));
    }

    #[test]
    fn empty_basis_rejected() {
        assert!(TiltBasis::new(vec![]).is_err());
    }

    #[test]
    fn truncated_power() {
        let f = BasisFn::TruncatedPower { p: 3, tau: 1000.0 };
        assert_eq!(f.eval(2.0), 8.0);
        assert_eq!(f.eval(10.0), 0.0);
        assert_eq!(f.eval(-11.0), 0.0);
    }

    #[test]
    fn weighted_cs_covers_truth_in_correct_model() {
        let fam = Family::new(
            ModelSpec::GaussianLoc {
                theta: 0.0,
                sigma: 1.0,
            },
            vec!["theta".into()],
        )
        .unwrap();
        let obs = simulate(
            &ModelSpec::GaussianLoc {
                theta: 0.3,
                sigma: 1.0,
            },
            2000,
            9,
        )
        .unwrap();
        let grid = Grid::linspace(-0.5, 1.1, 41).unwrap();
        let cfg = TiltConfig::new(TiltBasis::cubic_quartic(1e3), 20_000);
        let res = tilt_profile_cs(&obs, &fam, &grid, &cfg, 10).unwrap();
        assert!(res.converged_fraction() > 0.95);
        assert!(res.set.contains(&[0.3]).unwrap());
        assert!(!res.set.contains(&[1.05]).unwrap());
        assert!((res.theta_hat[0] - 0.3).abs() < 0.2, "{:?}", res.theta_hat);
        let b0 = &res.fits[grid.nearest(&[0.3])].beta_hat;
        assert!(b0.iter().all(|b| b.abs() < 0.05), "{b0:?}");
    }

    #[test]
    fn histogram_chi2_matches_hand_count() {
        let obs = Sample::observed((0..100).map(|i| i as f64).collect()).unwrap();
        let sim = obs.clone();
        let (stat, df) = histogram_chi2(&obs, &sim, &vec![1.0; 100], 10).unwrap();
        assert!(stat.abs() < 1e-12);
        assert_eq!(df, 9);
        // all simulated mass in the lowest bin: 10 bins of 10 observed vs one cell expecting 100
        let sim = Sample::observed(vec![0.0; 100]).unwrap();
        let (stat, df) = histogram_chi2(&obs, &sim, &vec![1.0; 100], 10).unwrap();
        assert_eq!(df, 0);
        assert!(stat.abs() < 1e-12);
    }
}
