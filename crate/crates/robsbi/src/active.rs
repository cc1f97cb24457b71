//! Active learning of the confidence-set boundary.
//!
//! Each round refits the classifier likelihood on all simulations so far,
//! regresses the indicators B_j on θ_j to get p̂v(θ) and its standard error
//! ŝ(θ), and draws the next batch from candidates with probability
//! ∝ e(θ) = Φ(−|α − p̂v(θ)|/ŝ(θ)).

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbiError};
use crate::grid::{Grid, ThetaBox};
use crate::likelihood_sbi::{
    likelihood_cs_with, simulate_datasets, LikelihoodConfig, LikelihoodResult,
};
use crate::model_zoo::Family;
use crate::relative_fit::ConfidenceSet;
use crate::rng::{child_seed, rng_from_seed, tagged_seed};
use crate::sample::Sample;
use crate::stats::{chi2_quantile, normal_cdf, KernelSmoother};

const S_FLOOR: f64 = 1e-6;

/// e = Φ(−|α − p̂v|/ŝ), with ŝ floored at 10⁻⁶ and the result kept in (0, 0.5].
pub fn acquisition(pv_hat: f64, s_hat: f64, alpha: f64) -> f64 {
    let s = if s_hat > S_FLOOR { s_hat } else { S_FLOOR };
    normal_cdf(-(alpha - pv_hat).abs() / s).max(f64::MIN_POSITIVE)
}

/// Draws `count` distinct indices with probability ∝ weights, skipping
/// indices in `exclude`. Falls back to uniform when all weights vanish;
/// the flag reports the fallback.
pub fn weighted_without_replacement(
    weights: &[f64],
    exclude: &BTreeSet<usize>,
    count: usize,
    seed: u64,
) -> (Vec<usize>, bool) {
    let mut rng = rng_from_seed(seed);
    let mut avail: Vec<usize> = (0..weights.len())
        .filter(|i| !exclude.contains(i))
        .collect();
    let total: f64 = avail.iter().map(|&i| weights[i]).sum();
    let uniform = !(total > 1e-300);
    let mut w: Vec<f64> = avail
        .iter()
        .map(|&i| if uniform { 1.0 } else { weights[i] })
        .collect();
    let mut out = Vec::with_capacity(count.min(avail.len()));
    while out.len() < count && !avail.is_empty() {
        let tot: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * tot;
        let mut pick = avail.len() - 1;
        for (p, wi) in w.iter().enumerate() {
            if u < *wi {
                pick = p;
                break;
            }
            u -= wi;
        }
        out.push(avail.swap_remove(pick));
        w.swap_remove(pick);
    }
    (out, uniform)
}

/// ∫ over the symmetric difference of |α − pv| on a grid of equal cells.
pub fn excess_risk(
    set: &ConfidenceSet,
    oracle_pv: &dyn Fn(&[f64]) -> f64,
    alpha: f64,
    region: &ThetaBox,
) -> f64 {
    let n = set.membership.len();
    let cell = region.volume() / n as f64;
    set.grid
        .chunks_exact(set.dim)
        .zip(&set.membership)
        .map(|(th, inside)| {
            let pv = oracle_pv(th);
            if (pv >= alpha) != *inside {
                (alpha - pv).abs() * cell
            } else {
                0.0
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum InitDesign {
    Lattice { per_axis: usize },
    Uniform { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlConfig {
    pub init: InitDesign,
    pub batch: usize,
    /// Number of rounds η (η = 1 is one-shot SBI).
    pub iterations: usize,
    pub alpha: f64,
    pub candidates_per_axis: usize,
    pub likelihood: LikelihoodConfig,
    /// Draw the first rounds uniformly from the χ² level set of a quadratic
    /// fit to the estimated log-likelihood.
    pub warm_start: bool,
    pub warm_start_rounds: usize,
    pub warm_start_batch: usize,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            init: InitDesign::Lattice { per_axis: 10 },
            batch: 25,
            iterations: 20,
            alpha: 0.05,
            candidates_per_axis: 64,
            likelihood: LikelihoodConfig::default(),
            warm_start: false,
            warm_start_rounds: 5,
            warm_start_batch: 50,
        }
    }
}

impl AlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SbiError::Config(format!(
                "α must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.iterations == 0 || self.batch == 0 || self.candidates_per_axis < 2 {
            return Err(SbiError::Config(
                "iterations, batch and candidate grid must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_theta: usize,
    pub set_size: usize,
    pub excess_risk: Option<f64>,
    /// Fraction of the batch drawn this round lying in {|p̂v − α| < 2ŝ}.
    pub batch_in_band: f64,
}

/// Accumulated design and simulations plus the latest surface on the
/// candidate lattice.
#[derive(Debug, Clone)]
pub struct AlState {
    pub region: ThetaBox,
    pub thetas: Grid,
    pub sims: Vec<Sample>,
    /// Indicators B_j and smoothing bandwidth of the latest fit.
    pub b: Vec<f64>,
    pub bandwidth: Vec<f64>,
    /// Dense lattice on which e is evaluated and the set is reported.
    pub candidates: Grid,
    pub pv_hat: Vec<f64>,
    pub s_hat: Vec<f64>,
    /// Half the lattice spacing per axis.
    pub half_step: Vec<f64>,
    /// Half-spacing lattice keys of candidates already drawn.
    pub used: BTreeSet<Vec<i64>>,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

impl AlState {
    fn key(&self, theta: &[f64]) -> Vec<i64> {
        (0..theta.len())
            .map(|a| ((theta[a] - self.region.lo[a]) / self.half_step[a]).round() as i64)
            .collect()
    }

    /// CSV with columns θ…, pv_hat, s_hat, in_set over the candidate lattice.
    pub fn write_surface_csv<W: Write>(&self, alpha: f64, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.candidates.dim;
        let mut header: Vec<String> = (0..d).map(|a| format!("theta{a}")).collect();
        header.extend(["pv_hat", "s_hat", "in_set"].map(String::from));
        w.write_record(&header)?;
        for (j, p) in self.candidates.rows().enumerate() {
            let mut rec: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            rec.push(format!("{}", self.pv_hat[j]));
            rec.push(format!("{}", self.s_hat[j]));
            rec.push(if self.pv_hat[j] >= alpha {
                "1".into()
            } else {
                "0".into()
            });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV of the accumulated design S_θ.
    pub fn write_design_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.thetas.dim;
        w.write_record((0..d).map(|a| format!("theta{a}")))?;
        for p in self.thetas.rows() {
            w.write_record(p.iter().map(|v| format!("{v}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws the next batch ∝ e(θ) without replacement. Candidates are the
/// lattice plus, around lattice points in the band {|p̂v − α| < 2ŝ}, one
/// bisection level (the 2^d half-spacing diagonal neighbours). Returns the
/// batch and the fraction of it lying in the band.
pub fn sample_next(
    state: &mut AlState,
    batch: usize,
    alpha: f64,
    seed: u64,
) -> Result<(Grid, f64)> {
    let d = state.candidates.dim;
    let mut pts: Vec<Vec<f64>> = state.candidates.rows().map(|p| p.to_vec()).collect();
    let mut keys: BTreeSet<Vec<i64>> = pts.iter().map(|p| state.key(p)).collect();
    let mut refined = Vec::new();
    for (i, p) in state.candidates.rows().enumerate() {
        if (state.pv_hat[i] - alpha).abs() >= 2.0 * state.s_hat[i] {
            continue;
        }
        for corner in 0..(1usize << d) {
            let q: Vec<f64> = (0..d)
                .map(|a| {
                    let h = 0.5 * state.half_step[a];
                    if corner >> a & 1 == 1 {
                        p[a] + h
                    } else {
                        p[a] - h
                    }
                })
                .collect();
            if state.region.contains(&q) && keys.insert(state.key(&q)) {
                refined.push(q);
            }
        }
    }
    let mut pv = state.pv_hat.clone();
    let mut s = state.s_hat.clone();
    if !refined.is_empty() {
        let sm = KernelSmoother::new(&state.thetas.points, d, &state.bandwidth)?;
        let extra: Vec<(f64, f64)> = refined
            .par_iter()
            .enumerate()
            .map(|(i, q)| {
                sm.smooth_with_se(&state.b, q, i)
                    .map(|(p, s)| (p.clamp(0.0, 1.0), s))
            })
            .collect::<Result<_>>()?;
        for (p, e) in extra {
            pv.push(p);
            s.push(e);
        }
        pts.extend(refined);
    }
    let exclude: BTreeSet<usize> = pts
        .iter()
        .enumerate()
        .filter(|(_, p)| state.used.contains(&state.key(p)))
        .map(|(i, _)| i)
        .collect();
    let e: Vec<f64> = pv
        .iter()
        .zip(&s)
        .map(|(p, s)| acquisition(*p, *s, alpha))
        .collect();
    let (picks, fallback) = weighted_without_replacement(&e, &exclude, batch, seed);
    if fallback {
        state.warnings.push(format!(
            "round {}: acquisition vanished; uniform draw",
            state.iteration
        ));
    }
    if picks.is_empty() {
        return Err(SbiError::Degenerate("candidate grid exhausted".into()));
    }
    let in_band = picks
        .iter()
        .filter(|&&i| (pv[i] - alpha).abs() < 2.0 * s[i])
        .count() as f64
        / picks.len() as f64;
    let mut out = Vec::with_capacity(picks.len() * d);
    for &i in &picks {
        let k = state.key(&pts[i]);
        state.used.insert(k);
        out.extend_from_slice(&pts[i]);
    }
    Ok((Grid::new(out, d)?, in_band))
}

#[derive(Debug, Clone)]
pub struct AlResult {
    pub set: ConfidenceSet,
    pub state: AlState,
}

fn fit_round(
    obs: &Sample,
    thetas: &Grid,
    sims: &[Sample],
    cfg: &LikelihoodConfig,
    seed: u64,
) -> Result<LikelihoodResult> {
    match likelihood_cs_with(obs, thetas, sims, cfg, seed) {
        Err(SbiError::NoConvergence { .. }) | Err(SbiError::Numerical(_)) => {
            let mut retry = cfg.clone();
            retry.irls.ridge *= 2.0;
            likelihood_cs_with(obs, thetas, sims, &retry, seed)
        }
        r => r,
    }
}

/// p̂v and weighted-residual ŝ on the candidate grid.
fn surface_on(
    fit: &LikelihoodResult,
    thetas: &Grid,
    candidates: &Grid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sm = KernelSmoother::new(&thetas.points, thetas.dim, &fit.surface.bandwidth)?;
    let pairs: Vec<(f64, f64)> = (0..candidates.len())
        .into_par_iter()
        .map(|i| {
            sm.smooth_with_se(&fit.b, candidates.point(i), i)
                .map(|(p, s)| (p.clamp(0.0, 1.0), s))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Candidates inside the χ²_{d,1−α} level set of a concave quadratic fitted
/// to log L̂ over the design; `None` if the fit is not concave.
fn quadratic_level_set(
    fit: &LikelihoodResult,
    thetas: &Grid,
    candidates: &Grid,
    alpha: f64,
) -> Option<Vec<usize>> {
    let d = thetas.dim;
    let feats = |t: &[f64]| {
        let mut f = vec![1.0];
        f.extend_from_slice(t);
        for a in 0..d {
            for b in a..d {
                f.push(t[a] * t[b]);
            }
        }
        f
    };
    let p = 1 + d + d * (d + 1) / 2;
    let x = DMatrix::from_fn(thetas.len(), p, |i, j| feats(thetas.point(i))[j]);
    let y = DVector::from_column_slice(&fit.log_lik_obs);
    let coef = (x.transpose() * &x + DMatrix::identity(p, p) * 1e-8)
        .cholesky()?
        .solve(&(x.transpose() * y));
    let mut h = DMatrix::zeros(d, d);
    let mut idx = 1 + d;
    for a in 0..d {
        for b in a..d {
            if a == b {
                h[(a, a)] = 2.0 * coef[idx];
            } else {
                h[(a, b)] = coef[idx];
                h[(b, a)] = coef[idx];
            }
            idx += 1;
        }
    }
    if h.symmetric_eigen().eigenvalues.iter().any(|e| *e >= 0.0) {
        return None;
    }
    let q: Vec<f64> = candidates
        .rows()
        .map(|t| DVector::from_vec(feats(t)).dot(&coef))
        .collect();
    let qmax = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cut = chi2_quantile(1.0 - alpha, d as f64);
    Some(
        (0..q.len())
            .filter(|&i| 2.0 * (qmax - q[i]) <= cut)
            .collect(),
    )
}

fn initial_design(region: &ThetaBox, init: &InitDesign, seed: u64) -> Result<Grid> {
    match init {
        InitDesign::Lattice { per_axis } => Grid::lattice(region, &vec![*per_axis; region.dim()]),
        InitDesign::Uniform { count } => Grid::uniform(region, *count, seed),
    }
}

/// Active learning for the likelihood test-inversion confidence set.
/// Simulated datasets have the size of `obs`. With an oracle p-value the
/// excess risk is tracked per round.
pub fn al_loop(
    obs: &Sample,
    family: &Family,
    region: &ThetaBox,
    cfg: &AlConfig,
    seed: u64,
    oracle: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>,
) -> Result<AlResult> {
    al_loop_with(obs, family, region, cfg, seed, oracle, &mut |_| Ok(()))
}

/// As [`al_loop`], calling `on_round` with the state after every fit.
pub fn al_loop_with(
    obs: &Sample,
    family: &Family,
    region: &ThetaBox,
    cfg: &AlConfig,
    seed: u64,
    oracle: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>,
    on_round: &mut dyn FnMut(&AlState) -> Result<()>,
) -> Result<AlResult> {
    cfg.validate()?;
    let n = obs.len();
    let candidates = Grid::lattice(region, &vec![cfg.candidates_per_axis; region.dim()])?;
    let mut next = initial_design(region, &cfg.init, tagged_seed(seed, "init"))?;
    let sim_seed = tagged_seed(seed, "sims");
    let mut state = AlState {
        region: region.clone(),
        thetas: Grid {
            dim: region.dim(),
            points: Vec::new(),
        },
        sims: Vec::new(),
        b: Vec::new(),
        bandwidth: Vec::new(),
        half_step: (0..region.dim())
            .map(|a| 0.5 * candidates.spacing(a))
            .collect(),
        candidates: candidates.clone(),
        pv_hat: Vec::new(),
        s_hat: Vec::new(),
        used: BTreeSet::new(),
        iteration: 0,
        history: Vec::new(),
        warnings: Vec::new(),
    };
    let mut last_band = f64::NAN;
    let mut set = None;
    for it in 1..=cfg.iterations {
        let offset = state.sims.len() as u64;
        let batch_sims = simulate_datasets(family, &next, n, child_seed(sim_seed, offset))?;
        state.thetas.points.extend_from_slice(&next.points);
        state.sims.extend(batch_sims);
        let fit = fit_round(
            obs,
            &state.thetas,
            &state.sims,
            &cfg.likelihood,
            child_seed(tagged_seed(seed, "fit"), it as u64),
        )?;
        let (pv, s) = surface_on(&fit, &state.thetas, &candidates)?;
        let cs = ConfidenceSet::from_pv(
            candidates.dim,
            candidates.points.clone(),
            pv.clone(),
            cfg.alpha,
            None,
        );
        state.pv_hat = pv;
        state.s_hat = s;
        state.b = fit.b.clone();
        state.bandwidth = fit.surface.bandwidth.clone();
        state.iteration = it;
        state.history.push(IterationRecord {
            iteration: it,
            n_theta: state.thetas.len(),
            set_size: cs.size(),
            excess_risk: oracle.map(|o| excess_risk(&cs, o, cfg.alpha, region)),
            batch_in_band: last_band,
        });
        set = Some(cs);
        on_round(&state)?;
        if it == cfg.iterations {
            break;
        }
        let pick_seed = child_seed(tagged_seed(seed, "pick"), it as u64);
        let warm = if cfg.warm_start && it <= cfg.warm_start_rounds {
            quadratic_level_set(&fit, &state.thetas, &candidates, cfg.alpha)
                .filter(|v| !v.is_empty())
        } else {
            None
        };
        next = match warm {
            Some(inside) => {
                let w: Vec<f64> = (0..candidates.len())
                    .map(|i| {
                        if inside.binary_search(&i).is_ok() {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let exclude: BTreeSet<usize> = (0..candidates.len())
                    .filter(|&i| state.used.contains(&state.key(candidates.point(i))))
                    .collect();
                let (picks, _) =
                    weighted_without_replacement(&w, &exclude, cfg.warm_start_batch, pick_seed);
                let mut pts = Vec::with_capacity(picks.len() * candidates.dim);
                for &i in &picks {
                    let k = state.key(candidates.point(i));
                    state.used.insert(k);
                    pts.extend_from_slice(candidates.point(i));
                }
                last_band = f64::NAN;
                Grid::new(pts, candidates.dim)?
            }
            None => {
                let (g, band) = sample_next(&mut state, cfg.batch, cfg.alpha, pick_seed)?;
                last_band = band;
                g
            }
        };
    }
    let set =
        set.ok_or_else(|| SbiError::Degenerate("no active-learning round completed".into()))?;
    Ok(AlResult { set, state })
}

/// One-shot SBI on a regular lattice with about `budget` points, evaluated
/// on the same candidate grid as [`al_loop`].
pub fn grid_sbi(
    obs: &Sample,
    family: &Family,
    region: &ThetaBox,
    budget: usize,
    cfg: &AlConfig,
    seed: u64,
) -> Result<(ConfidenceSet, Grid)> {
    let per_axis = ((budget as f64).powf(1.0 / region.dim() as f64).round() as usize).max(2);
    let design = Grid::lattice(region, &vec![per_axis; region.dim()])?;
    let sims = simulate_datasets(family, &design, obs.len(), tagged_seed(seed, "sims"))?;
    let fit = fit_round(
        obs,
        &design,
        &sims,
        &cfg.likelihood,
        tagged_seed(seed, "fit"),
    )?;
    let candidates = Grid::lattice(region, &vec![cfg.candidates_per_axis; region.dim()])?;
    let (pv, _) = surface_on(&fit, &design, &candidates)?;
    Ok((
        ConfidenceSet::from_pv(candidates.dim, candidates.points, pv, cfg.alpha, None),
        design,
    ))
}

/// Exact p-value exp(−n‖ȳ − θ‖²/(4·σ²/2)) of the likelihood-ratio test for
/// the mean of a bivariate N(θ, σ²I) sample: n‖ȳ − θ‖²/σ² ~ χ²₂.
pub fn gaussian_mean_oracle(obs: &Sample, sigma: f64) -> impl Fn(&[f64]) -> f64 + Sync {
    let d = obs.dim();
    let n = obs.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|a| obs.rows().map(|p| p[a]).sum::<f64>() / n)
        .collect();
    move |th: &[f64]| {
        let q: f64 = th
            .iter()
            .zip(&mean)
            .map(|(t, m)| (t - m) * (t - m))
            .sum::<f64>()
            * n
            / (sigma * sigma);
        (-q / 2.0).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::{simulate, ModelSpec};

    #[test]
    fn acquisition_values() {
        assert_eq!(acquisition(0.05, 0.1, 0.05), 0.5);
        assert!((acquisition(0.15, 0.1, 0.05) - 0.158_655_253_931_457).abs() < 1e-9);
        assert!(acquisition(0.5, 0.0, 0.05) > 0.0 && acquisition(0.5, 0.0, 0.05) < 1e-300);
        assert_eq!(acquisition(0.5, 0.3, 0.5), 0.5);
    }

    #[test]
    fn sampling_without_replacement() {
        let (p, fb) = weighted_without_replacement(&[0.0, 1.0, 0.0], &BTreeSet::new(), 1, 1);
        assert_eq!(p, vec![1]);
        assert!(!fb);
        let (p, fb) = weighted_without_replacement(&[0.0; 5], &BTreeSet::from([0]), 10, 2);
        assert!(fb);
        let mut s = p.clone();
        s.sort();
        assert_eq!(s, vec![1, 2, 3, 4]);
    }

    #[test]
    fn oracle_pvalue_is_chi_square_tail() {
        let obs = Sample::new(vec![1.0, 2.0, 1.0, 2.0], 2, crate::Provenance::Observed, 0).unwrap();
        let pv = gaussian_mean_oracle(&obs, 2f64.sqrt());
        assert_eq!(pv(&[1.0, 2.0]), 1.0);
        // n‖ȳ−θ‖²/σ² = 2·1/2 = 1 → P(χ²₂ ≥ 1) = e^{−1/2}
        assert!((pv(&[2.0, 2.0]) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn excess_risk_zero_for_oracle_set() {
        let region = ThetaBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let g = Grid::lattice(&region, &[20, 20]).unwrap();
        let f = |t: &[f64]| (-(t[0] * t[0] + t[1] * t[1])).exp();
        let pv: Vec<f64> = g.rows().map(f).collect();
        let cs = ConfidenceSet::from_pv(2, g.points.clone(), pv, 0.5, None);
        assert_eq!(excess_risk(&cs, &f, 0.5, &region), 0.0);
        let empty = ConfidenceSet::from_pv(2, g.points.clone(), vec![0.0; 400], 0.5, None);
        assert!(excess_risk(&empty, &f, 0.5, &region) > 0.0);
    }

    #[test]
    fn single_round_is_one_shot_and_design_grows() {
        let fam = Family::new(
            ModelSpec::IsoGaussian {
                mean: vec![0.0, 0.0],
                sigma: 2f64.sqrt(),
            },
            vec!["mean0".into(), "mean1".into()],
        )
        .unwrap();
        let obs = simulate(
            &ModelSpec::IsoGaussian {
                mean: vec![1.0, 2.0],
                sigma: 2f64.sqrt(),
            },
            10,
            3,
        )
        .unwrap();
        let region = ThetaBox::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let cfg = AlConfig {
            iterations: 1,
            candidates_per_axis: 16,
            ..Default::default()
        };
        let r = al_loop(&obs, &fam, &region, &cfg, 1, None).unwrap();
        assert_eq!(r.state.thetas.len(), 100);
        let cfg = AlConfig {
            iterations: 3,
            candidates_per_axis: 16,
            ..Default::default()
        };
        let r = al_loop(&obs, &fam, &region, &cfg, 1, None).unwrap();
        assert_eq!(r.state.thetas.len(), 150);
        assert_eq!(r.state.used.len(), 50);
        let mut seen = BTreeSet::new();
        assert!(r
            .state
            .thetas
            .rows()
            .skip(100)
            .all(|p| seen.insert(r.state.key(p))));
    }
}
