//! Simulation-based goodness-of-fit test of H0: P ∈ {P_θ}.
//!
//! T̂_n = min_s d(P*_M(θ_s), P_n) and T̂_n(θ_r) = min_s d(P*_M(θ_s), P_n(θ_r))
//! use one shared family of large samples; the indicators
//! 1{T̂_n(θ_r) ≥ T̂_n} are kernel-smoothed over θ and p̂ is their maximum.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbiError};
use crate::grid::Grid;
use crate::model_zoo::{simulate_at, Family};
use crate::rng::{child_seed, tagged_seed};
use crate::sample::Sample;
use crate::stats::{BandwidthRule, KernelSmoother};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GofDistance {
    Wasserstein,
    Ks,
}

impl GofDistance {
    pub fn label(self) -> &'static str {
        match self {
            Self::Wasserstein => "wasserstein",
            Self::Ks => "ks",
        }
    }
}

fn sorted(s: &Sample) -> Result<Vec<f64>> {
    let v = s.sorted_1d()?;
    if v.is_empty() {
        return Err(SbiError::Degenerate(
            "distance needs nonempty samples".into(),
        ));
    }
    Ok(v)
}

/// Exact 2-Wasserstein distance between two sorted samples: the quantile
/// functions are integrated piece by piece over the merged breakpoints
/// i/n_a and j/n_b (compared in integer units of 1/(n_a·n_b)).
pub fn wasserstein_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as u128, b.len() as u128);
    let total = na * nb;
    let (mut i, mut j) = (0usize, 0usize);
    let mut u: u128 = 0;
    let mut acc = 0.0;
    while u < total {
        let next_a = (i as u128 + 1) * nb;
        let next_b = (j as u128 + 1) * na;
        let next = next_a.min(next_b);
        let d = a[i] - b[j];
        acc += d * d * (next - u) as f64;
        u = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    (acc / total as f64).max(0.0).sqrt()
}

pub fn wasserstein_1d(a: &Sample, b: &Sample) -> Result<f64> {
    Ok(wasserstein_sorted(&sorted(a)?, &sorted(b)?))
}

/// Exact sup |F_a − G_b| over the merged order statistics.
pub fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.min(*q),
            (Some(p), None) => *p,
            (None, Some(q)) => *q,
            (None, None) => break,
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

pub fn ks_distance(a: &Sample, b: &Sample) -> Result<f64> {
    Ok(ks_sorted(&sorted(a)?, &sorted(b)?))
}

/// max over probe points x ∈ a of |F_a(x) − G_b(x)|, a lower bound on the
/// KS distance.
fn ks_lower_bound(a: &[f64], b: &[f64]) -> f64 {
    const PROBES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let (na, nb) = (a.len() as f64, b.len() as f64);
    PROBES
        .iter()
        .map(|p| {
            let x = a[((p * na) as usize).min(a.len() - 1)];
            let fa = a.partition_point(|v| *v <= x) as f64 / na;
            let gb = b.partition_point(|v| *v <= x) as f64 / nb;
            (fa - gb).abs()
        })
        .fold(0.0, f64::max)
}

/// A large sorted sample with block sums for an O(n) Wasserstein distance
/// to any sample of size n dividing M.
#[derive(Debug, Clone)]
struct LargeSample {
    sorted: Vec<f64>,
    block: Option<(usize, Vec<f64>, Vec<f64>)>,
}

impl LargeSample {
    fn new(sorted: Vec<f64>, n: usize) -> Self {
        let m = sorted.len();
        let block = (n > 0 && m % n == 0).then(|| {
            let q = m / n;
            let s1 = sorted.chunks_exact(q).map(|c| c.iter().sum()).collect();
            let s2 = sorted
                .chunks_exact(q)
                .map(|c| c.iter().map(|v| v * v).sum())
                .collect();
            (q, s1, s2)
        });
        Self { sorted, block }
    }

    fn distance(&self, small: &[f64], d: GofDistance) -> f64 {
        match d {
            GofDistance::Ks => ks_sorted(small, &self.sorted),
            GofDistance::Wasserstein => match &self.block {
                Some((q, s1, s2)) if s1.len() == small.len() => {
                    let qf = *q as f64;
                    let acc: f64 = small
                        .iter()
                        .zip(s1.iter().zip(s2))
                        .map(|(a, (u, v))| qf * a * a - 2.0 * a * u + v)
                        .sum();
                    (acc / self.sorted.len() as f64).max(0.0).sqrt()
                }
                _ => wasserstein_sorted(small, &self.sorted),
            },
        }
    }
}

/// Simulated side of the test: for every θ_j a size-n sample and an
/// independent size-M sample. Independent of the observed data.
#[derive(Debug, Clone)]
pub struct GofReference {
    pub grid: Grid,
    pub n: usize,
    pub m_large: usize,
    small: Vec<Vec<f64>>,
    large: Vec<LargeSample>,
}

impl GofReference {
    pub fn build(
        family: &Family,
        grid: &Grid,
        n: usize,
        m_large: usize,
        seed: u64,
    ) -> Result<Self> {
        let needed = n.max(grid.len());
        if m_large < needed {
            return Err(SbiError::Config(format!(
                "large-sample size M = {m_large} must satisfy M ≥ max(n, N) = {needed}"
            )));
        }
        if n == 0 {
            return Err(SbiError::Degenerate("n must be positive".into()));
        }
        let small_seed = tagged_seed(seed, "small");
        let large_seed = tagged_seed(seed, "large");
        let pairs: Vec<(Vec<f64>, LargeSample)> = (0..grid.len())
            .into_par_iter()
            .map(|j| {
                let th = grid.point(j);
                let s =
                    simulate_at(family, th, n, child_seed(small_seed, j as u64))?.sorted_1d()?;
                let l = simulate_at(family, th, m_large, child_seed(large_seed, j as u64))?
                    .sorted_1d()?;
                Ok((s, LargeSample::new(l, n)))
            })
            .collect::<Result<_>>()?;
        let (small, large) = pairs.into_iter().unzip();
        Ok(Self {
            grid: grid.clone(),
            n,
            m_large,
            small,
            large,
        })
    }

    fn min_distance(&self, sample: &[f64], d: GofDistance) -> f64 {
        match d {
            GofDistance::Wasserstein => self
                .large
                .iter()
                .map(|l| l.distance(sample, d))
                .fold(f64::INFINITY, f64::min),
            GofDistance::Ks => {
                // exact lower bounds from a few probe points let most pairs skip the full merge
                let mut order: Vec<(f64, usize)> = self
                    .large
                    .iter()
                    .enumerate()
                    .map(|(s, l)| (ks_lower_bound(sample, &l.sorted), s))
                    .collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut best = f64::INFINITY;
                for (lb, s) in order {
                    if lb >= best {
                        break;
                    }
                    best = best.min(self.large[s].distance(sample, d));
                }
                best
            }
        }
    }

    /// T̂_n(θ_r) for every r.
    pub fn null_statistics(&self, d: GofDistance) -> Vec<f64> {
        self.small
            .par_iter()
            .map(|s| self.min_distance(s, d))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub distance: GofDistance,
    pub dim: usize,
    pub thetas: Vec<f64>,
    pub t_n: f64,
    pub t_n_theta: Vec<f64>,
    pub indicators: Vec<f64>,
    pub p_theta: Vec<f64>,
    pub p_hat: f64,
    pub reject: bool,
    pub alpha: f64,
    pub n: usize,
    pub m_large: usize,
    pub bandwidth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofHeader {
    pub p_hat: f64,
    #[serde(rename = "T_n")]
    pub t_n: f64,
    pub decision: String,
    pub alpha: f64,
    #[serde(rename = "M")]
    pub m_large: usize,
    #[serde(rename = "N")]
    pub n_grid: usize,
    pub distance: GofDistance,
}

impl GofResult {
    pub fn header(&self) -> GofHeader {
        GofHeader {
            p_hat: self.p_hat,
            t_n: self.t_n,
            decision: if self.reject {
                "reject".into()
            } else {
                "retain".into()
            },
            alpha: self.alpha,
            m_large: self.m_large,
            n_grid: self.t_n_theta.len(),
            distance: self.distance,
        }
    }

    /// CSV with columns θ…, T_n_theta, p_theta_smoothed.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim).map(|a| format!("theta{a}")).collect();
        header.extend(["T_n_theta", "p_theta_smoothed"].map(String::from));
        w.write_record(&header)?;
        for (j, p) in self.thetas.chunks_exact(self.dim).enumerate() {
            let mut rec: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            rec.push(format!("{}", self.t_n_theta[j]));
            rec.push(format!("{}", self.p_theta[j]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the test against a prebuilt reference; `null_stats` may be passed
/// to reuse T̂_n(θ_r) across observed datasets.
pub fn gof_test_with(
    obs: &Sample,
    reference: &GofReference,
    null_stats: Option<&[f64]>,
    distance: GofDistance,
    alpha: f64,
    bandwidth: &BandwidthRule,
) -> Result<GofResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SbiError::Domain(format!(
            "α must lie in (0, 1), got {alpha}"
        )));
    }
    if obs.dim() != 1 {
        return Err(SbiError::Config(
            "goodness-of-fit distances are one-dimensional only".into(),
        ));
    }
    let t_n = reference.min_distance(&sorted(obs)?, distance);
    let t_n_theta = match null_stats {
        Some(v) => v.to_vec(),
        None => reference.null_statistics(distance),
    };
    let indicators: Vec<f64> = t_n_theta
        .iter()
        .map(|t| if *t >= t_n { 1.0 } else { 0.0 })
        .collect();
    let g = &reference.grid;
    let h = bandwidth.select(&g.points, g.dim, &indicators)?;
    let p_theta: Vec<f64> =
        KernelSmoother::new(&g.points, g.dim, &h)?.smooth_all(&indicators, &g.points, None)?;
    let p_hat = p_theta.iter().cloned().fold(0.0, f64::max).clamp(0.0, 1.0);
    Ok(GofResult {
        distance,
        dim: g.dim,
        thetas: g.points.clone(),
        t_n,
        t_n_theta,
        indicators,
        p_theta,
        p_hat,
        reject: p_hat <= alpha,
        alpha,
        n: reference.n,
        m_large: reference.m_large,
        bandwidth: h,
    })
}

/// Builds the reference with n = |obs| and runs the test.
pub fn gof_test(
    obs: &Sample,
    family: &Family,
    grid: &Grid,
    m_large: usize,
    distance: GofDistance,
    alpha: f64,
    bandwidth: &BandwidthRule,
    seed: u64,
) -> Result<GofResult> {
    let reference = GofReference::build(family, grid, obs.len(), m_large, seed)?;
    gof_test_with(obs, &reference, None, distance, alpha, bandwidth)
}
