//! Relative-fit confidence sets.
//!
//! For each grid value θ_j the test of H0: d(p_θj, p) ≤ d(p_θ̂, p) is run on
//! the second half of the data, with θ̂ fitted on the first half. The
//! one-sided p-values Z_j = Φ(−Δ̂_j/s_j) are kernel-smoothed over Θ and the
//! set {θ : p̂v(θ) ≥ α} is returned.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density_ratio::{fit_ulsif, RatioFitConfig, RatioModel};
use crate::discrepancy::{
    hellinger_terms, mmd_studentized, mmd_terms_cached, power_terms, DiscrepancyKind, KernelBlock,
    RatioFn, RatioValues, UvwTerms,
};
use crate::error::{Result, SbiError};
use crate::grid::Grid;
use crate::model_zoo::{density, simulate_at, Family, ModelSpec};
use crate::rng::{child_seed, rng_from_seed, tagged_seed};
use crate::sample::Sample;
use crate::stats::{normal_cdf, variance, BandwidthRule, KernelSmoother};

/// Raw per-θ p-values and their smoothed surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueSurface {
    pub dim: usize,
    /// Design points θ_j (row-major).
    pub thetas: Vec<f64>,
    /// Z_j, or B_j for Monte Carlo test inversion.
    pub raw: Vec<f64>,
    /// Evaluation points (row-major).
    pub eval: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub bandwidth: Vec<f64>,
    pub alpha: f64,
    /// Multiplicative design weights inside the smoother.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl PValueSurface {
    /// Smooths `raw` over the design and evaluates on `eval` (the design
    /// itself when `None`).
    pub fn from_raw(
        design: &Grid,
        raw: Vec<f64>,
        eval: Option<&Grid>,
        rule: &BandwidthRule,
        alpha: f64,
    ) -> Result<Self> {
        Self::from_raw_weighted(design, raw, None, eval, rule, alpha)
    }

    /// As [`Self::from_raw`], with weights multiplying the kernel in both
    /// numerator and denominator. The bandwidth is chosen without weights.
    pub fn from_raw_weighted(
        design: &Grid,
        raw: Vec<f64>,
        weights: Option<Vec<f64>>,
        eval: Option<&Grid>,
        rule: &BandwidthRule,
        alpha: f64,
    ) -> Result<Self> {
        if let Some(w) = &weights {
            if w.len() != design.len() {
                return Err(SbiError::Dimension {
                    expected: design.len(),
                    got: w.len(),
                });
            }
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(SbiError::Domain(
                    "smoothing weights must be finite and nonnegative".into(),
                ));
            }
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(SbiError::Domain(format!(
                "α must lie in (0, 1), got {alpha}"
            )));
        }
        if raw.len() != design.len() {
            return Err(SbiError::Dimension {
                expected: design.len(),
                got: raw.len(),
            });
        }
        let bandwidth = rule.select(&design.points, design.dim, &raw)?;
        let sm = KernelSmoother::new(&design.points, design.dim, &bandwidth)?;
        let eval_pts = eval.map_or_else(|| design.points.clone(), |g| g.points.clone());
        let smoothed = sm
            .smooth_all(&raw, &eval_pts, weights.as_deref())?
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        Ok(Self {
            dim: design.dim,
            thetas: design.points.clone(),
            raw,
            eval: eval_pts,
            smoothed,
            bandwidth,
            alpha,
            weights,
        })
    }

    fn smoother(&self) -> Result<KernelSmoother> {
        KernelSmoother::new(&self.thetas, self.dim, &self.bandwidth)
    }

    /// Smoothed p-value at an arbitrary θ.
    pub fn pv_at(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim {
            return Err(SbiError::Dimension {
                expected: self.dim,
                got: theta.len(),
            });
        }
        Ok(self
            .smoother()?
            .smooth_at(&self.raw, theta, self.weights.as_deref(), 0)?
            .clamp(0.0, 1.0))
    }

    pub fn confidence_set(&self) -> ConfidenceSet {
        ConfidenceSet::from_pv(
            self.dim,
            self.eval.clone(),
            self.smoothed.clone(),
            self.alpha,
            Some(self.clone()),
        )
    }

    /// CSV with columns θ…, z_raw, pv_smoothed, in_set over the design points.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let sm = self.smoother()?;
        let pv = sm.smooth_all(&self.raw, &self.thetas, self.weights.as_deref())?;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim).map(|a| format!("theta{a}")).collect();
        header.extend(["z_raw", "pv_smoothed", "in_set"].map(String::from));
        w.write_record(&header)?;
        for (j, p) in self.thetas.chunks_exact(self.dim).enumerate() {
            let pvj = pv[j].clamp(0.0, 1.0);
            let mut rec: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            rec.push(format!("{}", self.raw[j]));
            rec.push(format!("{pvj}"));
            rec.push(if pvj >= self.alpha {
                "1".into()
            } else {
                "0".into()
            });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Thresholded p-value surface on an evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub dim: usize,
    pub grid: Vec<f64>,
    pub pv: Vec<f64>,
    pub membership: Vec<bool>,
    pub alpha: f64,
    /// Per-axis [min, max] over members; `None` for an empty set.
    pub hull: Option<Vec<(f64, f64)>>,
    /// Surface the set was built from, for membership of off-grid points.
    #[serde(skip)]
    pub surface: Option<PValueSurface>,
}

impl ConfidenceSet {
    pub fn from_pv(
        dim: usize,
        grid: Vec<f64>,
        pv: Vec<f64>,
        alpha: f64,
        surface: Option<PValueSurface>,
    ) -> Self {
        let membership: Vec<bool> = pv.iter().map(|p| *p >= alpha).collect();
        let hull = hull_of(dim, &grid, &membership);
        Self {
            dim,
            grid,
            pv,
            membership,
            alpha,
            hull,
            surface,
        }
    }

    /// Membership of θ: the smoothed p-value at θ when the surface is known,
    /// otherwise the membership of the nearest grid point.
    pub fn contains(&self, theta: &[f64]) -> Result<bool> {
        if theta.len() != self.dim {
            return Err(SbiError::Dimension {
                expected: self.dim,
                got: theta.len(),
            });
        }
        if let Some(s) = &self.surface {
            return Ok(s.pv_at(theta)? >= self.alpha);
        }
        let g = Grid::new(self.grid.clone(), self.dim)?;
        Ok(self.membership[g.nearest(theta)])
    }

    /// Hull length per axis (0 for an empty set).
    pub fn lengths(&self) -> Vec<f64> {
        match &self.hull {
            Some(h) => h.iter().map(|(a, b)| b - a).collect(),
            None => vec![0.0; self.dim],
        }
    }

    pub fn size(&self) -> usize {
        self.membership.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }
}

fn hull_of(dim: usize, grid: &[f64], membership: &[bool]) -> Option<Vec<(f64, f64)>> {
    let mut hull: Option<Vec<(f64, f64)>> = None;
    for (p, m) in grid.chunks_exact(dim).zip(membership) {
        if !m {
            continue;
        }
        let h = hull.get_or_insert_with(|| p.iter().map(|v| (*v, *v)).collect());
        for (a, v) in p.iter().enumerate() {
            h[a].0 = h[a].0.min(*v);
            h[a].1 = h[a].1.max(*v);
        }
    }
    hull
}

/// Majority vote over sets (each typically at level 1 − α/2): keeps points
/// included in at least half of them.
pub fn merge_sets(sets: &[ConfidenceSet]) -> Result<ConfidenceSet> {
    let first = sets
        .first()
        .ok_or_else(|| SbiError::Degenerate("merge needs at least one set".into()))?;
    if sets
        .iter()
        .any(|s| s.grid != first.grid || s.dim != first.dim)
    {
        return Err(SbiError::Config("merged sets must share one grid".into()));
    }
    let b = sets.len() as f64;
    let freq: Vec<f64> = (0..first.membership.len())
        .map(|i| sets.iter().filter(|s| s.membership[i]).count() as f64 / b)
        .collect();
    let membership: Vec<bool> = freq.iter().map(|f| *f >= 0.5).collect();
    let hull = hull_of(first.dim, &first.grid, &membership);
    Ok(ConfidenceSet {
        dim: first.dim,
        grid: first.grid.clone(),
        pv: freq,
        membership,
        alpha: first.alpha,
        hull,
        surface: None,
    })
}

/// Seeded split into D0 (⌊n/2⌋ points) and D1 (⌈n/2⌉ points).
pub fn split(data: &Sample, seed: u64) -> Result<(Sample, Sample)> {
    if data.len() < 2 {
        return Err(SbiError::Degenerate(
            "splitting needs at least two observations".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let (a, b) = idx.split_at(data.len() / 2);
    Ok((data.select(a), data.select(b)))
}

/// Grid argmin, ignoring non-finite values; ties go to the lowest index.
pub fn argmin_index(values: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|(_, b)| *v < b) {
            best = Some((j, *v));
        }
    }
    best.map(|(j, _)| j)
        .ok_or_else(|| SbiError::Numerical("all discrepancy estimates are non-finite".into()))
}

/// Δ̂ = d̂(θ) − d̂(θ̂) and its standard error.
///
/// Observation terms are paired (same Y_i); reference terms are paired when
/// both sides share a reference sample of equal size; simulation terms are
/// independent. `floor` is added to the variance (see [`VarianceFloor`]).
pub fn delta_hat(
    at: &UvwTerms,
    at_hat: &UvwTerms,
    floor: f64,
    shared_reference: bool,
) -> Result<(f64, f64)> {
    if at.u.len() != at_hat.u.len() {
        return Err(SbiError::Dimension {
            expected: at_hat.u.len(),
            got: at.u.len(),
        });
    }
    let f = at.influence_scale / at.normalizer;
    let fh = at_hat.influence_scale / at_hat.normalizer;
    let delta = at.value() - at_hat.value();
    let du: Vec<f64> =
        at.u.iter()
            .zip(&at_hat.u)
            .map(|(a, b)| f * a - fh * b)
            .collect();
    let mut var = variance(&du) / du.len() as f64
        + f * f * variance(&at.v) / at.v.len() as f64
        + fh * fh * variance(&at_hat.v) / at_hat.v.len() as f64;
    match (&at.w, &at_hat.w) {
        (Some(w), Some(wh)) if shared_reference && w.len() == wh.len() => {
            let dw: Vec<f64> = w.iter().zip(wh).map(|(a, b)| f * a - fh * b).collect();
            var += variance(&dw) / dw.len() as f64;
        }
        (w, wh) => {
            for (t, s) in [(w, f), (wh, fh)] {
                if let Some(t) = t {
                    var += s * s * variance(t) / t.len() as f64;
                }
            }
        }
    }
    var += at.extra_variance + at_hat.extra_variance + floor;
    Ok((delta, var.sqrt()))
}

/// One-sided p-value Φ(−Δ̂/s) for H0: Δ ≤ 0.
pub fn z_value(delta: f64, se: f64) -> f64 {
    normal_cdf(-delta / se)
}

/// How ŝ_θ = p_θ/g is fitted at each grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SFitMode {
    /// Reuse the (σ, λ) cross-validated for r̂ in the same stage.
    #[default]
    ReuseRHat,
    /// Cross-validate every ŝ_θ separately.
    CrossValidated,
}

/// How the 1/n₁ guard against a degenerate variance enters s².
///
/// When θ and θ̂ coincide the influence terms cancel and the estimated
/// variance collapses; adding a vanishing amount keeps Z_j away from 0/0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceFloor {
    /// 1/n₁ added to the asymptotic variance of √n₁·Δ̂, i.e. s² += 1/n₁².
    #[default]
    Asymptotic,
    /// 1/n₁ added to the variance of Δ̂ itself. Strongly conservative: the
    /// resulting s ≥ n₁^{-1/2} dominates the sampling error of Δ̂.
    Estimator,
}

impl VarianceFloor {
    pub fn amount(self, n1: usize) -> f64 {
        let n = n1.max(1) as f64;
        match self {
            Self::Asymptotic => 1.0 / (n * n),
            Self::Estimator => 1.0 / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelFitConfig {
    pub kinds: Vec<DiscrepancyKind>,
    /// Simulations per θ.
    pub m: usize,
    /// Reference sample size.
    pub k: usize,
    pub alpha: f64,
    /// Reference distribution g (needed by the ratio-based discrepancies).
    pub reference: Option<ModelSpec>,
    pub ratio: RatioFitConfig,
    pub s_fit: SFitMode,
    pub bandwidth: BandwidthRule,
    /// Common random numbers: one simulation seed shared by every θ.
    pub common_sims: bool,
    #[serde(default)]
    pub variance_floor: VarianceFloor,
}

impl RelFitConfig {
    pub fn new(kinds: Vec<DiscrepancyKind>, m: usize, reference: Option<ModelSpec>) -> Self {
        Self {
            kinds,
            m,
            k: m,
            alpha: 0.05,
            reference,
            ratio: RatioFitConfig::default(),
            s_fit: SFitMode::default(),
            bandwidth: BandwidthRule::default(),
            common_sims: false,
            variance_floor: VarianceFloor::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(SbiError::Config(
                "at least one discrepancy is required".into(),
            ));
        }
        for k in &self.kinds {
            k.validate()?;
        }
        if self.m < 4 || self.k < 2 {
            return Err(SbiError::Config(
                "need m ≥ 4 simulations and k ≥ 2 reference draws".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SbiError::Domain(format!(
                "α must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.kinds.iter().any(|k| k.needs_ratios()) {
            match &self.reference {
                Some(g) if g.has_density() => {}
                _ => {
                    return Err(SbiError::Config(
                        "ratio-based discrepancies need a reference g with a density".into(),
                    ))
                }
            }
        }
        self.ratio.validate()
    }
}

/// Per-stage quantities shared by every θ.
struct Stage<'a> {
    data: &'a Sample,
    family: &'a Family,
    cfg: &'a RelFitConfig,
    seed: u64,
    reference: Option<Sample>,
    r_hat: Option<RatioModel>,
    obs_vals: Option<(Vec<f64>, Vec<f64>)>,
    ref_vals: Option<(Vec<f64>, Vec<f64>)>,
    obs_blocks: Vec<Option<KernelBlock>>,
}

impl<'a> Stage<'a> {
    fn new(data: &'a Sample, family: &'a Family, cfg: &'a RelFitConfig, seed: u64) -> Result<Self> {
        let mut st = Stage {
            data,
            family,
            cfg,
            seed,
            reference: None,
            r_hat: None,
            obs_vals: None,
            ref_vals: None,
            obs_blocks: Vec::new(),
        };
        if let Some(g) = cfg
            .reference
            .as_ref()
            .filter(|_| cfg.kinds.iter().any(|k| k.needs_ratios()))
        {
            let reference = crate::model_zoo::simulate(g, cfg.k, tagged_seed(seed, "reference"))?;
            let r = fit_ulsif(
                data,
                &reference,
                &cfg.ratio.clone().with_seed(tagged_seed(seed, "r-hat")),
            )?;
            let gd = |y: &[f64]| density(g, y).unwrap_or(0.0);
            st.obs_vals = Some((r.ratio_all(data), data.rows().map(gd).collect()));
            st.ref_vals = Some((r.ratio_all(&reference), reference.rows().map(gd).collect()));
            st.reference = Some(reference);
            st.r_hat = Some(r);
        }
        st.obs_blocks = cfg
            .kinds
            .iter()
            .map(|k| match k {
                DiscrepancyKind::Mmd { kernel } => Some(KernelBlock::new(kernel, data)),
                _ => None,
            })
            .collect();
        Ok(st)
    }

    fn sim_seed(&self, index: u64) -> u64 {
        let base = tagged_seed(self.seed, "sims");
        if self.cfg.common_sims {
            base
        } else {
            child_seed(base, index)
        }
    }

    /// Terms for every configured kind at θ, with simulation stream `index`.
    fn terms_at(&self, theta: &[f64], index: u64) -> Result<Vec<UvwTerms>> {
        let sim = simulate_at(self.family, theta, self.cfg.m, self.sim_seed(index))?;
        let mut s_fit: Option<(RatioModel, RatioValues, RatioValues, RatioValues)> = None;
        if let (Some(r), Some(reference), Some(g)) =
            (&self.r_hat, &self.reference, &self.cfg.reference)
        {
            let scfg = match self.cfg.s_fit {
                SFitMode::ReuseRHat => RatioFitConfig {
                    n_centers: self.cfg.ratio.n_centers,
                    trim_bounds: self.cfg.ratio.trim_bounds,
                    ..RatioFitConfig::fixed(r.sigma, r.lambda)
                },
                SFitMode::CrossValidated => self.cfg.ratio.clone(),
            };
            let s = fit_ulsif(
                &sim,
                reference,
                &scfg.with_seed(child_seed(tagged_seed(self.seed, "s-hat"), index)),
            )?;
            let (ro, go) = self.obs_vals.as_ref().expect("set with r_hat");
            let (rr, gr) = self.ref_vals.as_ref().expect("set with r_hat");
            let obs = RatioValues {
                r: ro.clone(),
                s: s.ratio_all(self.data),
                g: go.clone(),
            };
            let refv = RatioValues {
                r: rr.clone(),
                s: s.ratio_all(reference),
                g: gr.clone(),
            };
            let simv = RatioValues {
                r: r.ratio_all(&sim),
                s: s.ratio_all(&sim),
                g: sim.rows().map(|y| density(g, y).unwrap_or(0.0)).collect(),
            };
            s_fit = Some((s, obs, simv, refv));
        }
        let split_seed = tagged_seed(self.seed, "mmd-split");
        self.cfg
            .kinds
            .iter()
            .zip(&self.obs_blocks)
            .map(|(kind, block)| match kind {
                DiscrepancyKind::Hellinger => {
                    let (_, o, s, _) = s_fit.as_ref().expect("ratio kinds fit ŝ");
                    hellinger_terms(&o.r, &o.s, &s.r, &s.s)
                }
                DiscrepancyKind::PowerDivergence { gamma } => {
                    let (_, o, s, r) = s_fit.as_ref().expect("ratio kinds fit ŝ");
                    power_terms(*gamma, o, s, r)
                }
                DiscrepancyKind::Mmd { kernel } => {
                    mmd_terms_cached(kernel, self.data, block.as_ref().expect("cached"), &sim)
                }
                DiscrepancyKind::MmdStudentized { kernel } => {
                    Ok(mmd_studentized(&sim, self.data, kernel, split_seed)?.terms)
                }
            })
            .collect()
    }

    /// Terms at every grid point, indexed [θ][kind].
    fn terms_on_grid(&self, grid: &Grid) -> Result<Vec<Vec<UvwTerms>>> {
        (0..grid.len())
            .into_par_iter()
            .map(|j| self.terms_at(grid.point(j), j as u64))
            .collect()
    }
}

/// Relative-fit output for one discrepancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindResult {
    pub kind: DiscrepancyKind,
    pub theta_hat: Vec<f64>,
    pub theta_hat_index: usize,
    /// Discrepancy estimates on D0 over the grid.
    pub d0_values: Vec<f64>,
    pub delta: Vec<f64>,
    pub se: Vec<f64>,
    pub surface: PValueSurface,
    pub set: ConfidenceSet,
}

/// Preliminary estimate on D0: grid argmin of the estimated discrepancy.
pub fn preliminary_estimate(
    d0: &Sample,
    family: &Family,
    grid: &Grid,
    kind: DiscrepancyKind,
    cfg: &RelFitConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let cfg = RelFitConfig {
        kinds: vec![kind],
        ..cfg.clone()
    };
    cfg.validate()?;
    let stage = Stage::new(d0, family, &cfg, seed)?;
    let values: Vec<f64> = stage
        .terms_on_grid(grid)?
        .iter()
        .map(|t| t[0].value())
        .collect();
    let j = argmin_index(&values)?;
    Ok((grid.point(j).to_vec(), values))
}

/// Full relative-fit procedure for every configured discrepancy, sharing
/// the data split, simulations and ratio fits across kinds.
pub fn relative_fit_cs(
    data: &Sample,
    family: &Family,
    grid: &Grid,
    cfg: &RelFitConfig,
    seed: u64,
) -> Result<Vec<KindResult>> {
    cfg.validate()?;
    if grid.dim != family.dim() {
        return Err(SbiError::Dimension {
            expected: family.dim(),
            got: grid.dim,
        });
    }
    let (d0, d1) = split(data, tagged_seed(seed, "split"))?;
    let stage0 = Stage::new(&d0, family, cfg, child_seed(tagged_seed(seed, "stage"), 0))?;
    let t0 = stage0.terms_on_grid(grid)?;
    let stage1 = Stage::new(&d1, family, cfg, child_seed(tagged_seed(seed, "stage"), 1))?;
    let t1 = stage1.terms_on_grid(grid)?;
    let n_grid = grid.len() as u64;

    let mut out = Vec::with_capacity(cfg.kinds.len());
    let mut hat_cache: Vec<(usize, Vec<UvwTerms>)> = Vec::new();
    for (ki, kind) in cfg.kinds.iter().enumerate() {
        let d0_values: Vec<f64> = t0.iter().map(|t| t[ki].value()).collect();
        let jh = argmin_index(&d0_values)?;
        let hat_terms = match hat_cache.iter().find(|(j, _)| *j == jh) {
            Some((_, t)) => t.clone(),
            None => {
                let t = stage1.terms_at(grid.point(jh), n_grid + jh as u64)?;
                hat_cache.push((jh, t.clone()));
                t
            }
        };
        let mut delta = Vec::with_capacity(grid.len());
        let mut se = Vec::with_capacity(grid.len());
        for t in &t1 {
            let (d, s) = delta_hat(
                &t[ki],
                &hat_terms[ki],
                cfg.variance_floor.amount(d1.len()),
                true,
            )?;
            delta.push(d);
            se.push(s);
        }
        let z: Vec<f64> = delta
            .iter()
            .zip(&se)
            .map(|(d, s)| z_value(*d, *s))
            .collect();
        let surface = PValueSurface::from_raw(grid, z, None, &cfg.bandwidth, cfg.alpha)?;
        let set = surface.confidence_set();
        out.push(KindResult {
            kind: *kind,
            theta_hat: grid.point(jh).to_vec(),
            theta_hat_index: jh,
            d0_values,
            delta,
            se,
            surface,
            set,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrepancy::KernelSpec;
    use crate::model_zoo::simulate;

    fn gauss_family() -> Family {
        Family::new(
            ModelSpec::GaussianLoc {
                theta: 0.0,
                sigma: 1.0,
            },
            vec!["theta".into()],
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = Sample::observed(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (a, b) = split(&d, 3).unwrap();
        assert_eq!((a.len(), b.len()), (2, 2));
        let mut all: Vec<f64> = a.as_flat().iter().chain(b.as_flat()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(split(&d, 3).unwrap(), (a, b));
        let odd = Sample::observed(vec![1.0, 2.0, 3.0]).unwrap();
        let (a, b) = split(&odd, 1).unwrap();
        assert_eq!((a.len(), b.len()), (1, 2));
    }

    #[test]
    fn split_membership_frequency_is_balanced() {
        let d = Sample::observed((0..20).map(f64::from).collect()).unwrap();
        let mut counts = [0usize; 20];
        for seed in 0..100 {
            let (a, _) = split(&d, seed).unwrap();
            for v in a.as_flat() {
                counts[*v as usize] += 1;
            }
        }
        assert!(counts.iter().all(|c| (35..=65).contains(c)), "{counts:?}");
    }

    #[test]
    fn argmin_ties_go_low() {
        assert_eq!(argmin_index(&[3.0, 1.0, 1.0]).unwrap(), 1);
        assert_eq!(argmin_index(&[f64::NAN, 2.0]).unwrap(), 1);
        assert!(argmin_index(&[f64::NAN]).is_err());
    }

    #[test]
    fn delta_identical_terms_is_zero() {
        let t = UvwTerms {
            u: vec![1.0, 2.0],
            v: vec![0.5, 0.1],
            w: None,
            influence_scale: 1.0,
            normalizer: 1.0,
            extra_variance: 0.0,
        };
        let (d, s) = delta_hat(&t, &t, 0.5, true).unwrap();
        assert_eq!(d, 0.0);
        assert!(s >= (0.5f64).sqrt());
    }

    #[test]
    fn all_ones_z_gives_full_set_and_merge_rules() {
        let g = Grid::linspace(0.0, 1.0, 11).unwrap();
        let s = PValueSurface::from_raw(&g, vec![1.0; 11], None, &BandwidthRule::default(), 0.05)
            .unwrap();
        let cs = s.confidence_set();
        assert_eq!(cs.size(), 11);
        assert!(cs.contains(&[0.5]).unwrap());
        let mk = |m: Vec<bool>| {
            let pv = m.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
            ConfidenceSet::from_pv(1, vec![0.0, 1.0, 2.0], pv, 0.05, None)
        };
        let a = mk(vec![true, true, false]);
        assert_eq!(
            merge_sets(std::slice::from_ref(&a)).unwrap().membership,
            a.membership
        );
        let merged = merge_sets(&[
            a.clone(),
            mk(vec![true, false, false]),
            mk(vec![false, true, true]),
        ])
        .unwrap();
        assert_eq!(merged.membership, vec![true, true, false]);
        let other = ConfidenceSet::from_pv(1, vec![0.0, 1.0], vec![1.0, 1.0], 0.05, None);
        assert!(merge_sets(&[a, other]).is_err());
    }

    #[test]
    fn tiny_bandwidth_errors() {
        let g = Grid::linspace(0.0, 1.0, 3).unwrap();
        let eval = Grid::linspace(0.0, 1.0, 7).unwrap();
        let r = PValueSurface::from_raw(
            &g,
            vec![0.5; 3],
            Some(&eval),
            &BandwidthRule::Fixed { h: vec![1e-4] },
            0.05,
        );
        assert!(matches!(r, Err(SbiError::Bandwidth { .. })));
    }

    #[test]
    fn correct_model_set_covers_truth_and_excludes_far_values() {
        let data = simulate(
            &ModelSpec::GaussianLoc {
                theta: 0.0,
                sigma: 1.0,
            },
            1000,
            5,
        )
        .unwrap();
        let grid = Grid::linspace(-2.0, 2.0, 41).unwrap();
        let cfg = RelFitConfig::new(
            vec![
                DiscrepancyKind::Hellinger,
                DiscrepancyKind::l2(),
                DiscrepancyKind::Mmd {
                    kernel: KernelSpec::gaussian(1.0),
                },
            ],
            500,
            Some(ModelSpec::GaussianLoc {
                theta: 0.0,
                sigma: 2.0,
            }),
        );
        let res = relative_fit_cs(&data, &gauss_family(), &grid, &cfg, 9).unwrap();
        for r in &res {
            assert!(
                r.theta_hat[0].abs() <= 0.3,
                "{:?} {:?}",
                r.kind,
                r.theta_hat
            );
            assert!(r.set.contains(&[0.0]).unwrap(), "{:?}", r.kind);
            assert!(!r.set.contains(&[2.0]).unwrap(), "{:?}", r.kind);
            assert!(r.surface.smoothed.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        // deterministic
        assert_eq!(
            res,
            relative_fit_cs(&data, &gauss_family(), &grid, &cfg, 9).unwrap()
        );
    }

    #[test]
    fn common_sims_make_delta_zero_at_theta_hat() {
        let data = simulate(
            &ModelSpec::GaussianLoc {
                theta: 0.3,
                sigma: 1.0,
            },
            200,
            5,
        )
        .unwrap();
        let grid = Grid::linspace(-1.0, 1.0, 9).unwrap();
        let mut cfg = RelFitConfig::new(
            vec![DiscrepancyKind::Mmd {
                kernel: KernelSpec::gaussian(1.0),
            }],
            100,
            None,
        );
        cfg.common_sims = true;
        let r = &relative_fit_cs(&data, &gauss_family(), &grid, &cfg, 1).unwrap()[0];
        assert_eq!(r.delta[r.theta_hat_index], 0.0);
    }

    #[test]
    fn far_theta_rejects_reliably() {
        let mut hits = 0;
        for seed in 0..20 {
            let obs = simulate(
                &ModelSpec::GaussianLoc {
                    theta: 0.0,
                    sigma: 1.0,
                },
                2000,
                seed,
            )
            .unwrap();
            let (_, d1) = split(&obs, seed).unwrap();
            let g = ModelSpec::GaussianLoc {
                theta: 1.0,
                sigma: 2.0,
            };
            let reference = simulate(&g, 2000, 100 + seed).unwrap();
            let cfg = RatioFitConfig::default().with_seed(seed);
            let r = fit_ulsif(&d1, &reference, &cfg).unwrap();
            let terms = |mu: f64, s: u64| {
                let sim = simulate(
                    &ModelSpec::GaussianLoc {
                        theta: mu,
                        sigma: 1.0,
                    },
                    2000,
                    s,
                )
                .unwrap();
                let sh = fit_ulsif(
                    &sim,
                    &reference,
                    &RatioFitConfig::fixed(r.sigma, r.lambda).with_seed(s),
                )
                .unwrap();
                hellinger_terms(
                    &r.ratio_all(&d1),
                    &sh.ratio_all(&d1),
                    &r.ratio_all(&sim),
                    &sh.ratio_all(&sim),
                )
                .unwrap()
            };
            let (d, s) = delta_hat(
                &terms(2.0, 200 + seed),
                &terms(0.0, 300 + seed),
                VarianceFloor::Estimator.amount(d1.len()),
                true,
            )
            .unwrap();
            if d / s > 3.0 {
                hits += 1;
            }
        }
        assert!(hits >= 19, "{hits}");
    }
}
