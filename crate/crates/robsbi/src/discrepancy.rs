//! Discrepancy estimators between the data distribution `p` and a model
//! member `p_θ`.
//!
//! Every estimator is written as a sum of three sample averages,
//! `d̂ = mean U(Y_i) + mean V(Y_i(θ)) + mean W(Y*_i)`, over observed,
//! simulated and reference points. The per-point terms are kept so the
//! relative-fit test can pair them across θ values.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::density_ratio::RatioModel;
use crate::error::{Result, SbiError};
use crate::model_zoo::{density, ModelSpec};
use crate::rng::rng_from_seed;
use crate::sample::Sample;
use crate::stats::{mean, variance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian,
    Polynomial { degree: u32, offset: f64 },
}

/// Gaussian: exp(−‖a−b‖²/(2·scale²)). Polynomial: (⟨a,b⟩/scale + offset)^degree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub scale: f64,
}

impl KernelSpec {
    pub fn gaussian(scale: f64) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            scale,
        }
    }

    pub fn polynomial(degree: u32, offset: f64, scale: f64) -> Self {
        Self {
            family: KernelFamily::Polynomial { degree, offset },
            scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(SbiError::Domain("kernel scale must be positive".into()));
        }
        if let KernelFamily::Polynomial { degree, offset } = self.family {
            if degree == 0 || !(offset >= 0.0) {
                return Err(SbiError::Domain(
                    "polynomial kernel needs degree ≥ 1 and offset ≥ 0".into(),
                ));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * self.scale * self.scale)).exp()
            }
            KernelFamily::Polynomial { degree, offset } => {
                let ip: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (ip / self.scale + offset).powi(degree as i32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscrepancyKind {
    Hellinger,
    PowerDivergence { gamma: f64 },
    Mmd { kernel: KernelSpec },
    MmdStudentized { kernel: KernelSpec },
}

impl DiscrepancyKind {
    pub fn l2() -> Self {
        Self::PowerDivergence { gamma: 1.0 }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Hellinger => "hellinger".into(),
            Self::PowerDivergence { gamma } if *gamma == 1.0 => "l2".into(),
            Self::PowerDivergence { gamma } => format!("power_{gamma}"),
            Self::Mmd { .. } => "mmd".into(),
            Self::MmdStudentized { .. } => "mmd_studentized".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Hellinger => Ok(()),
            Self::PowerDivergence { gamma } => check_gamma(*gamma),
            Self::Mmd { kernel } | Self::MmdStudentized { kernel } => kernel.validate(),
        }
    }

    pub fn needs_ratios(&self) -> bool {
        matches!(self, Self::Hellinger | Self::PowerDivergence { .. })
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(SbiError::Domain(format!(
            "power-divergence γ must lie in (0, 1], got {gamma}"
        )))
    }
}

/// Per-point terms of the three-average decomposition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UvwTerms {
    /// One entry per observed point.
    pub u: Vec<f64>,
    /// One entry per simulated point.
    pub v: Vec<f64>,
    /// One entry per reference point (power divergence only).
    pub w: Option<Vec<f64>>,
    /// Multiplier turning the per-point term variances into the influence
    /// variance (2 for the MMD U-statistic, 1 otherwise).
    pub influence_scale: f64,
    /// Divisor applied to the sum of averages (σ̂ for the studentized MMD).
    pub normalizer: f64,
    /// Variance not captured by the per-point terms (second-order U-statistic
    /// component), already on the value scale.
    pub extra_variance: f64,
}

impl UvwTerms {
    pub fn averages(&self) -> [f64; 3] {
        [
            mean(&self.u),
            mean(&self.v),
            self.w.as_deref().map_or(0.0, mean),
        ]
    }

    pub fn value(&self) -> f64 {
        let [a, b, c] = self.averages();
        (a + b + c) / self.normalizer
    }

    /// Variance of the value from independent per-sample term variances.
    pub fn term_variance(&self) -> f64 {
        let mut v =
            variance(&self.u) / self.u.len() as f64 + variance(&self.v) / self.v.len() as f64;
        if let Some(w) = &self.w {
            v += variance(w) / w.len() as f64;
        }
        v * self.influence_scale * self.influence_scale / (self.normalizer * self.normalizer)
            + self.extra_variance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyEstimate {
    pub value: f64,
    pub stderr: f64,
    pub kind: DiscrepancyKind,
    /// Averages of the U, V and W terms (W is 0 when absent).
    pub uvw: [f64; 3],
    #[serde(skip)]
    pub terms: UvwTerms,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// A density ratio that can be evaluated pointwise.
pub trait RatioFn: Sync {
    fn ratio(&self, y: &[f64]) -> f64;

    fn ratio_all(&self, s: &Sample) -> Vec<f64> {
        s.rows().map(|y| self.ratio(y)).collect()
    }

    /// Trim bounds, if any, used for the saturation warning.
    fn bounds(&self) -> Option<(f64, f64)> {
        None
    }
}

impl RatioFn for RatioModel {
    fn ratio(&self, y: &[f64]) -> f64 {
        self.eval_point(y)
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        Some(self.trim_bounds)
    }
}

/// Exact ratio num/den of two closed-form densities, clamped to `trim`.
#[derive(Debug, Clone)]
pub struct OracleRatio {
    pub num: ModelSpec,
    pub den: ModelSpec,
    pub trim: (f64, f64),
}

impl OracleRatio {
    pub fn new(num: ModelSpec, den: ModelSpec) -> Result<Self> {
        if !num.has_density() || !den.has_density() {
            return Err(SbiError::UnsupportedDensity(
                "oracle ratio needs closed-form densities",
            ));
        }
        Ok(Self {
            num,
            den,
            trim: (1e-12, 1e12),
        })
    }
}

impl RatioFn for OracleRatio {
    fn ratio(&self, y: &[f64]) -> f64 {
        if self.num == self.den {
            return 1.0;
        }
        let a = density(&self.num, y).unwrap_or(0.0);
        let b = density(&self.den, y).unwrap_or(0.0);
        if b > 0.0 {
            (a / b).clamp(self.trim.0, self.trim.1)
        } else {
            self.trim.1
        }
    }
}

fn saturation_warning(name: &str, vals: &[f64], bounds: Option<(f64, f64)>) -> Option<String> {
    let (lo, hi) = bounds?;
    if !vals.is_empty() && vals.iter().all(|v| *v <= lo || *v >= hi) {
        Some(format!("all {name} evaluations sit at the trim bounds"))
    } else {
        None
    }
}

/// Hellinger terms from ratio values: r̂, ŝ at the observed points and at the
/// simulated points.
pub fn hellinger_terms(
    r_obs: &[f64],
    s_obs: &[f64],
    r_sim: &[f64],
    s_sim: &[f64],
) -> Result<UvwTerms> {
    if r_obs.is_empty()
        || r_sim.is_empty()
        || r_obs.len() != s_obs.len()
        || r_sim.len() != s_sim.len()
    {
        return Err(SbiError::Degenerate(
            "Hellinger terms need matching nonempty inputs".into(),
        ));
    }
    let u = r_obs
        .iter()
        .zip(s_obs)
        .map(|(r, s)| 1.0 - (s / r).sqrt())
        .collect();
    let v = r_sim
        .iter()
        .zip(s_sim)
        .map(|(r, s)| 1.0 - (r / s).sqrt())
        .collect();
    Ok(UvwTerms {
        u,
        v,
        w: None,
        influence_scale: 1.0,
        normalizer: 1.0,
        extra_variance: 0.0,
    })
}

/// Wraps Hellinger terms: value = 2 − 2ψ̂, stderr from the asymptotic
/// variance of ψ̂ plus the 1/n floor, mapped to the value scale.
pub fn hellinger_estimate(terms: UvwTerms, warnings: Vec<String>) -> DiscrepancyEstimate {
    let n = terms.u.len() as f64;
    let value = terms.value();
    let psi = 1.0 - value / 2.0;
    let var_psi = ((1.0 - psi * psi) / 2.0).max(0.0) / n + 1.0 / n;
    DiscrepancyEstimate {
        value,
        stderr: 2.0 * var_psi.sqrt(),
        kind: DiscrepancyKind::Hellinger,
        uvw: terms.averages(),
        terms,
        warnings,
    }
}

/// One-step Hellinger estimator; `r_hat` estimates p/g and `s_hat` p_θ/g.
pub fn hellinger_onestep(
    r_hat: &dyn RatioFn,
    s_hat: &dyn RatioFn,
    obs: &Sample,
    sim: &Sample,
) -> Result<DiscrepancyEstimate> {
    obs.check_same_dim(sim)?;
    let (r_obs, s_obs) = (r_hat.ratio_all(obs), s_hat.ratio_all(obs));
    let (r_sim, s_sim) = (r_hat.ratio_all(sim), s_hat.ratio_all(sim));
    let mut warnings = Vec::new();
    warnings.extend(saturation_warning(
        "r̂",
        &[r_obs.as_slice(), &r_sim].concat(),
        r_hat.bounds(),
    ));
    warnings.extend(saturation_warning(
        "ŝ",
        &[s_obs.as_slice(), &s_sim].concat(),
        s_hat.bounds(),
    ));
    Ok(hellinger_estimate(
        hellinger_terms(&r_obs, &s_obs, &r_sim, &s_sim)?,
        warnings,
    ))
}

/// Ratio values (r̂, ŝ_θ) and reference density g at a set of points.
#[derive(Debug, Clone, Default)]
pub struct RatioValues {
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub g: Vec<f64>,
}

impl RatioValues {
    pub fn collect(
        r_hat: &dyn RatioFn,
        s_hat: &dyn RatioFn,
        g: &dyn Fn(&[f64]) -> f64,
        pts: &Sample,
    ) -> Self {
        Self {
            r: r_hat.ratio_all(pts),
            s: s_hat.ratio_all(pts),
            g: pts.rows().map(g).collect(),
        }
    }
}

/// Power-divergence terms (the expanded five-sum form):
/// U = −(1+1/γ)ŝ^γg^γ on observations, V = (1+γ)(ŝ^γ − ŝ^{γ−1}r̂)g^γ on
/// simulations, W = (−γŝ^{1+γ} + (1+γ)r̂ŝ^γ)g^γ on the reference sample.
pub fn power_terms(
    gamma: f64,
    obs: &RatioValues,
    sim: &RatioValues,
    reference: &RatioValues,
) -> Result<UvwTerms> {
    check_gamma(gamma)?;
    if obs.s.is_empty() || sim.s.is_empty() || reference.s.is_empty() {
        return Err(SbiError::Degenerate(
            "power-divergence terms need nonempty samples".into(),
        ));
    }
    let u = obs
        .s
        .iter()
        .zip(&obs.g)
        .map(|(s, g)| -(1.0 + 1.0 / gamma) * (s * g).powf(gamma))
        .collect();
    let v = sim
        .s
        .iter()
        .zip(&sim.r)
        .zip(&sim.g)
        .map(|((s, r), g)| (1.0 + gamma) * (s * g).powf(gamma) * (1.0 - r / s))
        .collect();
    let w = reference
        .s
        .iter()
        .zip(&reference.r)
        .zip(&reference.g)
        .map(|((s, r), g)| (s * g).powf(gamma) * (-gamma * s + (1.0 + gamma) * r))
        .collect();
    Ok(UvwTerms {
        u,
        v,
        w: Some(w),
        influence_scale: 1.0,
        normalizer: 1.0,
        extra_variance: 0.0,
    })
}

/// Plug-in version of the asymptotic variance stated for the power
/// divergence, each moment averaged over the sample of its own measure.
pub fn power_asymptotic_variance(
    gamma: f64,
    obs: &RatioValues,
    sim: &RatioValues,
    reference: &RatioValues,
    psi: f64,
) -> f64 {
    let a = 1.0 + 1.0 / gamma;
    let b = (1.0 + gamma).powi(2);
    let x: Vec<f64> = obs
        .s
        .iter()
        .zip(&obs.g)
        .map(|(s, g)| (s * g).powf(gamma))
        .collect();
    let z: Vec<f64> = sim
        .s
        .iter()
        .zip(&sim.g)
        .map(|(s, g)| (s * g).powf(gamma))
        .collect();
    let ex2 = mean(&x.iter().map(|v| v * v).collect::<Vec<_>>());
    let ez2 = mean(&z.iter().map(|v| v * v).collect::<Vec<_>>());
    let cross = a * a * ex2 - 2.0 * a * b * mean(&x) * mean(&z) + b * b * ez2;
    let mut e1 = 0.0;
    let mut e2 = 0.0;
    let mut e3 = 0.0;
    for ((s, r), g) in reference.s.iter().zip(&reference.r).zip(&reference.g) {
        let g2 = g.powf(2.0 * gamma);
        e1 += r * r * s.powf(2.0 * gamma - 1.0) * g2;
        e2 += r * s.powf(2.0 * gamma) * g2;
        e3 += r * (s * g).powf(gamma);
    }
    let k = reference.s.len() as f64;
    let (e1, e2, e3) = (e1 / k, e2 / k, e3 / k);
    cross + b * e1 - 2.0 * b * e2 + 2.0 * b / gamma * e3 * e3 - b * psi * psi
}

pub fn power_estimate(
    gamma: f64,
    obs: &RatioValues,
    sim: &RatioValues,
    reference: &RatioValues,
    warnings: Vec<String>,
) -> Result<DiscrepancyEstimate> {
    let terms = power_terms(gamma, obs, sim, reference)?;
    let value = terms.value();
    let n = terms.u.len() as f64;
    let sigma2 = power_asymptotic_variance(gamma, obs, sim, reference, value).max(0.0);
    Ok(DiscrepancyEstimate {
        value,
        stderr: (sigma2 / n + 1.0 / n).sqrt(),
        kind: DiscrepancyKind::PowerDivergence { gamma },
        uvw: terms.averages(),
        terms,
        warnings,
    })
}

/// One-step minimum-density-power-divergence estimator (L2 at γ = 1).
pub fn mdpd_onestep(
    gamma: f64,
    r_hat: &dyn RatioFn,
    s_hat: &dyn RatioFn,
    obs: &Sample,
    sim: &Sample,
    reference: &Sample,
    g_density: &dyn Fn(&[f64]) -> f64,
) -> Result<DiscrepancyEstimate> {
    check_gamma(gamma)?;
    obs.check_same_dim(sim)?;
    obs.check_same_dim(reference)?;
    let o = RatioValues::collect(r_hat, s_hat, g_density, obs);
    let s = RatioValues::collect(r_hat, s_hat, g_density, sim);
    let r = RatioValues::collect(r_hat, s_hat, g_density, reference);
    let mut warnings = Vec::new();
    warnings.extend(saturation_warning(
        "r̂",
        &[o.r.as_slice(), &s.r, &r.r].concat(),
        r_hat.bounds(),
    ));
    warnings.extend(saturation_warning(
        "ŝ",
        &[o.s.as_slice(), &s.s, &r.s].concat(),
        s_hat.bounds(),
    ));
    power_estimate(gamma, &o, &s, &r, warnings)
}

/// Within-sample kernel summary: leave-one-out row means plus the moments
/// needed for the second-order variance term.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBlock {
    pub loo_means: Vec<f64>,
    /// Mean of K over distinct pairs.
    pub mean: f64,
    /// Mean of K² over distinct pairs.
    pub mean_sq: f64,
}

impl KernelBlock {
    pub fn new(k: &KernelSpec, s: &Sample) -> Self {
        let n = s.len();
        let mut sums = vec![0.0; n];
        let mut sq = 0.0;
        for i in 0..n {
            let a = s.point(i);
            for j in (i + 1)..n {
                let v = k.eval(a, s.point(j));
                sums[i] += v;
                sums[j] += v;
                sq += 2.0 * v * v;
            }
        }
        let d = (n.max(2) - 1) as f64;
        let loo_means: Vec<f64> = sums.iter().map(|v| v / d).collect();
        let pairs = (n * (n.max(2) - 1)) as f64;
        Self {
            mean: mean(&loo_means),
            mean_sq: sq / pairs,
            loo_means,
        }
    }

    /// Second moment of the doubly centered kernel.
    fn centered_second_moment(&self) -> f64 {
        let rm2 = mean(&self.loo_means.iter().map(|v| v * v).collect::<Vec<_>>());
        (self.mean_sq - 2.0 * rm2 + self.mean * self.mean).max(0.0)
    }
}

/// Cross-kernel summary between samples a and b.
struct CrossBlock {
    rows: Vec<f64>,
    cols: Vec<f64>,
    mean: f64,
    mean_sq: f64,
}

fn cross_block(k: &KernelSpec, a: &Sample, b: &Sample) -> CrossBlock {
    let mut rows = vec![0.0; a.len()];
    let mut cols = vec![0.0; b.len()];
    let mut sq = 0.0;
    for (i, x) in a.rows().enumerate() {
        for (j, y) in b.rows().enumerate() {
            let v = k.eval(x, y);
            rows[i] += v;
            cols[j] += v;
            sq += v * v;
        }
    }
    rows.iter_mut().for_each(|v| *v /= b.len() as f64);
    cols.iter_mut().for_each(|v| *v /= a.len() as f64);
    let total = (a.len() * b.len()) as f64;
    CrossBlock {
        mean: mean(&rows),
        mean_sq: sq / total,
        rows,
        cols,
    }
}

/// Row and column means of the cross kernel matrix K(a_i, b_j).
pub fn kernel_cross_means(k: &KernelSpec, a: &Sample, b: &Sample) -> (Vec<f64>, Vec<f64>) {
    let c = cross_block(k, a, b);
    (c.rows, c.cols)
}

/// MMD U-statistic terms given the observed-sample kernel block (which does
/// not depend on θ and can be cached across a grid).
///
/// The first-order (projection) variance vanishes when p_θ = p, so the
/// second-order Hoeffding term is carried in `extra_variance`.
pub fn mmd_terms_cached(
    k: &KernelSpec,
    obs: &Sample,
    obs_block: &KernelBlock,
    sim: &Sample,
) -> Result<UvwTerms> {
    if obs.len() < 2 || sim.len() < 2 {
        return Err(SbiError::Degenerate(
            "MMD U-statistic needs n, m ≥ 2".into(),
        ));
    }
    obs.check_same_dim(sim)?;
    if obs_block.loo_means.len() != obs.len() {
        return Err(SbiError::Dimension {
            expected: obs.len(),
            got: obs_block.loo_means.len(),
        });
    }
    let sim_block = KernelBlock::new(k, sim);
    let cross = cross_block(k, obs, sim);
    let (n, m) = (obs.len() as f64, sim.len() as f64);
    let zeta_xy = (cross.mean_sq
        - mean(&cross.rows.iter().map(|v| v * v).collect::<Vec<_>>())
        - mean(&cross.cols.iter().map(|v| v * v).collect::<Vec<_>>())
        + cross.mean * cross.mean)
        .max(0.0);
    let second = 2.0 * obs_block.centered_second_moment() / (n * (n - 1.0))
        + 2.0 * sim_block.centered_second_moment() / (m * (m - 1.0))
        + 4.0 * zeta_xy / (n * m);
    let u = obs_block
        .loo_means
        .iter()
        .zip(&cross.rows)
        .map(|(a, b)| a - b)
        .collect();
    let v = sim_block
        .loo_means
        .iter()
        .zip(&cross.cols)
        .map(|(a, b)| a - b)
        .collect();
    Ok(UvwTerms {
        u,
        v,
        w: None,
        influence_scale: 2.0,
        normalizer: 1.0,
        extra_variance: second,
    })
}

pub fn mmd_estimate(kernel: KernelSpec, terms: UvwTerms) -> DiscrepancyEstimate {
    DiscrepancyEstimate {
        value: terms.value(),
        stderr: terms.term_variance().sqrt(),
        kind: DiscrepancyKind::Mmd { kernel },
        uvw: terms.averages(),
        terms,
        warnings: Vec::new(),
    }
}

/// Unbiased squared MMD with a plug-in standard error from the Hoeffding
/// projections of both samples.
pub fn mmd_ustat(sim: &Sample, obs: &Sample, k: &KernelSpec) -> Result<DiscrepancyEstimate> {
    k.validate()?;
    if obs.len() < 2 || sim.len() < 2 {
        return Err(SbiError::Degenerate(
            "MMD U-statistic needs n, m ≥ 2".into(),
        ));
    }
    let block = KernelBlock::new(k, obs);
    Ok(mmd_estimate(*k, mmd_terms_cached(k, obs, &block, sim)?))
}

/// Seeded split into a first part of size ⌊n/2⌋ and the remainder.
pub fn halves(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let second = idx.split_off(n / 2);
    (idx, second)
}

/// Studentized cross MMD: witness μ̂₂^θ − μ̂₂ built on the second halves,
/// evaluated on the first halves, divided by its estimated standard error.
pub fn mmd_studentized(
    sim: &Sample,
    obs: &Sample,
    k: &KernelSpec,
    split_seed: u64,
) -> Result<DiscrepancyEstimate> {
    k.validate()?;
    obs.check_same_dim(sim)?;
    if obs.len() < 4 || sim.len() < 4 {
        return Err(SbiError::Degenerate(
            "studentized MMD needs n, m ≥ 4".into(),
        ));
    }
    let (o1, o2) = halves(obs.len(), crate::rng::child_seed(split_seed, 0));
    let (s1, s2) = halves(sim.len(), crate::rng::child_seed(split_seed, 1));
    let (obs1, obs2) = (obs.select(&o1), obs.select(&o2));
    let (sim1, sim2) = (sim.select(&s1), sim.select(&s2));
    let witness = |a: &Sample| -> Vec<f64> {
        let (to_sim, _) = kernel_cross_means(k, a, &sim2);
        let (to_obs, _) = kernel_cross_means(k, a, &obs2);
        to_sim.iter().zip(&to_obs).map(|(x, y)| x - y).collect()
    };
    let h_sim = witness(&sim1);
    let h_obs = witness(&obs1);
    let pop_var = |h: &[f64]| {
        let m = mean(h);
        h.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / h.len() as f64
    };
    let sigma2 = pop_var(&h_sim) / h_sim.len() as f64 + pop_var(&h_obs) / h_obs.len() as f64;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(SbiError::Degenerate(
            "studentized MMD has zero estimated variance".into(),
        ));
    }
    let terms = UvwTerms {
        u: h_obs.iter().map(|v| -v).collect(),
        v: h_sim,
        w: None,
        influence_scale: 1.0,
        normalizer: sigma2.sqrt(),
        extra_variance: 0.0,
    };
    Ok(DiscrepancyEstimate {
        value: terms.value(),
        stderr: 1.0,
        kind: DiscrepancyKind::MmdStudentized { kernel: *k },
        uvw: terms.averages(),
        terms,
        warnings: Vec::new(),
    })
}

/// Everything a single discrepancy evaluation may need.
pub struct EstimateInputs<'a> {
    pub obs: &'a Sample,
    pub sim: &'a Sample,
    pub reference: Option<&'a Sample>,
    pub r_hat: Option<&'a dyn RatioFn>,
    pub s_hat: Option<&'a dyn RatioFn>,
    pub g_density: Option<&'a dyn Fn(&[f64]) -> f64>,
    pub split_seed: u64,
}

impl<'a> EstimateInputs<'a> {
    pub fn samples(obs: &'a Sample, sim: &'a Sample) -> Self {
        Self {
            obs,
            sim,
            reference: None,
            r_hat: None,
            s_hat: None,
            g_density: None,
            split_seed: 0,
        }
    }
}

/// Dispatches to the estimator matching `kind`.
pub fn estimate(kind: &DiscrepancyKind, inp: &EstimateInputs<'_>) -> Result<DiscrepancyEstimate> {
    kind.validate()?;
    let ratios = || -> Result<(&dyn RatioFn, &dyn RatioFn)> {
        match (inp.r_hat, inp.s_hat) {
            (Some(r), Some(s)) => Ok((r, s)),
            _ => Err(SbiError::Config(format!(
                "{} needs fitted ratios r̂ and ŝ_θ",
                kind.label()
            ))),
        }
    };
    match kind {
        DiscrepancyKind::Hellinger => {
            let (r, s) = ratios()?;
            hellinger_onestep(r, s, inp.obs, inp.sim)
        }
        DiscrepancyKind::PowerDivergence { gamma } => {
            let (r, s) = ratios()?;
            let reference = inp.reference.ok_or_else(|| {
                SbiError::Config("power divergence needs a reference sample".into())
            })?;
            let g = inp.g_density.ok_or_else(|| {
                SbiError::Config("power divergence needs the reference density".into())
            })?;
            mdpd_onestep(*gamma, r, s, inp.obs, inp.sim, reference, g)
        }
        DiscrepancyKind::Mmd { kernel } => mmd_ustat(inp.sim, inp.obs, kernel),
        DiscrepancyKind::MmdStudentized { kernel } => {
            mmd_studentized(inp.sim, inp.obs, kernel, inp.split_seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density_ratio::{fit_ulsif, RatioFitConfig};
    use crate::model_zoo::simulate;

    fn normal(mu: f64) -> ModelSpec {
        ModelSpec::GaussianLoc {
            theta: mu,
            sigma: 1.0,
        }
    }

    fn draw(mu: f64, n: usize, seed: u64) -> Sample {
        simulate(&normal(mu), n, seed).unwrap()
    }

    const BHATT_01: f64 = 0.882_496_902_584_595_4; // e^{-1/8}

    #[test]
    fn hellinger_identical_oracle_is_exactly_zero() {
        let obs = draw(0.0, 5000, 1);
        let sim = draw(0.0, 5000, 2);
        let one = OracleRatio::new(normal(0.0), normal(0.0)).unwrap();
        let est = hellinger_onestep(&one, &one, &obs, &sim).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.value + 2.0 * (1.0 - est.value / 2.0), 2.0);
    }

    #[test]
    fn hellinger_oracle_recovers_bhattacharyya() {
        let g = ModelSpec::GaussianLoc {
            theta: 0.5,
            sigma: 2.0,
        };
        let r = OracleRatio::new(normal(0.0), g.clone()).unwrap();
        let s = OracleRatio::new(normal(1.0), g).unwrap();
        let est = hellinger_onestep(&r, &s, &draw(0.0, 5000, 3), &draw(1.0, 5000, 4)).unwrap();
        let target = 2.0 - 2.0 * BHATT_01;
        assert!(
            (est.value - target).abs() <= 3.0 * est.stderr,
            "{} vs {target}",
            est.value
        );
    }

    #[test]
    fn hellinger_fitted_ratios_close_to_truth() {
        let obs = draw(0.0, 5000, 5);
        let sim = draw(1.0, 5000, 6);
        let reference = simulate(
            &ModelSpec::GaussianLoc {
                theta: 0.5,
                sigma: 2.0,
            },
            5000,
            7,
        )
        .unwrap();
        let cfg = RatioFitConfig::default().with_seed(8);
        let r = fit_ulsif(&obs, &reference, &cfg).unwrap();
        let s = fit_ulsif(&sim, &reference, &cfg).unwrap();
        let est = hellinger_onestep(&r, &s, &obs, &sim).unwrap();
        assert!(
            (est.value - (2.0 - 2.0 * BHATT_01)).abs() <= 0.05,
            "{}",
            est.value
        );
    }

    fn l2_case(mu_theta: f64, seed: u64) -> DiscrepancyEstimate {
        let g = ModelSpec::GaussianLoc {
            theta: 0.5,
            sigma: 2.0,
        };
        let r = OracleRatio::new(normal(0.0), g.clone()).unwrap();
        let s = OracleRatio::new(normal(mu_theta), g.clone()).unwrap();
        let n = 20_000;
        let obs = draw(0.0, n, seed);
        let sim = draw(mu_theta, n, seed + 1);
        let reference = simulate(&g, n, seed + 2).unwrap();
        let gd = move |y: &[f64]| density(&g, y).unwrap();
        mdpd_onestep(1.0, &r, &s, &obs, &sim, &reference, &gd).unwrap()
    }

    #[test]
    fn l2_equal_gaussians() {
        let est = l2_case(0.0, 10);
        let target = -1.0 / (2.0 * std::f64::consts::PI.sqrt());
        assert!(
            (est.value - target).abs() <= 3.0 * est.stderr,
            "{} vs {target}",
            est.value
        );
    }

    #[test]
    fn l2_shifted_gaussians() {
        let est = l2_case(1.0, 20);
        let target = (1.0 - 2.0 * (-0.25f64).exp()) / (2.0 * std::f64::consts::PI.sqrt());
        assert!(
            (est.value - target).abs() <= 3.0 * est.stderr,
            "{} vs {target}",
            est.value
        );
    }

    #[test]
    fn l2_argmin_is_truth_under_correct_model() {
        let g = ModelSpec::GaussianLoc {
            theta: 0.0,
            sigma: 2.0,
        };
        let r = OracleRatio::new(normal(0.0), g.clone()).unwrap();
        let obs = draw(0.0, 4000, 30);
        let reference = simulate(&g, 4000, 31).unwrap();
        let gd = |y: &[f64]| density(&g, y).unwrap();
        let grid: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.1).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|t| {
                let s = OracleRatio::new(normal(*t), g.clone()).unwrap();
                mdpd_onestep(1.0, &r, &s, &obs, &draw(*t, 4000, 32), &reference, &gd)
                    .unwrap()
                    .value
            })
            .collect();
        let best = (0..grid.len())
            .min_by(|a, b| vals[*a].total_cmp(&vals[*b]))
            .unwrap();
        assert!(grid[best].abs() <= 0.1 + 1e-12, "{}", grid[best]);
    }

    #[test]
    fn gamma_out_of_range_is_domain_error() {
        let one = OracleRatio::new(normal(0.0), normal(0.0)).unwrap();
        let s = draw(0.0, 10, 1);
        let g = |_: &[f64]| 1.0;
        for gamma in [0.0, -0.5, 1.5] {
            assert!(matches!(
                mdpd_onestep(gamma, &one, &one, &s, &s, &s, &g),
                Err(SbiError::Domain(_))
            ));
        }
    }

    fn brute_mmd(k: &KernelSpec, x: &Sample, y: &Sample) -> f64 {
        let (m, n) = (x.len(), y.len());
        let mut a = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    a += k.eval(x.point(i), x.point(j));
                }
            }
        }
        let mut b = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    b += k.eval(y.point(i), y.point(j));
                }
            }
        }
        let mut c = 0.0;
        for i in 0..m {
            for j in 0..n {
                c += k.eval(x.point(i), y.point(j));
            }
        }
        a / (m * (m - 1)) as f64 + b / (n * (n - 1)) as f64 - 2.0 * c / (m * n) as f64
    }

    #[test]
    fn mmd_same_points_matches_double_loop() {
        let s = draw(0.0, 40, 3);
        let k = KernelSpec::gaussian(0.7);
        let est = mmd_ustat(&s, &s, &k).unwrap();
        assert!((est.value - brute_mmd(&k, &s, &s)).abs() < 1e-12);
    }

    #[test]
    fn mmd_null_within_four_se() {
        let est = mmd_ustat(
            &draw(0.0, 4000, 1),
            &draw(0.0, 4000, 2),
            &KernelSpec::gaussian(1.0),
        )
        .unwrap();
        assert!(
            est.value.abs() <= 4.0 * est.stderr,
            "{} {}",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn mmd_huge_scale_is_zero() {
        let est = mmd_ustat(
            &draw(0.0, 30, 1),
            &draw(3.0, 20, 2),
            &KernelSpec::gaussian(1e12),
        )
        .unwrap();
        assert!(est.value.abs() < 1e-12, "{}", est.value);
    }

    #[test]
    fn mmd_too_small_is_an_error() {
        let one = Sample::observed(vec![0.0]).unwrap();
        assert!(mmd_ustat(&one, &draw(0.0, 5, 1), &KernelSpec::gaussian(1.0)).is_err());
    }

    #[test]
    fn studentized_separates_shifted_samples() {
        let est = mmd_studentized(
            &draw(2.0, 1000, 1),
            &draw(0.0, 1000, 2),
            &KernelSpec::gaussian(1.0),
            3,
        )
        .unwrap();
        assert!(est.value > 10.0, "{}", est.value);
        assert_eq!(est.stderr, 1.0);
    }

    #[test]
    fn studentized_constant_input_is_degenerate() {
        let c = Sample::observed(vec![1.0; 10]).unwrap();
        assert!(matches!(
            mmd_studentized(&c, &c, &KernelSpec::gaussian(1.0), 0),
            Err(SbiError::Degenerate(_))
        ));
    }

    #[test]
    fn halves_sizes() {
        let (a, b) = halves(7, 1);
        assert_eq!((a.len(), b.len()), (3, 4));
    }

    #[test]
    fn uvw_reconstructs_value() {
        let est = l2_case(0.5, 40);
        let [a, b, c] = est.uvw;
        assert!((a + b + c - est.value).abs() < 1e-12);
    }

    #[test]
    fn dispatch_matches_direct_calls() {
        let obs = draw(0.0, 200, 1);
        let sim = draw(0.5, 200, 2);
        let g = ModelSpec::GaussianLoc {
            theta: 0.0,
            sigma: 2.0,
        };
        let reference = simulate(&g, 200, 3).unwrap();
        let r = OracleRatio::new(normal(0.0), g.clone()).unwrap();
        let s = OracleRatio::new(normal(0.5), g.clone()).unwrap();
        let gd = |y: &[f64]| density(&g, y).unwrap();
        let inp = EstimateInputs {
            obs: &obs,
            sim: &sim,
            reference: Some(&reference),
            r_hat: Some(&r),
            s_hat: Some(&s),
            g_density: Some(&gd),
            split_seed: 4,
        };
        assert_eq!(
            estimate(&DiscrepancyKind::Hellinger, &inp).unwrap(),
            hellinger_onestep(&r, &s, &obs, &sim).unwrap()
        );
        assert_eq!(
            estimate(&DiscrepancyKind::l2(), &inp).unwrap(),
            mdpd_onestep(1.0, &r, &s, &obs, &sim, &reference, &gd).unwrap()
        );
        let k = KernelSpec::gaussian(1.0);
        assert_eq!(
            estimate(&DiscrepancyKind::Mmd { kernel: k }, &inp).unwrap(),
            mmd_ustat(&sim, &obs, &k).unwrap()
        );
        let bare = EstimateInputs::samples(&obs, &sim);
        assert!(matches!(
            estimate(&DiscrepancyKind::l2(), &bare),
            Err(SbiError::Config(_))
        ));
    }

    #[test]
    fn polynomial_kernel_value() {
        let k = KernelSpec::polynomial(2, 1.0, 2.0);
        assert_eq!(
            k.eval(&[1.0, 2.0], &[3.0, 1.0]),
            (5.0f64 / 2.0 + 1.0).powi(2)
        );
        assert!(KernelSpec::polynomial(2, -1.0, 1.0).validate().is_err());
    }
}
