//! Seeded generative models with closed-form (or quadrature-normalized)
//! densities. They serve as simulators, data-generating truths and
//! reference densities `g`.
//!
//! Tilted kinds are normalized numerically: the unnormalized density is
//! tabulated on a uniform grid of `TABLE_NODES` points (mean ± 12 SD, or
//! `[0, 1]` for Beta), integrated by the trapezoid rule, and sampled by
//! inverse-CDF with linear interpolation. Tables are cached per parameter
//! set.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result, SbiError};
use crate::rng::rng_from_seed;
use crate::sample::{Provenance, Sample};
use crate::stats::normal_quantile;

pub const TABLE_NODES: usize = 200_000;

fn default_gk_c() -> f64 {
    0.8
}

fn default_tau() -> f64 {
    1e3
}

/// A parametric model. Parameter names (used by [`Family`]) are the field
/// names; `iso_gaussian` exposes `mean0`, `mean1`, ….
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// N(θ, σ²).
    GaussianLoc { theta: f64, sigma: f64 },
    /// N(μ, σ²) with both free.
    GaussianLocScale { mu: f64, sigma: f64 },
    /// ∝ N(θ, σ²)(x) · exp(α₁x³·1{|x³|<τ} + α₂x⁴).
    TiltedGaussian {
        theta: f64,
        sigma: f64,
        alpha1: f64,
        alpha2: f64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    /// Beta(θ, ratio·θ).
    Beta { theta: f64, ratio: f64 },
    /// ∝ Beta(θ, ratio·θ)(y) · exp(β₁y + β₂y²) on [0, 1].
    TiltedBeta {
        theta: f64,
        ratio: f64,
        beta1: f64,
        beta2: f64,
    },
    /// g-and-k quantile distribution.
    #[serde(rename = "gandk")]
    GandK {
        l: f64,
        s: f64,
        g: f64,
        k: f64,
        #[serde(default = "default_gk_c")]
        c: f64,
    },
    /// p·N(μ₁, σ²) + (1−p)·N(μ₂, σ²).
    Gmm {
        mu1: f64,
        mu2: f64,
        sigma: f64,
        p: f64,
    },
    /// shift + t_df.
    StudentTShift { df: f64, shift: f64 },
    /// N(mean, σ² I) in dimension mean.len().
    IsoGaussian { mean: Vec<f64>, sigma: f64 },
}

impl ModelSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::GaussianLoc { .. } => "gaussian_loc",
            Self::GaussianLocScale { .. } => "gaussian_loc_scale",
            Self::TiltedGaussian { .. } => "tilted_gaussian",
            Self::Beta { .. } => "beta",
            Self::TiltedBeta { .. } => "tilted_beta",
            Self::GandK { .. } => "gandk",
            Self::Gmm { .. } => "gmm",
            Self::StudentTShift { .. } => "student_t_shift",
            Self::IsoGaussian { .. } => "iso_gaussian",
        }
    }

    /// Dimension of an observation.
    pub fn data_dim(&self) -> usize {
        match self {
            Self::IsoGaussian { mean, .. } => mean.len(),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                domain(format!("{name} must be > 0, got {v}"))
            }
        };
        let fin = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                domain(format!("{name} must be finite, got {v}"))
            }
        };
        match self {
            Self::GaussianLoc { theta, sigma } => {
                fin("theta", *theta)?;
                pos("sigma", *sigma)
            }
            Self::GaussianLocScale { mu, sigma } => {
                fin("mu", *mu)?;
                pos("sigma", *sigma)
            }
            Self::TiltedGaussian {
                theta,
                sigma,
                alpha1,
                alpha2,
                tau,
            } => {
                fin("theta", *theta)?;
                pos("sigma", *sigma)?;
                fin("alpha1", *alpha1)?;
                fin("alpha2", *alpha2)?;
                pos("tau", *tau)
            }
            Self::Beta { theta, ratio } => {
                pos("theta", *theta)?;
                pos("ratio", *ratio)
            }
            Self::TiltedBeta {
                theta,
                ratio,
                beta1,
                beta2,
            } => {
                pos("theta", *theta)?;
                pos("ratio", *ratio)?;
                fin("beta1", *beta1)?;
                fin("beta2", *beta2)
            }
            Self::GandK { l, s, g, k, c } => {
                fin("l", *l)?;
                pos("s", *s)?;
                fin("g", *g)?;
                fin("c", *c)?;
                // k ≤ −0.5 still samples fine; the quantile map is then
                // non-monotone in the far tails.
                fin("k", *k)
            }
            Self::Gmm { mu1, mu2, sigma, p } => {
                fin("mu1", *mu1)?;
                fin("mu2", *mu2)?;
                pos("sigma", *sigma)?;
                if !(0.0..=1.0).contains(p) {
                    return domain(format!("p must lie in [0, 1], got {p}"));
                }
                Ok(())
            }
            Self::StudentTShift { df, shift } => {
                pos("df", *df)?;
                fin("shift", *shift)
            }
            Self::IsoGaussian { mean, sigma } => {
                if mean.is_empty() {
                    return domain("iso_gaussian needs a nonempty mean");
                }
                for (i, m) in mean.iter().enumerate() {
                    fin(&format!("mean{i}"), *m)?;
                }
                pos("sigma", *sigma)
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            Self::GaussianLoc { .. } => &["theta", "sigma"],
            Self::GaussianLocScale { .. } => &["mu", "sigma"],
            Self::TiltedGaussian { .. } => &["theta", "sigma", "alpha1", "alpha2", "tau"],
            Self::Beta { .. } => &["theta", "ratio"],
            Self::TiltedBeta { .. } => &["theta", "ratio", "beta1", "beta2"],
            Self::GandK { .. } => &["l", "s", "g", "k", "c"],
            Self::Gmm { .. } => &["mu1", "mu2", "sigma", "p"],
            Self::StudentTShift { .. } => &["df", "shift"],
            Self::IsoGaussian { mean, .. } => {
                let mut v: Vec<String> = (0..mean.len()).map(|i| format!("mean{i}")).collect();
                v.push("sigma".into());
                return v;
            }
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    fn param_mut(&mut self, name: &str) -> Option<&mut f64> {
        match self {
            Self::GaussianLoc { theta, sigma } => match name {
                "theta" => Some(theta),
                "sigma" => Some(sigma),
                _ => None,
            },
            Self::GaussianLocScale { mu, sigma } => match name {
                "mu" => Some(mu),
                "sigma" => Some(sigma),
                _ => None,
            },
            Self::TiltedGaussian {
                theta,
                sigma,
                alpha1,
                alpha2,
                tau,
            } => match name {
                "theta" => Some(theta),
                "sigma" => Some(sigma),
                "alpha1" => Some(alpha1),
                "alpha2" => Some(alpha2),
                "tau" => Some(tau),
                _ => None,
            },
            Self::Beta { theta, ratio } => match name {
                "theta" => Some(theta),
                "ratio" => Some(ratio),
                _ => None,
            },
            Self::TiltedBeta {
                theta,
                ratio,
                beta1,
                beta2,
            } => match name {
                "theta" => Some(theta),
                "ratio" => Some(ratio),
                "beta1" => Some(beta1),
                "beta2" => Some(beta2),
                _ => None,
            },
            Self::GandK { l, s, g, k, c } => match name {
                "l" => Some(l),
                "s" => Some(s),
                "g" => Some(g),
                "k" => Some(k),
                "c" => Some(c),
                _ => None,
            },
            Self::Gmm { mu1, mu2, sigma, p } => match name {
                "mu1" => Some(mu1),
                "mu2" => Some(mu2),
                "sigma" => Some(sigma),
                "p" => Some(p),
                _ => None,
            },
            Self::StudentTShift { df, shift } => match name {
                "df" => Some(df),
                "shift" => Some(shift),
                _ => None,
            },
            Self::IsoGaussian { mean, sigma } => {
                if name == "sigma" {
                    Some(sigma)
                } else {
                    let i: usize = name.strip_prefix("mean")?.parse().ok()?;
                    mean.get_mut(i)
                }
            }
        }
    }

    pub fn get_param(&self, name: &str) -> Result<f64> {
        let mut copy = self.clone();
        copy.param_mut(name).map(|v| *v).ok_or_else(|| {
            SbiError::Config(format!(
                "model `{}` has no parameter `{name}`",
                self.kind_name()
            ))
        })
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let kind = self.kind_name();
        let slot = self
            .param_mut(name)
            .ok_or_else(|| SbiError::Config(format!("model `{kind}` has no parameter `{name}`")))?;
        *slot = value;
        Ok(())
    }

    pub fn has_density(&self) -> bool {
        !matches!(self, Self::GandK { .. })
    }
}

/// A model family indexed by a subset of a base model's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub base: ModelSpec,
    pub free: Vec<String>,
}

impl Family {
    pub fn new(base: ModelSpec, free: Vec<String>) -> Result<Self> {
        for name in &free {
            base.get_param(name)?;
        }
        if free.is_empty() {
            return Err(SbiError::Config(
                "family needs at least one free parameter".into(),
            ));
        }
        Ok(Self { base, free })
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    pub fn at(&self, theta: &[f64]) -> Result<ModelSpec> {
        if theta.len() != self.free.len() {
            return Err(SbiError::Dimension {
                expected: self.free.len(),
                got: theta.len(),
            });
        }
        let mut m = self.base.clone();
        for (name, v) in self.free.iter().zip(theta) {
            m.set_param(name, *v)?;
        }
        m.validate()?;
        Ok(m)
    }
}

/// g-and-k quantile at probability `p`.
pub fn gk_quantile(p: f64, l: f64, s: f64, g: f64, k: f64, c: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("quantile level must lie in (0, 1), got {p}"));
    }
    Ok(gk_transform(normal_quantile(p), l, s, g, k, c))
}

#[inline]
fn gk_transform(z: f64, l: f64, s: f64, g: f64, k: f64, c: f64) -> f64 {
    l + s * (1.0 + c * (g * z / 2.0).tanh()) * z * (1.0 + z * z).powf(k)
}

#[inline]
fn gauss_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * sigma)
}

fn beta_ln_pdf(y: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&y) {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
}

fn t_pdf(x: f64, df: f64) -> f64 {
    let ln = ln_gamma((df + 1.0) / 2.0)
        - ln_gamma(df / 2.0)
        - 0.5 * (df * PI).ln()
        - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln();
    ln.exp()
}

/// Log of the unnormalized tilted-Gaussian density (normal part included).
fn tilted_gaussian_log_u(x: f64, theta: f64, sigma: f64, a1: f64, a2: f64, tau: f64) -> f64 {
    let cube = x * x * x;
    let c = if cube.abs() < tau { cube } else { 0.0 };
    let z = (x - theta) / sigma;
    -0.5 * z * z + a1 * c + a2 * x * x * x * x
}

fn tilted_beta_log_u(y: f64, theta: f64, ratio: f64, b1: f64, b2: f64) -> f64 {
    beta_ln_pdf(y, theta, ratio * theta) + b1 * y + b2 * y * y
}

/// Tabulated normalizer and CDF of a tilted density.
#[derive(Debug)]
pub struct TiltedTable {
    lo: f64,
    step: f64,
    log_shift: f64,
    log_norm: f64,
    cdf: Vec<f64>,
}

impl TiltedTable {
    fn build(lo: f64, hi: f64, log_u: impl Fn(f64) -> f64) -> Result<Self> {
        let n = TABLE_NODES;
        let step = (hi - lo) / (n - 1) as f64;
        let logs: Vec<f64> = (0..n).map(|i| log_u(lo + step * i as f64)).collect();
        let shift = logs
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(SbiError::Numerical(
                "tilted density vanishes on the whole table".into(),
            ));
        }
        let vals: Vec<f64> = logs
            .iter()
            .map(|&l| {
                if l.is_finite() {
                    (l - shift).exp()
                } else {
                    0.0
                }
            })
            .collect();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * step * (vals[i - 1] + vals[i]);
        }
        let total = cdf[n - 1];
        if !(total > 0.0) || !total.is_finite() {
            return Err(SbiError::Numerical(
                "tilted density has no finite mass".into(),
            ));
        }
        for v in &mut cdf {
            *v /= total;
        }
        Ok(Self {
            lo,
            step,
            log_shift: shift,
            log_norm: total.ln(),
            cdf,
        })
    }

    fn density(&self, log_u: f64) -> f64 {
        (log_u - self.log_shift - self.log_norm).exp()
    }

    /// Inverse CDF by bisection and linear interpolation.
    fn quantile(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u);
        if i == 0 {
            return self.lo;
        }
        let i = i.min(self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.lo + self.step * ((i - 1) as f64 + frac)
    }
}

type TableKey = (u8, [u64; 5]);

fn table_cache() -> &'static Mutex<HashMap<TableKey, Arc<TiltedTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<TableKey, Arc<TiltedTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

const CACHE_LIMIT: usize = 512;

/// The cached quadrature table for a tilted kind (None for other kinds).
pub fn tilted_table(model: &ModelSpec) -> Result<Option<Arc<TiltedTable>>> {
    let key: TableKey = match *model {
        ModelSpec::TiltedGaussian {
            theta,
            sigma,
            alpha1,
            alpha2,
            tau,
        } => (
            0,
            [
                theta.to_bits(),
                sigma.to_bits(),
                alpha1.to_bits(),
                alpha2.to_bits(),
                tau.to_bits(),
            ],
        ),
        ModelSpec::TiltedBeta {
            theta,
            ratio,
            beta1,
            beta2,
        } => (
            1,
            [
                theta.to_bits(),
                ratio.to_bits(),
                beta1.to_bits(),
                beta2.to_bits(),
                0,
            ],
        ),
        _ => return Ok(None),
    };
    if let Some(t) = table_cache().lock().expect("cache poisoned").get(&key) {
        return Ok(Some(t.clone()));
    }
    let table = match *model {
        ModelSpec::TiltedGaussian {
            theta,
            sigma,
            alpha1,
            alpha2,
            tau,
        } => TiltedTable::build(theta - 12.0 * sigma, theta + 12.0 * sigma, |x| {
            tilted_gaussian_log_u(x, theta, sigma, alpha1, alpha2, tau)
        })?,
        ModelSpec::TiltedBeta {
            theta,
            ratio,
            beta1,
            beta2,
        } => TiltedTable::build(0.0, 1.0, |y| {
            tilted_beta_log_u(y, theta, ratio, beta1, beta2)
        })?,
        _ => unreachable!(),
    };
    let table = Arc::new(table);
    let mut cache = table_cache().lock().expect("cache poisoned");
    if cache.len() >= CACHE_LIMIT {
        cache.clear();
    }
    cache.insert(key, table.clone());
    Ok(Some(table))
}

/// Draw `m` i.i.d. points; deterministic in (model, m, seed).
pub fn simulate(model: &ModelSpec, m: usize, seed: u64) -> Result<Sample> {
    if m == 0 {
        return Err(SbiError::Degenerate("simulation size must be >= 1".into()));
    }
    model.validate()?;
    let mut rng = rng_from_seed(seed);
    let dim = model.data_dim();
    let mut pts = Vec::with_capacity(m * dim);
    match model {
        ModelSpec::GaussianLoc { theta: mu, sigma } | ModelSpec::GaussianLocScale { mu, sigma } => {
            for _ in 0..m {
                let z: f64 = StandardNormal.sample(&mut rng);
                pts.push(mu + sigma * z);
            }
        }
        ModelSpec::IsoGaussian { mean, sigma } => {
            for _ in 0..m {
                for mu in mean {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    pts.push(mu + sigma * z);
                }
            }
        }
        ModelSpec::TiltedGaussian { .. } | ModelSpec::TiltedBeta { .. } => {
            let table = tilted_table(model)?.expect("tilted kind");
            for _ in 0..m {
                let u: f64 = rng.random();
                pts.push(table.quantile(u));
            }
        }
        ModelSpec::Beta { theta, ratio } => {
            let d = rand_distr::Beta::new(*theta, ratio * theta)
                .map_err(|e| SbiError::Domain(format!("beta parameters: {e}")))?;
            for _ in 0..m {
                pts.push(d.sample(&mut rng));
            }
        }
        ModelSpec::GandK { l, s, g, k, c } => {
            for _ in 0..m {
                let z: f64 = StandardNormal.sample(&mut rng);
                pts.push(gk_transform(z, *l, *s, *g, *k, *c));
            }
        }
        ModelSpec::Gmm { mu1, mu2, sigma, p } => {
            for _ in 0..m {
                let u: f64 = rng.random();
                let z: f64 = StandardNormal.sample(&mut rng);
                let mu = if u < *p { mu1 } else { mu2 };
                pts.push(mu + sigma * z);
            }
        }
        ModelSpec::StudentTShift { df, shift } => {
            let d = StudentT::new(*df).map_err(|e| SbiError::Domain(format!("student t: {e}")))?;
            for _ in 0..m {
                let t: f64 = d.sample(&mut rng);
                pts.push(shift + t);
            }
        }
    }
    Sample::new(pts, dim, Provenance::Reference, seed)
}

/// Simulate and tag the sample as drawn at parameter `theta`.
pub fn simulate_at(family: &Family, theta: &[f64], m: usize, seed: u64) -> Result<Sample> {
    let model = family.at(theta)?;
    Ok(simulate(&model, m, seed)?.with_provenance(Provenance::SimulatedAt(theta.to_vec())))
}

/// Density at `y`. Errors for quantile-only models.
pub fn density(model: &ModelSpec, y: &[f64]) -> Result<f64> {
    model.validate()?;
    if y.len() != model.data_dim() {
        return Err(SbiError::Dimension {
            expected: model.data_dim(),
            got: y.len(),
        });
    }
    density_unchecked(model, y)
}

/// Density without re-validating parameters; used on hot paths after
/// [`ModelSpec::validate`] has been called once.
pub fn density_unchecked(model: &ModelSpec, y: &[f64]) -> Result<f64> {
    let x = y[0];
    Ok(match model {
        ModelSpec::GaussianLoc { theta: mu, sigma } | ModelSpec::GaussianLocScale { mu, sigma } => {
            gauss_pdf(x, *mu, *sigma)
        }
        ModelSpec::IsoGaussian { mean, sigma } => mean
            .iter()
            .zip(y)
            .map(|(m, v)| gauss_pdf(*v, *m, *sigma))
            .product(),
        ModelSpec::TiltedGaussian {
            theta,
            sigma,
            alpha1,
            alpha2,
            tau,
        } => {
            let table = tilted_table(model)?.expect("tilted kind");
            let lo = theta - 12.0 * sigma;
            let hi = theta + 12.0 * sigma;
            if x < lo || x > hi {
                0.0
            } else {
                table.density(tilted_gaussian_log_u(
                    x, *theta, *sigma, *alpha1, *alpha2, *tau,
                ))
            }
        }
        ModelSpec::TiltedBeta {
            theta,
            ratio,
            beta1,
            beta2,
        } => {
            if !(0.0..=1.0).contains(&x) {
                0.0
            } else {
                let table = tilted_table(model)?.expect("tilted kind");
                table.density(tilted_beta_log_u(x, *theta, *ratio, *beta1, *beta2))
            }
        }
        ModelSpec::Beta { theta, ratio } => beta_ln_pdf(x, *theta, ratio * theta).exp(),
        ModelSpec::GandK { .. } => return Err(SbiError::UnsupportedDensity("gandk")),
        ModelSpec::Gmm { mu1, mu2, sigma, p } => {
            p * gauss_pdf(x, *mu1, *sigma) + (1.0 - p) * gauss_pdf(x, *mu2, *sigma)
        }
        ModelSpec::StudentTShift { df, shift } => t_pdf(x - shift, *df),
    })
}

/// Density at every row of a sample.
pub fn density_all(model: &ModelSpec, s: &Sample) -> Result<Vec<f64>> {
    model.validate()?;
    s.check_same_dim(&Sample::new(
        vec![0.0; model.data_dim()],
        model.data_dim(),
        Provenance::Reference,
        0,
    )?)?;
    s.rows().map(|y| density_unchecked(model, y)).collect()
}

/// Mean of a one-dimensional model (by quadrature for tilted kinds).
pub fn mean_1d(model: &ModelSpec) -> Result<f64> {
    model.validate()?;
    Ok(match model {
        ModelSpec::GaussianLoc { theta, .. } => *theta,
        ModelSpec::GaussianLocScale { mu, .. } => *mu,
        ModelSpec::Beta { ratio, .. } => 1.0 / (1.0 + ratio),
        ModelSpec::Gmm { mu1, mu2, p, .. } => p * mu1 + (1.0 - p) * mu2,
        ModelSpec::StudentTShift { df, shift } => {
            if *df <= 1.0 {
                return domain("t mean undefined for df <= 1");
            }
            *shift
        }
        ModelSpec::TiltedGaussian { theta, sigma, .. } => {
            let (lo, hi) = (theta - 12.0 * sigma, theta + 12.0 * sigma);
            quad_moment(model, lo, hi)?
        }
        ModelSpec::TiltedBeta { .. } => quad_moment(model, 0.0, 1.0)?,
        ModelSpec::GandK { .. } | ModelSpec::IsoGaussian { .. } => {
            return Err(SbiError::Config(format!(
                "mean_1d unsupported for {}",
                model.kind_name()
            )))
        }
    })
}

fn quad_moment(model: &ModelSpec, lo: f64, hi: f64) -> Result<f64> {
    let n = 20_001;
    let h = (hi - lo) / (n - 1) as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let x = lo + h * i as f64;
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let d = density_unchecked(model, &[x])?;
        if d.is_finite() {
            acc += w * x * d;
        }
    }
    Ok(acc * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trapezoid(model: &ModelSpec, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / (n - 1) as f64;
        (0..n)
            .map(|i| {
                let x = lo + h * i as f64;
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                let d = density(model, &[x]).unwrap();
                if d.is_finite() {
                    w * d
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn gaussian_mean_lln() {
        let s = simulate(
            &ModelSpec::GaussianLoc {
                theta: 0.0,
                sigma: 1.0,
            },
            1_000_000,
            7,
        )
        .unwrap();
        let m = crate::stats::mean(s.values_1d().unwrap());
        assert!(m.abs() < 0.005, "mean {m}");
    }

    #[test]
    fn gk_quantile_examples() {
        assert_eq!(gk_quantile(0.5, 2.5, 1.5, 1.5, -0.69, 0.8).unwrap(), 2.5);
        // φ(p) = 1 with g = k = 0 forces q = l + s
        let p1 = crate::stats::normal_cdf(1.0);
        assert!((gk_quantile(p1, 2.5, 1.5, 0.0, 0.0, 0.8).unwrap() - 4.0).abs() < 1e-9);
        let q = gk_quantile(0.9, 2.5, 1.5, 1.5, -std::f64::consts::LN_2, 0.8).unwrap();
        assert!((q - 4.064_269_251_542_276).abs() < 1e-8, "{q}");
        assert!(gk_quantile(1.0, 0.0, 1.0, 0.0, 0.0, 0.8).is_err());
        assert!(gk_quantile(0.0, 0.0, 1.0, 0.0, 0.0, 0.8).is_err());
    }

    #[test]
    fn closed_form_densities() {
        let d = density(
            &ModelSpec::GaussianLoc {
                theta: 0.0,
                sigma: 1.0,
            },
            &[0.0],
        )
        .unwrap();
        assert!((d - 0.398_942_280_401_432_7).abs() < 1e-12);
        let d = density(
            &ModelSpec::Gmm {
                mu1: -1.0,
                mu2: 1.0,
                sigma: 1.0,
                p: 0.5,
            },
            &[0.0],
        )
        .unwrap();
        assert!((d - 0.241_970_724_519_143_37).abs() < 1e-12);
        let d = density(
            &ModelSpec::Beta {
                theta: 3.0,
                ratio: 1.5,
            },
            &[0.4],
        )
        .unwrap();
        assert!((d - 2.153_316_772_757_785).abs() < 1e-10, "{d}");
    }

    #[test]
    fn tilted_density_matches_adaptive_quadrature() {
        // reference values: adaptive quadrature of the unnormalized density
        let m = ModelSpec::TiltedGaussian {
            theta: 2.5,
            sigma: 2.0,
            alpha1: 0.05,
            alpha2: -0.005,
            tau: 1e3,
        };
        assert!((density(&m, &[2.5]).unwrap() - 0.032_772_026_273_604_7).abs() < 1e-6);
        assert!((density(&m, &[5.0]).unwrap() - 0.190_069_119_716_672).abs() < 1e-6);
        let m = ModelSpec::TiltedGaussian {
            theta: 2.5,
            sigma: 2.0,
            alpha1: 0.025,
            alpha2: -0.0025,
            tau: 1e3,
        };
        assert!((density(&m, &[2.5]).unwrap() - 0.115_502_640_652_107_6).abs() < 1e-6);
    }

    #[test]
    fn densities_integrate_to_one() {
        let cases = [
            (
                ModelSpec::GaussianLoc {
                    theta: 1.0,
                    sigma: 2.0,
                },
                -30.0,
                30.0,
            ),
            (
                ModelSpec::Gmm {
                    mu1: -2.0,
                    mu2: 2.0,
                    sigma: 1.0,
                    p: 0.3,
                },
                -15.0,
                15.0,
            ),
            (
                ModelSpec::TiltedGaussian {
                    theta: 2.5,
                    sigma: 2.0,
                    alpha1: 0.05,
                    alpha2: -0.005,
                    tau: 1e3,
                },
                -21.5,
                26.5,
            ),
            (
                ModelSpec::TiltedBeta {
                    theta: 3.0,
                    ratio: 1.5,
                    beta1: 1.0,
                    beta2: -2.0,
                },
                0.0,
                1.0,
            ),
            (
                ModelSpec::Beta {
                    theta: 3.0,
                    ratio: 1.5,
                },
                0.0,
                1.0,
            ),
            (
                ModelSpec::StudentTShift {
                    df: 3.0,
                    shift: 5.0,
                },
                -3000.0,
                3000.0,
            ),
        ];
        for (m, lo, hi) in cases {
            let z = trapezoid(&m, lo, hi, 600_001);
            assert!((z - 1.0).abs() < 1e-4, "{m:?}: {z}");
        }
    }

    #[test]
    fn tilted_histogram_matches_quadrature_bins() {
        let m = ModelSpec::TiltedGaussian {
            theta: 2.5,
            sigma: 2.0,
            alpha1: 0.025,
            alpha2: -0.0025,
            tau: 1e3,
        };
        let n = 200_000;
        let s = simulate(&m, n, 11).unwrap();
        let v = s.values_1d().unwrap();
        let (lo, hi) = (-4.0, 10.0);
        let bins = 50;
        let w = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &x in v {
            if x >= lo && x < hi {
                counts[((x - lo) / w) as usize] += 1;
            }
        }
        for (b, &c) in counts.iter().enumerate() {
            let a = lo + w * b as f64;
            let p = trapezoid(&m, a, a + w, 2001);
            let expect = n as f64 * p;
            let sd = (n as f64 * p * (1.0 - p)).sqrt().max(1.0);
            assert!(
                (c as f64 - expect).abs() <= 3.5 * sd,
                "bin {b}: {c} vs {expect}"
            );
        }
    }

    #[test]
    fn parameter_domain_errors() {
        assert!(simulate(
            &ModelSpec::GaussianLoc {
                theta: 0.0,
                sigma: 0.0
            },
            5,
            1
        )
        .is_err());
        assert!(simulate(
            &ModelSpec::Gmm {
                mu1: 0.0,
                mu2: 1.0,
                sigma: 1.0,
                p: 1.5
            },
            5,
            1
        )
        .is_err());
        assert!(matches!(
            density(
                &ModelSpec::GandK {
                    l: 0.0,
                    s: 1.0,
                    g: 0.0,
                    k: 0.0,
                    c: 0.8
                },
                &[0.0]
            ),
            Err(SbiError::UnsupportedDensity(_))
        ));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn serde_tagged_record() {
        let m: ModelSpec =
            serde_json::from_str(r#"{"kind":"gandk","l":2.5,"s":1.5,"g":1.5,"k":-0.693147}"#)
                .unwrap();
        assert_eq!(
            m,
            ModelSpec::GandK {
                l: 2.5,
                s: 1.5,
                g: 1.5,
                k: -0.693147,
                c: 0.8
            }
        );
    }

    #[test]
    fn family_sets_named_parameters() {
        let f = Family::new(
            ModelSpec::Gmm {
                mu1: 0.0,
                mu2: 0.0,
                sigma: 1.0,
                p: 0.5,
            },
            vec!["mu1".into(), "p".into()],
        )
        .unwrap();
        assert_eq!(
            f.at(&[-2.0, 0.3]).unwrap(),
            ModelSpec::Gmm {
                mu1: -2.0,
                mu2: 0.0,
                sigma: 1.0,
                p: 0.3
            }
        );
        let iso = Family::new(
            ModelSpec::IsoGaussian {
                mean: vec![0.0, 0.0],
                sigma: 1.0,
            },
            vec!["mean0".into(), "mean1".into()],
        )
        .unwrap();
        assert_eq!(
            iso.at(&[1.0, 2.0]).unwrap(),
            ModelSpec::IsoGaussian {
                mean: vec![1.0, 2.0],
                sigma: 1.0
            }
        );
    }
}
