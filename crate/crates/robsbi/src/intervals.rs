//! Interval constructions that complement relative-fit sets: the sandwich
//! ellipsoid under regularity, HulC, the cheap bootstrap, and closed-form
//! MMD intervals for Gaussian location and scale.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discrepancy::UvwTerms;
use crate::error::{Result, SbiError};
use crate::rng::{child_seed, rng_from_seed};
use crate::sample::Sample;
use crate::stats::{chi2_quantile, mean, normal_quantile, t_quantile};

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(SbiError::Domain(format!(
            "α must lie in (0, 1), got {alpha}"
        )))
    }
}

/// {θ : n(θ−θ̂)ᵀΣ⁻¹(θ−θ̂) ≤ χ²_{1−α,d}}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Vec<f64>,
    /// Σ, row-major d×d.
    pub sigma: Vec<f64>,
    pub n: usize,
    pub chi2: f64,
    /// Per-axis half-widths √(χ² Σ_aa / n) of the bounding box.
    pub half_widths: Vec<f64>,
}

impl Ellipsoid {
    pub fn contains(&self, theta: &[f64]) -> Result<bool> {
        let d = self.center.len();
        if theta.len() != d {
            return Err(SbiError::Dimension {
                expected: d,
                got: theta.len(),
            });
        }
        let s = DMatrix::from_row_slice(d, d, &self.sigma);
        let inv = s
            .try_inverse()
            .ok_or_else(|| SbiError::Numerical("Σ̂ is singular".into()))?;
        let diff = DVector::from_iterator(d, theta.iter().zip(&self.center).map(|(a, b)| a - b));
        Ok(self.n as f64 * (diff.transpose() * inv * &diff)[(0, 0)] <= self.chi2)
    }
}

pub fn sandwich_cs(
    theta_hat: &[f64],
    sigma: &DMatrix<f64>,
    n: usize,
    alpha: f64,
) -> Result<Ellipsoid> {
    check_alpha(alpha)?;
    let d = theta_hat.len();
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(SbiError::Dimension {
            expected: d,
            got: sigma.nrows(),
        });
    }
    let singular = || {
        SbiError::Numerical("sandwich covariance is singular; use relative_fit_cs instead".into())
    };
    let det = sigma.determinant();
    if !(det.abs() > 1e-300) || !det.is_finite() || sigma.clone().try_inverse().is_none() {
        return Err(singular());
    }
    let chi2 = chi2_quantile(1.0 - alpha, d as f64);
    let half_widths = (0..d)
        .map(|a| (chi2 * sigma[(a, a)].max(0.0) / n as f64).sqrt())
        .collect();
    Ok(Ellipsoid {
        center: theta_hat.to_vec(),
        sigma: sigma.transpose().as_slice().to_vec(),
        n,
        chi2,
        half_widths,
    })
}

/// Column covariance (1/(N−1)) of per-point gradient rows.
fn grad_cov(rows: &[Vec<f64>], d: usize) -> DMatrix<f64> {
    let n = rows.len();
    let mut m = DMatrix::zeros(d, d);
    if n < 2 {
        return m;
    }
    let mu: Vec<f64> = (0..d)
        .map(|a| rows.iter().map(|r| r[a]).sum::<f64>() / n as f64)
        .collect();
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                m[(a, b)] += (r[a] - mu[a]) * (r[b] - mu[b]);
            }
        }
    }
    m / (n - 1) as f64
}

/// Σ = G⁻¹MG⁻ᵀ for the minimizer of d̂(θ) = mean U + mean V + mean W.
///
/// G is the Hessian of d̂ by central differences with per-axis `step`; M is
/// n times the covariance of the mean gradient, built from per-point term
/// gradients. `eval` must use common random numbers across θ so that the
/// per-point terms line up.
pub fn sandwich_sigma(
    eval: &dyn Fn(&[f64]) -> Result<UvwTerms>,
    theta_hat: &[f64],
    step: &[f64],
) -> Result<DMatrix<f64>> {
    let d = theta_hat.len();
    if step.len() != d || step.iter().any(|h| !(*h > 0.0)) {
        return Err(SbiError::Domain(
            "finite-difference steps must be positive, one per axis".into(),
        ));
    }
    let shifted = |a: usize, s: f64, b: usize, t: f64| -> Result<UvwTerms> {
        let mut th = theta_hat.to_vec();
        th[a] += s;
        th[b] += t;
        eval(&th)
    };
    let centre = eval(theta_hat)?;
    let f0 = centre.value();
    let mut g = DMatrix::zeros(d, d);
    let mut plus = Vec::with_capacity(d);
    let mut minus = Vec::with_capacity(d);
    for a in 0..d {
        let p = shifted(a, step[a], a, 0.0)?;
        let m = shifted(a, -step[a], a, 0.0)?;
        g[(a, a)] = (p.value() - 2.0 * f0 + m.value()) / (step[a] * step[a]);
        plus.push(p);
        minus.push(m);
    }
    for a in 0..d {
        for b in (a + 1)..d {
            let pp = shifted(a, step[a], b, step[b])?.value();
            let pm = shifted(a, step[a], b, -step[b])?.value();
            let mp = shifted(a, -step[a], b, step[b])?.value();
            let mm = shifted(a, -step[a], b, -step[b])?.value();
            let v = (pp - pm - mp + mm) / (4.0 * step[a] * step[b]);
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    let scale = centre.influence_scale / centre.normalizer;
    let grads = |pick: &dyn Fn(&UvwTerms) -> Option<&Vec<f64>>| -> Result<Option<Vec<Vec<f64>>>> {
        let Some(base) = pick(&centre) else {
            return Ok(None);
        };
        let len = base.len();
        let mut rows = vec![vec![0.0; d]; len];
        for a in 0..d {
            let (p, m) = (pick(&plus[a]), pick(&minus[a]));
            let (Some(p), Some(m)) = (p, m) else {
                return Ok(None);
            };
            if p.len() != len || m.len() != len {
                return Err(SbiError::Dimension {
                    expected: len,
                    got: p.len(),
                });
            }
            for i in 0..len {
                rows[i][a] = scale * (p[i] - m[i]) / (2.0 * step[a]);
            }
        }
        Ok(Some(rows))
    };
    let n = centre.u.len() as f64;
    let mut mmat = DMatrix::zeros(d, d);
    for rows in [
        grads(&|t| Some(&t.u))?,
        grads(&|t| Some(&t.v))?,
        grads(&|t| t.w.as_ref())?,
    ]
    .into_iter()
    .flatten()
    {
        mmat += grad_cov(&rows, d) * (n / rows.len() as f64);
    }
    let ginv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| SbiError::Numerical("Hessian of the discrepancy is singular at θ̂".into()))?;
    Ok(&ginv * mmat * ginv.transpose())
}

/// Number of HulC batches ⌈log(2/α)/log 2⌉.
pub fn hulc_batches(alpha: f64) -> Result<usize> {
    check_alpha(alpha)?;
    Ok(((2.0 / alpha).ln() / 2f64.ln()).ceil() as usize)
}

/// Seeded equal-size batches of `data`.
fn batches(data: &Sample, b: usize, seed: u64) -> Vec<Sample> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let n = data.len();
    (0..b)
        .map(|j| data.select(&idx[j * n / b..(j + 1) * n / b]))
        .collect()
}

/// HulC: per-coordinate [min, max] of estimates over B disjoint batches.
pub fn hulc_interval(
    data: &Sample,
    estimator: &dyn Fn(&Sample) -> Result<Vec<f64>>,
    alpha: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let b = hulc_batches(alpha)?;
    if data.len() < b {
        return Err(SbiError::Degenerate(format!(
            "HulC needs n ≥ {b} observations, got {}",
            data.len()
        )));
    }
    let ests: Vec<Vec<f64>> = batches(data, b, seed)
        .iter()
        .map(estimator)
        .collect::<Result<_>>()?;
    let d = ests[0].len();
    Ok((0..d)
        .map(|a| {
            ests.iter()
                .map(|e| e[a])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CheapBootstrapVariant {
    /// Centre at the replicate mean; SD with divisor b (algorithmic form).
    #[default]
    ReplicateMean,
    /// Centre at the full-data estimate; S = √(mean (ψ*_b − ψ̂)²).
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub center: f64,
    pub half_width: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(center: f64, half_width: f64) -> Self {
        Self {
            center,
            half_width,
            lo: center - half_width,
            hi: center + half_width,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Cheap bootstrap with `b` resamples (with replacement) and a t-quantile
/// on b degrees of freedom.
pub fn cheap_bootstrap(
    data: &Sample,
    estimator: &dyn Fn(&Sample) -> Result<Vec<f64>>,
    b: usize,
    alpha: f64,
    seed: u64,
    variant: CheapBootstrapVariant,
) -> Result<Vec<Interval>> {
    check_alpha(alpha)?;
    if b == 0 {
        return Err(SbiError::Config("cheap bootstrap needs b ≥ 1".into()));
    }
    let n = data.len();
    let reps: Vec<Vec<f64>> = (0..b)
        .map(|r| {
            let mut rng = rng_from_seed(child_seed(seed, r as u64));
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            estimator(&data.select(&idx))
        })
        .collect::<Result<_>>()?;
    let q = t_quantile(1.0 - alpha / 2.0, b as f64);
    let full = match variant {
        CheapBootstrapVariant::Centered => Some(estimator(data)?),
        CheapBootstrapVariant::ReplicateMean => None,
    };
    let d = reps[0].len();
    Ok((0..d)
        .map(|a| {
            let col: Vec<f64> = reps.iter().map(|r| r[a]).collect();
            let center = match &full {
                Some(f) => f[a],
                None => mean(&col),
            };
            let s =
                (col.iter().map(|v| (v - center) * (v - center)).sum::<f64>() / b as f64).sqrt();
            Interval::new(center, q * s)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdCiMode {
    Location,
    Scale,
}

/// Asymptotic variance constant of the Gaussian-kernel MMD estimator for a
/// 1-D Gaussian model; `h` is the kernel scale.
pub fn mmd_gaussian_constant(theta: f64, h: f64, sigma: f64, mode: MmdCiMode) -> Result<f64> {
    if !(h > 0.0) || !(sigma > 0.0) {
        return Err(SbiError::Domain(
            "kernel scale and σ must be positive".into(),
        ));
    }
    let d = 1.0;
    let h2 = h * h;
    let s2 = sigma * sigma;
    match mode {
        MmdCiMode::Location => Ok(s2
            * ((h2 + s2) * (3.0 * s2 + h2)).powf(-d / 2.0 - 1.0)
            * (h2 + 2.0 * s2).powf(d + 2.0)),
        MmdCiMode::Scale => {
            if !(theta > 0.0) {
                return Err(SbiError::Domain("scale estimate must be positive".into()));
            }
            let s = 2.0 * theta;
            let inner = (h2 + s).powf(-d / 2.0 - 2.0)
                * (h2 + 2.0 * s).powf(d + 2.0)
                * (h2 + 3.0 * s).powf(-d / 2.0 - 2.0)
                * ((h2 + 2.0 * s).powi(2) + 2.0 * s * s / d);
            Ok((h2 + 2.0 * s).powi(2) * (inner - 1.0) / ((d + 2.0).powi(2) * s * s))
        }
    }
}

/// θ̂ ± z_{α/2}√(C/(n∧m)).
pub fn mmd_gaussian_ci(
    theta_hat: f64,
    n: usize,
    m: usize,
    h: f64,
    sigma: f64,
    mode: MmdCiMode,
    alpha: f64,
) -> Result<Interval> {
    check_alpha(alpha)?;
    let c = mmd_gaussian_constant(theta_hat, h, sigma, mode)?;
    let z = normal_quantile(1.0 - alpha / 2.0);
    Ok(Interval::new(theta_hat, z * (c / n.min(m) as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrepancy::{mmd_terms_cached, KernelBlock, KernelSpec};
    use crate::model_zoo::{simulate, ModelSpec};
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn sandwich_half_width_arithmetic() {
        let e = sandwich_cs(&[0.0], &DMatrix::from_element(1, 1, 1.0), 100, 0.05).unwrap();
        assert!((e.half_widths[0] - (3.841_458_820_694_124f64 / 100.0).sqrt()).abs() < 1e-9);
        assert!(e.contains(&[0.19]).unwrap());
        assert!(!e.contains(&[0.2]).unwrap());
        assert!(sandwich_cs(&[0.0, 0.0], &DMatrix::from_element(2, 2, 1.0), 100, 0.05).is_err());
    }

    #[test]
    fn sandwich_step_halving_is_stable() {
        let obs = simulate(
            &ModelSpec::GaussianLoc {
                theta: 0.0,
                sigma: 1.0,
            },
            400,
            1,
        )
        .unwrap();
        let k = KernelSpec::gaussian(1.0);
        let block = KernelBlock::new(&k, &obs);
        let noise = simulate(
            &ModelSpec::GaussianLoc {
                theta: 0.0,
                sigma: 1.0,
            },
            400,
            2,
        )
        .unwrap();
        let eval = |t: &[f64]| {
            let sim = Sample::observed(noise.as_flat().iter().map(|z| z + t[0]).collect())?;
            mmd_terms_cached(&k, &obs, &block, &sim)
        };
        let spacing = 0.05;
        let a = sandwich_sigma(&eval, &[0.0], &[0.05 * spacing]).unwrap()[(0, 0)];
        let b = sandwich_sigma(&eval, &[0.0], &[0.025 * spacing]).unwrap()[(0, 0)];
        assert!(a > 0.0);
        assert!(((a.sqrt() - b.sqrt()) / a.sqrt()).abs() < 0.01, "{a} {b}");
    }

    #[test]
    fn hulc_batch_count_and_degenerate_cases() {
        assert_eq!(hulc_batches(0.05).unwrap(), 6);
        let d = Sample::observed(vec![1.0; 12]).unwrap();
        let iv = hulc_interval(&d, &|s: &Sample| Ok(vec![mean(s.as_flat())]), 0.05, 1).unwrap();
        assert_eq!(iv[0], (1.0, 1.0));
        let small = Sample::observed(vec![1.0; 5]).unwrap();
        assert!(hulc_interval(&small, &|_: &Sample| Ok(vec![0.0]), 0.05, 1).is_err());
    }

    #[test]
    fn hulc_covers_gaussian_mean() {
        let mut hits = 0;
        for rep in 0..100 {
            let d = simulate(
                &ModelSpec::GaussianLoc {
                    theta: 0.0,
                    sigma: 1.0,
                },
                2400,
                rep,
            )
            .unwrap();
            let iv = hulc_interval(
                &d,
                &|s: &Sample| Ok(vec![mean(s.as_flat())]),
                0.05,
                1000 + rep,
            )
            .unwrap();
            if iv[0].0 <= 0.0 && 0.0 <= iv[0].1 {
                hits += 1;
            }
        }
        assert!(hits >= 89, "{hits}");
    }

    fn folded_variance_coverage(variant: CheapBootstrapVariant) -> f64 {
        let target = 1.0 - 2.0 / std::f64::consts::PI;
        let est = |s: &Sample| Ok(vec![crate::stats::variance(s.as_flat())]);
        let mut hits = 0;
        for rep in 0..100 {
            let z = simulate(
                &ModelSpec::GaussianLoc {
                    theta: 0.0,
                    sigma: 1.0,
                },
                2000,
                50 + rep,
            )
            .unwrap();
            let d = Sample::observed(z.as_flat().iter().map(|v| v.abs()).collect()).unwrap();
            if cheap_bootstrap(&d, &est, 5, 0.05, 7 + rep, variant).unwrap()[0].contains(target) {
                hits += 1;
            }
        }
        hits as f64 / 100.0
    }

    #[test]
    fn cheap_bootstrap_centered_covers_folded_normal_variance() {
        let c = folded_variance_coverage(CheapBootstrapVariant::Centered);
        assert!(c >= 0.90, "{c}");
    }

    #[test]
    fn cheap_bootstrap_replicate_mean_matches_its_analytic_coverage() {
        // centre error ~ N(0, τ²(1+1/b)), b·S²/τ² ~ χ²_{b−1}
        let b = 5.0;
        let q = t_quantile(0.975, b) * ((b - 1.0) / (b + 1.0)).sqrt();
        let t = StudentsT::new(0.0, 1.0, b - 1.0).unwrap();
        let analytic = t.cdf(q) - t.cdf(-q);
        assert!((analytic - 0.896).abs() < 0.005, "{analytic}");
        let c = folded_variance_coverage(CheapBootstrapVariant::ReplicateMean);
        assert!(
            (c - analytic).abs() <= 3.0 * (analytic * (1.0 - analytic) / 100.0).sqrt(),
            "{c} vs {analytic}"
        );
    }

    #[test]
    fn cheap_bootstrap_identical_replicates_zero_width() {
        let d = Sample::observed(vec![2.0; 50]).unwrap();
        let iv = cheap_bootstrap(
            &d,
            &|s: &Sample| Ok(vec![mean(s.as_flat())]),
            5,
            0.05,
            1,
            Default::default(),
        )
        .unwrap();
        assert_eq!(iv[0].half_width, 0.0);
    }

    #[test]
    fn mmd_location_constant() {
        let c = mmd_gaussian_constant(0.0, 1.0, 1.0, MmdCiMode::Location).unwrap();
        assert!((c - 27.0 / (8.0 * 8f64.sqrt())).abs() < 1e-12, "{c}");
        let iv = mmd_gaussian_ci(0.0, 1000, 2000, 1.0, 1.0, MmdCiMode::Location, 0.05).unwrap();
        assert!((iv.half_width - 1.959_963_984_540_054 * (c / 1000.0).sqrt()).abs() < 1e-9);
        let wide = mmd_gaussian_ci(0.0, 10, 10, 1.0, 1.0, MmdCiMode::Location, 0.05).unwrap();
        let narrow = mmd_gaussian_ci(
            0.0,
            1_000_000,
            1_000_000,
            1.0,
            1.0,
            MmdCiMode::Location,
            0.05,
        )
        .unwrap();
        assert!(narrow.half_width < wide.half_width / 300.0);
        assert!(mmd_gaussian_ci(0.0, 10, 10, 0.0, 1.0, MmdCiMode::Location, 0.05).is_err());
        assert!(mmd_gaussian_constant(1.0, 1.0, 1.0, MmdCiMode::Scale).unwrap() > 0.0);
    }

    #[test]
    fn mmd_location_constant_matches_m_estimator_variance() {
        // population objective maximizes Σ exp(−(Y_i−θ)²/(2(h²+σ²))); the
        // M-estimator sandwich E[ψ²]/E[ψ']² with ψ(u) = u·exp(−u²/(2(h²+σ²)))
        let (h2, s2) = (0.7f64, 1.3f64);
        let a = 1.0 / (h2 + s2);
        let e_psi2 = s2 * (1.0 + 2.0 * a * s2).powf(-1.5);
        let e_dpsi = (1.0 + a * s2).powf(-0.5) - a * s2 * (1.0 + a * s2).powf(-1.5);
        let c = mmd_gaussian_constant(0.0, h2.sqrt(), s2.sqrt(), MmdCiMode::Location).unwrap();
        assert!(
            (c - e_psi2 / (e_dpsi * e_dpsi)).abs() < 1e-12,
            "{c} vs {}",
            e_psi2 / (e_dpsi * e_dpsi)
        );
    }
}
