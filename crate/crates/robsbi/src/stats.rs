//! Small statistical helpers shared by the estimators: normal and t
//! quantiles, sample moments, and Nadaraya–Watson smoothing over θ-grids.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::error::{Result, SbiError};

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn chi2_quantile(p: f64, df: f64) -> f64 {
    ChiSquared::new(df).expect("df > 0").inverse_cdf(p)
}

pub fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("df > 0").inverse_cdf(p)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Linear-interpolation quantile (type 7) of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Default smoothing bandwidth per axis: range × N^{-1/(4+d)}.
pub fn default_bandwidth(points: &[f64], dim: usize) -> Vec<f64> {
    let n = points.len() / dim;
    let factor = (n as f64).powf(-1.0 / (4.0 + dim as f64));
    (0..dim)
        .map(|a| {
            let (lo, hi) = axis_range(points, dim, a);
            let r = hi - lo;
            if r > 0.0 {
                r * factor
            } else {
                1.0
            }
        })
        .collect()
}

pub fn axis_range(points: &[f64], dim: usize, axis: usize) -> (f64, f64) {
    points
        .chunks_exact(dim)
        .map(|p| p[axis])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// How the smoothing bandwidth over a θ-design is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Explicit per-axis bandwidth.
    Fixed { h: Vec<f64> },
    /// factor × range × N^{−1/(4+d)} per axis.
    RangeRate { factor: f64 },
    /// Leave-one-out cross-validation over multiples of the range rate.
    LooCv { factors: Vec<f64> },
}

impl Default for BandwidthRule {
    fn default() -> Self {
        Self::LooCv {
            factors: vec![0.02, 0.03, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3, 0.5, 1.0],
        }
    }
}

impl BandwidthRule {
    /// Bandwidth for smoothing `values` observed at `design`.
    pub fn select(&self, design: &[f64], dim: usize, values: &[f64]) -> Result<Vec<f64>> {
        let base = default_bandwidth(design, dim);
        match self {
            Self::Fixed { h } => Ok(h.clone()),
            Self::RangeRate { factor } => Ok(base.iter().map(|h| h * factor).collect()),
            Self::LooCv { factors } => {
                let mut best: Option<(f64, f64)> = None;
                for f in factors {
                    let h: Vec<f64> = base.iter().map(|b| b * f).collect();
                    let score = KernelSmoother::new(design, dim, &h)?.loo_cv_score(values);
                    // strict improvement keeps the smallest factor on ties
                    if score.is_finite() && best.is_none_or(|(_, b)| score < b - 1e-12 * b.abs()) {
                        best = Some((*f, score));
                    }
                }
                let f = best
                    .map(|(f, _)| f)
                    .ok_or(SbiError::Bandwidth { index: 0 })?;
                Ok(base.iter().map(|b| b * f).collect())
            }
        }
    }
}

/// Gaussian-product-kernel Nadaraya–Watson smoother over design points.
#[derive(Debug, Clone)]
pub struct KernelSmoother {
    design: Vec<f64>,
    dim: usize,
    inv_h: Vec<f64>,
}

impl KernelSmoother {
    pub fn new(design: &[f64], dim: usize, bandwidth: &[f64]) -> Result<Self> {
        if dim == 0 || design.is_empty() || design.len() % dim != 0 {
            return Err(SbiError::Degenerate(
                "smoother needs a nonempty design".into(),
            ));
        }
        if bandwidth.len() != dim {
            return Err(SbiError::Dimension {
                expected: dim,
                got: bandwidth.len(),
            });
        }
        if bandwidth.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(SbiError::Domain("bandwidth must be positive".into()));
        }
        Ok(Self {
            design: design.to_vec(),
            dim,
            inv_h: bandwidth.iter().map(|h| 1.0 / h).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.design.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.design.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn raw_kernel(&self, at: &[f64], j: usize) -> f64 {
        let x = &self.design[j * self.dim..(j + 1) * self.dim];
        let mut q = 0.0;
        for a in 0..self.dim {
            let u = (at[a] - x[a]) * self.inv_h[a];
            q += u * u;
        }
        (-0.5 * q).exp()
    }

    /// Normalized weights at `at`, optionally multiplied by `extra` before
    /// normalization. `index` only labels the error.
    pub fn weights(&self, at: &[f64], extra: Option<&[f64]>, index: usize) -> Result<Vec<f64>> {
        let mut w: Vec<f64> = (0..self.len())
            .map(|j| self.raw_kernel(at, j) * extra.map_or(1.0, |e| e[j]))
            .collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(SbiError::Bandwidth { index });
        }
        for v in &mut w {
            *v /= total;
        }
        Ok(w)
    }

    pub fn smooth_at(
        &self,
        values: &[f64],
        at: &[f64],
        extra: Option<&[f64]>,
        index: usize,
    ) -> Result<f64> {
        let w = self.weights(at, extra, index)?;
        Ok(w.iter().zip(values).map(|(a, b)| a * b).sum())
    }

    /// Smoothed value and weighted-residual standard error √(Σ w_j²(v_j − v̂)²).
    pub fn smooth_with_se(&self, values: &[f64], at: &[f64], index: usize) -> Result<(f64, f64)> {
        let w = self.weights(at, None, index)?;
        let fit: f64 = w.iter().zip(values).map(|(a, b)| a * b).sum();
        let se = w
            .iter()
            .zip(values)
            .map(|(a, b)| a * a * (b - fit) * (b - fit))
            .sum::<f64>()
            .sqrt();
        Ok((fit, se))
    }

    /// Mean squared leave-one-out prediction error; infinite if some point
    /// has no neighbour with positive weight.
    pub fn loo_cv_score(&self, values: &[f64]) -> f64 {
        let n = self.len();
        let mut num = vec![0.0; n];
        let mut den = vec![0.0; n];
        for i in 0..n {
            let xi = &self.design[i * self.dim..(i + 1) * self.dim];
            for j in (i + 1)..n {
                let k = self.raw_kernel(xi, j);
                num[i] += k * values[j];
                den[i] += k;
                num[j] += k * values[i];
                den[j] += k;
            }
        }
        let mut sse = 0.0;
        for i in 0..n {
            if !(den[i] > 0.0) {
                return f64::INFINITY;
            }
            let e = values[i] - num[i] / den[i];
            sse += e * e;
        }
        sse / n as f64
    }

    /// Smooth at every row of `eval` (row-major, same dimension).
    pub fn smooth_all(
        &self,
        values: &[f64],
        eval: &[f64],
        extra: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        eval.chunks_exact(self.dim)
            .enumerate()
            .map(|(i, at)| self.smooth_at(values, at, extra, i))
            .collect()
    }
}
