//! Density-ratio estimation.
//!
//! uLSIF fits r(y) = p(y)/q(y) in a Gaussian kernel expansion
//!
//! ```text
//! r̂(y) = Σ_i β_i exp(−‖y − c_i‖² / (2σ²))
//! β    = max(0, (Ĥ + λI)⁻¹ ĥ)
//! Ĥ_ij = mean_{Y~q} K(Y, c_i) K(Y, c_j),   ĥ_i = mean_{Y~p} K(Y, c_i)
//! ```
//!
//! with (σ, λ) chosen by K-fold cross-validation of the squared loss
//! `mean_q r̂² − 2 mean_p r̂`. Evaluations are trimmed to `[lo, hi]`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbiError};
use crate::rng::{rng_from_seed, tagged_seed};
use crate::sample::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SigmaGrid {
    Fixed(Vec<f64>),
    MedianHeuristic { multipliers: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RatioFitConfig {
    pub n_centers: usize,
    pub sigma_grid: SigmaGrid,
    pub lambda_grid: Vec<f64>,
    pub cv_folds: usize,
    pub trim_bounds: (f64, f64),
    pub seed: u64,
}

impl Default for RatioFitConfig {
    fn default() -> Self {
        Self {
            n_centers: 100,
            sigma_grid: SigmaGrid::MedianHeuristic {
                multipliers: vec![0.5, 1.0, 2.0],
            },
            lambda_grid: vec![1e-3, 1e-2, 1e-1],
            cv_folds: 5,
            trim_bounds: (1e-3, 1e3),
            seed: 0,
        }
    }
}

impl RatioFitConfig {
    /// Single (σ, λ) pair, no cross-validation.
    pub fn fixed(sigma: f64, lambda: f64) -> Self {
        Self {
            sigma_grid: SigmaGrid::Fixed(vec![sigma]),
            lambda_grid: vec![lambda],
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n_sigma = match &self.sigma_grid {
            SigmaGrid::Fixed(v) => {
                if v.iter().any(|s| !(*s > 0.0)) {
                    return Err(SbiError::Domain("kernel scales must be positive".into()));
                }
                v.len()
            }
            SigmaGrid::MedianHeuristic { multipliers } => {
                if multipliers.iter().any(|s| !(*s > 0.0)) {
                    return Err(SbiError::Domain(
                        "median-heuristic multipliers must be positive".into(),
                    ));
                }
                multipliers.len()
            }
        };
        if n_sigma == 0 || self.lambda_grid.is_empty() {
            return Err(SbiError::Config(
                "sigma and lambda grids must be nonempty".into(),
            ));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(SbiError::Domain(
                "ridge penalties must be nonnegative".into(),
            ));
        }
        if n_sigma * self.lambda_grid.len() > 1 && self.cv_folds < 2 {
            return Err(SbiError::Config(
                "cross-validation needs at least 2 folds".into(),
            ));
        }
        let (lo, hi) = self.trim_bounds;
        if !(lo > 0.0 && lo <= hi) {
            return Err(SbiError::Domain(format!(
                "trim bounds must satisfy 0 < lo <= hi, got ({lo}, {hi})"
            )));
        }
        if self.n_centers == 0 {
            return Err(SbiError::Config("n_centers must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted kernel ratio model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioModel {
    pub centers: Vec<f64>,
    pub dim: usize,
    pub sigma: f64,
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub trim_bounds: (f64, f64),
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RatioModel {
    /// Untrimmed kernel expansion at one point.
    pub fn raw(&self, y: &[f64]) -> f64 {
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        self.centers
            .chunks_exact(self.dim)
            .zip(&self.beta)
            .filter(|(_, b)| **b != 0.0)
            .map(|(c, b)| b * (-sq_dist(y, c) * inv).exp())
            .sum()
    }

    pub fn eval_point(&self, y: &[f64]) -> f64 {
        let (lo, hi) = self.trim_bounds;
        self.raw(y).clamp(lo, hi)
    }

    pub fn evaluate(&self, pts: &Sample) -> Vec<f64> {
        pts.rows().map(|y| self.eval_point(y)).collect()
    }

    pub fn n_centers(&self) -> usize {
        self.beta.len()
    }
}

/// Evaluate a ratio model on a sample.
pub fn evaluate_ratio(model: &RatioModel, pts: &Sample) -> Vec<f64> {
    model.evaluate(pts)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over (at most) 2000 evenly spaced rows.
pub fn median_heuristic(s: &Sample) -> Result<f64> {
    let n = s.len();
    if n < 2 {
        return Err(SbiError::Degenerate(
            "median heuristic needs at least two points".into(),
        ));
    }
    let take = n.min(2000);
    let idx: Vec<usize> = (0..take).map(|i| i * n / take).collect();
    let mut d = Vec::with_capacity(take * (take - 1) / 2);
    for a in 0..take {
        for b in (a + 1)..take {
            d.push(sq_dist(s.point(idx[a]), s.point(idx[b])).sqrt());
        }
    }
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 1 {
        *d.select_nth_unstable_by(mid, f64::total_cmp).1
    } else {
        let hi = *d.select_nth_unstable_by(mid, f64::total_cmp).1;
        let lo = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    if !(med > 0.0) {
        return Err(SbiError::Degenerate(
            "all points identical: zero kernel scale".into(),
        ));
    }
    Ok(med)
}

/// r = ((1 − a)/a)·((1 − h)/h), with h clamped to [1e-6, 1 − 1e-6] and the
/// result trimmed.
pub fn ratio_from_classifier(probs: &[f64], a: f64, trim: (f64, f64)) -> Vec<f64> {
    probs
        .iter()
        .map(|&h| {
            let h = h.clamp(1e-6, 1.0 - 1e-6);
            ((1.0 - a) / a * (1.0 - h) / h).clamp(trim.0, trim.1)
        })
        .collect()
}

fn sq_dist_matrix(s: &Sample, centers: &[f64], dim: usize) -> DMatrix<f64> {
    let nc = centers.len() / dim;
    DMatrix::from_fn(s.len(), nc, |i, j| {
        sq_dist(s.point(i), &centers[j * dim..(j + 1) * dim])
    })
}

fn kernel_from_dist(d: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    d.map(|v| (-v * inv).exp())
}

/// Solve (H + λI)β = h. Returns the pre-clamp solution and the λ actually
/// used (λ = 0 falls back to 1e-8 if the system is singular).
pub fn ridge_solve(
    h_mat: &DMatrix<f64>,
    h_vec: &DVector<f64>,
    lambda: f64,
) -> Result<(DVector<f64>, f64, Option<String>)> {
    let n = h_mat.nrows();
    let attempt = |lam: f64| {
        let a = h_mat + DMatrix::<f64>::identity(n, n) * lam;
        a.cholesky().map(|c| c.solve(h_vec))
    };
    if let Some(b) = attempt(lambda) {
        return Ok((b, lambda, None));
    }
    if lambda == 0.0 {
        if let Some(b) = attempt(1e-8) {
            return Ok((
                b,
                1e-8,
                Some("singular system at lambda = 0; used lambda = 1e-8".into()),
            ));
        }
    }
    // Cholesky can fail on a numerically indefinite matrix; fall back to LU.
    let a = h_mat + DMatrix::<f64>::identity(n, n) * lambda.max(1e-8);
    a.lu()
        .solve(h_vec)
        .map(|b| {
            (
                b,
                lambda.max(1e-8),
                Some("cholesky failed; solved by LU".into()),
            )
        })
        .ok_or_else(|| SbiError::Numerical("ridge system is singular".into()))
}

struct Design {
    phi_num: DMatrix<f64>,
    phi_den: DMatrix<f64>,
}

fn centers_from(num: &Sample, n_centers: usize, seed: u64) -> Vec<f64> {
    let n = num.len();
    let k = n_centers.min(n);
    let mut rng = rng_from_seed(tagged_seed(seed, "ulsif-centers"));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.truncate(k);
    idx.sort_unstable();
    let mut c = Vec::with_capacity(k * num.dim());
    for i in idx {
        c.extend_from_slice(num.point(i));
    }
    c
}

fn fold_ids(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut f = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        f[i] = pos % k;
    }
    f
}

/// Gram sums restricted to rows with the given fold label (or all rows).
fn gram_of(phi: &DMatrix<f64>, rows: Option<(&[usize], usize)>) -> (DMatrix<f64>, usize) {
    match rows {
        None => (phi.transpose() * phi, phi.nrows()),
        Some((folds, f)) => {
            let sel: Vec<usize> = (0..phi.nrows()).filter(|&i| folds[i] == f).collect();
            let sub = phi.select_rows(&sel);
            (sub.transpose() * &sub, sel.len())
        }
    }
}

fn col_sums(phi: &DMatrix<f64>, rows: Option<(&[usize], usize)>) -> (DVector<f64>, usize) {
    let mut s = DVector::zeros(phi.ncols());
    let mut count = 0;
    for i in 0..phi.nrows() {
        if rows.is_none_or(|(folds, f)| folds[i] == f) {
            s += phi.row(i).transpose();
            count += 1;
        }
    }
    (s, count)
}

fn clamp_pos(b: &DVector<f64>) -> DVector<f64> {
    b.map(|v| v.max(0.0))
}

/// Fit a uLSIF ratio model for num/den.
pub fn fit_ulsif(num: &Sample, den: &Sample, cfg: &RatioFitConfig) -> Result<RatioModel> {
    cfg.validate()?;
    num.check_same_dim(den)?;
    let dim = num.dim();
    let centers = centers_from(num, cfg.n_centers, cfg.seed);
    let sigmas: Vec<f64> = match &cfg.sigma_grid {
        SigmaGrid::Fixed(v) => v.clone(),
        SigmaGrid::MedianHeuristic { multipliers } => {
            let pooled = pooled(num, den)?;
            let med = median_heuristic(&pooled)?;
            multipliers.iter().map(|m| m * med).collect()
        }
    };
    let d_num = sq_dist_matrix(num, &centers, dim);
    let d_den = sq_dist_matrix(den, &centers, dim);
    let mut warnings = Vec::new();

    let grid_size = sigmas.len() * cfg.lambda_grid.len();
    let (sigma, lambda) = if grid_size == 1 {
        (sigmas[0], cfg.lambda_grid[0])
    } else {
        let k = cfg.cv_folds;
        if num.len() < k || den.len() < k {
            return Err(SbiError::Config(format!(
                "{k}-fold cross-validation needs at least {k} points per sample"
            )));
        }
        let f_num = fold_ids(num.len(), k, tagged_seed(cfg.seed, "cv-num"));
        let f_den = fold_ids(den.len(), k, tagged_seed(cfg.seed, "cv-den"));
        // loss[σ][λ]
        let mut loss = vec![vec![0.0; cfg.lambda_grid.len()]; sigmas.len()];
        for (si, &s) in sigmas.iter().enumerate() {
            let design = Design {
                phi_num: kernel_from_dist(&d_num, s),
                phi_den: kernel_from_dist(&d_den, s),
            };
            let (g_all, _) = gram_of(&design.phi_den, None);
            let (h_all, _) = col_sums(&design.phi_num, None);
            for f in 0..k {
                let (g_f, nd_f) = gram_of(&design.phi_den, Some((&f_den, f)));
                let (h_f, nn_f) = col_sums(&design.phi_num, Some((&f_num, f)));
                let nd_tr = (den.len() - nd_f) as f64;
                let nn_tr = (num.len() - nn_f) as f64;
                let h_mat = (&g_all - &g_f) / nd_tr;
                let h_vec = (&h_all - &h_f) / nn_tr;
                for (li, &lam) in cfg.lambda_grid.iter().enumerate() {
                    let (b, _, _) = ridge_solve(&h_mat, &h_vec, lam)?;
                    let b = clamp_pos(&b);
                    // validation: mean_den r̂² − 2 mean_num r̂ on fold f
                    let quad = (b.transpose() * &g_f * &b)[(0, 0)] / nd_f.max(1) as f64;
                    let lin = h_f.dot(&b) / nn_f.max(1) as f64;
                    loss[si][li] += (quad - 2.0 * lin) / k as f64;
                }
            }
        }
        // ties: larger λ first, then larger σ
        let mut order: Vec<(usize, usize)> = Vec::new();
        for li in 0..cfg.lambda_grid.len() {
            for si in 0..sigmas.len() {
                order.push((si, li));
            }
        }
        order.sort_by(|a, b| {
            cfg.lambda_grid[a.1]
                .total_cmp(&cfg.lambda_grid[b.1])
                .then(sigmas[a.0].total_cmp(&sigmas[b.0]))
        });
        let mut best = order[0];
        for &(si, li) in &order {
            if loss[si][li] <= loss[best.0][best.1] {
                best = (si, li);
            }
        }
        (sigmas[best.0], cfg.lambda_grid[best.1])
    };

    let phi_num = kernel_from_dist(&d_num, sigma);
    let phi_den = kernel_from_dist(&d_den, sigma);
    let h_mat = (phi_den.transpose() * &phi_den) / den.len() as f64;
    let h_vec = phi_num.row_sum().transpose() / num.len() as f64;
    let (b, lam_used, warn) = ridge_solve(&h_mat, &h_vec, lambda)?;
    warnings.extend(warn);
    let beta: Vec<f64> = clamp_pos(&b).iter().copied().collect();
    Ok(RatioModel {
        centers,
        dim,
        sigma,
        lambda: lam_used,
        beta,
        trim_bounds: cfg.trim_bounds,
        warnings,
    })
}

/// Pre-clamp uLSIF solution at a fixed (σ, λ) together with Ĥ and ĥ, for
/// diagnostics.
pub fn ulsif_system(
    num: &Sample,
    den: &Sample,
    centers: &[f64],
    sigma: f64,
    lambda: f64,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    num.check_same_dim(den)?;
    let dim = num.dim();
    let phi_num = kernel_from_dist(&sq_dist_matrix(num, centers, dim), sigma);
    let phi_den = kernel_from_dist(&sq_dist_matrix(den, centers, dim), sigma);
    let h_mat = (phi_den.transpose() * &phi_den) / den.len() as f64;
    let h_vec = phi_num.row_sum().transpose() / num.len() as f64;
    let (b, _, _) = ridge_solve(&h_mat, &h_vec, lambda)?;
    Ok((h_mat, h_vec, b))
}

fn pooled(a: &Sample, b: &Sample) -> Result<Sample> {
    let mut pts = a.as_flat().to_vec();
    pts.extend_from_slice(b.as_flat());
    Sample::new(pts, a.dim(), a.provenance.clone(), a.seed)
}
