//! Varying-coefficient approximation p_{θ,f}(y) = Σ_r f_r(θ) b_r(y) of a
//! simulator density on a bounded support.
//!
//! The L2 projection has f*(θ) = B⁻¹E_θ[b(Y)] with Gram matrix B; E_θ[b(Y)]
//! is estimated from simulations at each design point and the coefficient
//! functions are kernel-smoothed over θ.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbiError};
use crate::grid::Grid;
use crate::sample::Sample;
use crate::stats::{BandwidthRule, KernelSmoother};

pub const GL_NODES: usize = 512;

/// Gauss–Legendre nodes and weights on [−1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    /// Legendre polynomials rescaled to be orthonormal on the support.
    Legendre,
    /// 1, y, y², … (poorly conditioned for large k).
    Monomial,
    /// Orthonormal cosines 1, √2·cos(πr u), u the rescaled coordinate.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub family: BasisFamily,
    pub k: usize,
    pub lo: f64,
    pub hi: f64,
    /// Multiplier applied to every function (1 by default).
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Basis {
    pub fn new(family: BasisFamily, k: usize, lo: f64, hi: f64) -> Result<Self> {
        if k == 0 || k > 32 {
            return Err(SbiError::Config(format!(
                "basis size k must lie in 1..=32, got {k}"
            )));
        }
        if !(lo < hi) {
            return Err(SbiError::Domain("basis support needs lo < hi".into()));
        }
        Ok(Self {
            family,
            k,
            lo,
            hi,
            scale: 1.0,
        })
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.lo && y <= self.hi
    }

    /// (b_1(y), …, b_k(y)).
    pub fn eval(&self, y: f64) -> Vec<f64> {
        let len = self.hi - self.lo;
        let u = (y - self.lo) / len;
        let mut out = Vec::with_capacity(self.k);
        match self.family {
            BasisFamily::Monomial => {
                let mut p = 1.0;
                for _ in 0..self.k {
                    out.push(p);
                    p *= y;
                }
            }
            BasisFamily::Legendre => {
                let t = 2.0 * u - 1.0;
                let (mut p0, mut p1) = (1.0, t);
                for r in 0..self.k {
                    let pr = match r {
                        0 => 1.0,
                        1 => t,
                        _ => {
                            let rf = r as f64;
                            let p2 = ((2.0 * rf - 1.0) * t * p1 - (rf - 1.0) * p0) / rf;
                            p0 = p1;
                            p1 = p2;
                            p2
                        }
                    };
                    out.push(pr * ((2 * r + 1) as f64 / len).sqrt());
                }
            }
            BasisFamily::Cosine => {
                for r in 0..self.k {
                    let c = if r == 0 {
                        1.0
                    } else {
                        2f64.sqrt() * (std::f64::consts::PI * r as f64 * u).cos()
                    };
                    out.push(c / len.sqrt());
                }
            }
        }
        if self.scale != 1.0 {
            for v in &mut out {
                *v *= self.scale;
            }
        }
        out
    }
}

/// B_rs = ∫ b_r b_s over the support by 512-node Gauss–Legendre quadrature.
pub fn gram_matrix(basis: &Basis) -> Result<DMatrix<f64>> {
    let (x, w) = gauss_legendre(GL_NODES);
    let half = 0.5 * (basis.hi - basis.lo);
    let mid = 0.5 * (basis.hi + basis.lo);
    let k = basis.k;
    let mut g = DMatrix::zeros(k, k);
    for (xi, wi) in x.iter().zip(&w) {
        let b = basis.eval(mid + half * xi);
        for r in 0..k {
            for s in r..k {
                g[(r, s)] += wi * half * b[r] * b[s];
            }
        }
    }
    for r in 0..k {
        for s in 0..r {
            g[(r, s)] = g[(s, r)];
        }
    }
    let ev = g.clone().symmetric_eigen().eigenvalues;
    let (mn, mx) = ev
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(mn > 0.0) || mx / mn > 1e12 {
        return Err(SbiError::Numerical(format!(
            "Gram matrix condition number {:.3e} exceeds 1e12; use an orthonormalized basis (e.g. legendre)",
            mx / mn
        )));
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaryingCoeffModel {
    pub basis: Basis,
    /// Row-major k × k.
    pub gram: Vec<f64>,
    pub thetas: Grid,
    /// f̂(θ_j) per retained design point.
    pub coeffs: Vec<Vec<f64>>,
    /// Smoothing bandwidth over θ for each coefficient function.
    pub bandwidth: Vec<Vec<f64>>,
    pub pooled: bool,
    pub warnings: Vec<String>,
}

/// Per-θ basis means b̄_θ; points outside the support are clipped into it.
fn basis_means(
    basis: &Basis,
    sims: &[Sample],
    warnings: &mut Vec<String>,
) -> Result<Vec<Option<Vec<f64>>>> {
    let out: Vec<(Option<Vec<f64>>, usize)> = sims
        .par_iter()
        .map(|s| {
            if s.is_empty() {
                return Ok((None, 0));
            }
            let ys = s.values_1d()?;
            let mut m = vec![0.0; basis.k];
            let mut clipped = 0;
            for y in ys {
                let yc = if basis.contains(*y) {
                    *y
                } else {
                    clipped += 1;
                    y.clamp(basis.lo, basis.hi)
                };
                for (a, b) in m.iter_mut().zip(basis.eval(yc)) {
                    *a += b / ys.len() as f64;
                }
            }
            Ok((Some(m), clipped))
        })
        .collect::<Result<_>>()?;
    let clipped: usize = out.iter().map(|o| o.1).sum();
    if clipped > 0 {
        warnings.push(format!(
            "{clipped} simulated points outside the support were clipped"
        ));
    }
    Ok(out.into_iter().map(|o| o.0).collect())
}

/// Fits f̂(θ_j) = B⁻¹b̄_{θ_j} on the design and smoothing bandwidths for the
/// coefficient functions. With `pooled`, b̄ is kernel-smoothed across θ
/// before solving (useful when each θ has very few simulations).
pub fn fit_coeffs(
    grid: &Grid,
    sims: &[Sample],
    basis: &Basis,
    pooled: bool,
    rule: &BandwidthRule,
) -> Result<VaryingCoeffModel> {
    if sims.len() != grid.len() {
        return Err(SbiError::Dimension {
            expected: grid.len(),
            got: sims.len(),
        });
    }
    let gram = gram_matrix(basis)?;
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| SbiError::Numerical("Gram matrix is not positive definite".into()))?;
    let mut warnings = Vec::new();
    let means = basis_means(basis, sims, &mut warnings)?;
    let mut pts = Vec::new();
    let mut bbar = Vec::new();
    for (j, m) in means.into_iter().enumerate() {
        match m {
            Some(v) => {
                pts.extend_from_slice(grid.point(j));
                bbar.push(v);
            }
            None => warnings.push(format!("θ index {j} dropped: empty simulation")),
        }
    }
    let thetas = Grid::new(pts, grid.dim)?;
    let k = basis.k;
    if pooled {
        let mut smoothed = vec![vec![0.0; k]; bbar.len()];
        for r in 0..k {
            let col: Vec<f64> = bbar.iter().map(|v| v[r]).collect();
            let h = rule.select(&thetas.points, thetas.dim, &col)?;
            let fit = KernelSmoother::new(&thetas.points, thetas.dim, &h)?.smooth_all(
                &col,
                &thetas.points,
                None,
            )?;
            for (j, v) in fit.into_iter().enumerate() {
                smoothed[j][r] = v;
            }
        }
        bbar = smoothed;
    }
    let coeffs: Vec<Vec<f64>> = bbar
        .iter()
        .map(|b| {
            chol.solve(&DVector::from_column_slice(b))
                .iter()
                .copied()
                .collect()
        })
        .collect();
    let bandwidth = (0..k)
        .map(|r| {
            let col: Vec<f64> = coeffs.iter().map(|c| c[r]).collect();
            rule.select(&thetas.points, thetas.dim, &col)
        })
        .collect::<Result<_>>()?;
    Ok(VaryingCoeffModel {
        basis: basis.clone(),
        gram: gram.transpose().as_slice().to_vec(),
        thetas,
        coeffs,
        bandwidth,
        pooled,
        warnings,
    })
}

impl VaryingCoeffModel {
    pub fn k(&self) -> usize {
        self.basis.k
    }

    /// Kernel-smoothed f̂(θ).
    pub fn coeffs_at(&self, theta: &[f64]) -> Result<Vec<f64>> {
        (0..self.k())
            .map(|r| {
                let col: Vec<f64> = self.coeffs.iter().map(|c| c[r]).collect();
                KernelSmoother::new(&self.thetas.points, self.thetas.dim, &self.bandwidth[r])?
                    .smooth_at(&col, theta, None, 0)
            })
            .collect()
    }

    /// True if θ lies outside the per-axis range of the design.
    pub fn is_extrapolation(&self, theta: &[f64]) -> bool {
        (0..self.thetas.dim).any(|a| {
            let (lo, hi) = crate::stats::axis_range(&self.thetas.points, self.thetas.dim, a);
            theta[a] < lo || theta[a] > hi
        })
    }

    /// Σ f̂_r(θ) b_r(y); may be negative (the projection is signed).
    pub fn density(&self, theta: &[f64], y: f64) -> Result<f64> {
        if !self.basis.contains(y) {
            return Err(SbiError::Domain(format!(
                "y = {y} outside the support [{}, {}]",
                self.basis.lo, self.basis.hi
            )));
        }
        let f = self.coeffs_at(theta)?;
        Ok(f.iter().zip(self.basis.eval(y)).map(|(a, b)| a * b).sum())
    }

    pub fn density_clamped(&self, theta: &[f64], y: f64) -> Result<f64> {
        Ok(self.density(theta, y)?.max(0.0))
    }

    /// ‖B f̂(θ_j) − b̄‖ given the basis means used in the fit.
    pub fn normal_equation_residual(&self, j: usize, bbar: &[f64]) -> f64 {
        let k = self.k();
        let g = DMatrix::from_row_slice(k, k, &self.gram);
        (g * DVector::from_column_slice(&self.coeffs[j]) - DVector::from_column_slice(bbar)).norm()
    }
}

/// L̂(θ, f) = ∫ p̂² − (2/m) Σ p̂(Y_i) for coefficient vector f.
fn loss_at(basis: &Basis, gram: &DMatrix<f64>, f: &[f64], validation: &Sample) -> Result<f64> {
    let fv = DVector::from_column_slice(f);
    let quad = (fv.transpose() * gram * &fv)[(0, 0)];
    let ys = validation.values_1d()?;
    let lin: f64 = ys
        .iter()
        .map(|y| {
            f.iter()
                .zip(basis.eval(y.clamp(basis.lo, basis.hi)))
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum();
    Ok(quad - 2.0 * lin / ys.len() as f64)
}

/// Average validation loss L̂(k) for each candidate and the minimizing k
/// (ties to the smaller k). Coefficients come from `fit_sims`, the loss
/// from independent `validation` simulations at the same θ's.
pub fn select_k(
    candidates: &[usize],
    grid: &Grid,
    fit_sims: &[Sample],
    validation: &[Sample],
    family: BasisFamily,
    support: (f64, f64),
) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(SbiError::Config("no candidate basis sizes".into()));
    }
    if validation.len() != grid.len() || fit_sims.len() != grid.len() {
        return Err(SbiError::Dimension {
            expected: grid.len(),
            got: validation.len().min(fit_sims.len()),
        });
    }
    let mut losses = Vec::with_capacity(candidates.len());
    for &k in candidates {
        let basis = Basis::new(family, k, support.0, support.1)?;
        let gram = gram_matrix(&basis)?;
        let chol = gram
            .clone()
            .cholesky()
            .ok_or_else(|| SbiError::Numerical("Gram matrix is not positive definite".into()))?;
        let mut warnings = Vec::new();
        let means = basis_means(&basis, fit_sims, &mut warnings)?;
        let per: Vec<f64> = means
            .par_iter()
            .zip(validation.par_iter())
            .filter_map(|(m, v)| m.as_ref().map(|m| (m, v)))
            .map(|(m, v)| {
                let f: Vec<f64> = chol
                    .solve(&DVector::from_column_slice(m))
                    .iter()
                    .copied()
                    .collect();
                loss_at(&basis, &gram, &f, v)
            })
            .collect::<Result<_>>()?;
        losses.push(per.iter().sum::<f64>() / per.len() as f64);
    }
    let best = (0..candidates.len()).fold(0, |b, i| {
        if losses[i] < losses[b] || (losses[i] == losses[b] && candidates[i] < candidates[b]) {
            i
        } else {
            b
        }
    });
    Ok((candidates[best], losses))
}
