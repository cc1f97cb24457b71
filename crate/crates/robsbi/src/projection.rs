//! Population projection parameters for one-dimensional data and a single
//! free parameter, by quadrature and fine-grid minimization. Used as the
//! oracle when the assumed model is misspecified.

use crate::discrepancy::DiscrepancyKind;
use crate::error::{Result, SbiError};
use crate::model_zoo::{density, simulate, Family, ModelSpec};
use crate::stats::{quantile_sorted, variance};

const QUAD_POINTS: usize = 4001;
const MMD_POINTS: usize = 801;
const SEARCH_POINTS: usize = 401;

/// Which population discrepancy to minimize.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Discrepancy(DiscrepancyKind),
    /// Kullback–Leibler, i.e. the limit of the MLE.
    Kl,
}

/// Trapezoid nodes on an interval covering the truth and the model at the
/// ends of the search range.
struct Quadrature {
    x: Vec<f64>,
    w: Vec<f64>,
}

impl Quadrature {
    fn new(lo: f64, hi: f64, n: usize) -> Self {
        let h = (hi - lo) / (n - 1) as f64;
        let x = (0..n).map(|i| lo + h * i as f64).collect();
        let w = (0..n)
            .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
            .collect();
        Self { x, w }
    }
}

fn support(models: &[ModelSpec]) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, m) in models.iter().enumerate() {
        let s = simulate(m, 100_000, 0x5eed_0000 + i as u64)?;
        let mut v = s.values_1d()?.to_vec();
        v.sort_by(f64::total_cmp);
        let sd = variance(&v).sqrt();
        lo = lo.min(quantile_sorted(&v, 1e-4) - 8.0 * sd);
        hi = hi.max(quantile_sorted(&v, 1.0 - 1e-4) + 8.0 * sd);
    }
    Ok((lo, hi))
}

fn dens(m: &ModelSpec, x: &[f64]) -> Result<Vec<f64>> {
    x.iter().map(|y| density(m, &[*y])).collect()
}

/// Population objective equal to the discrepancy up to a θ-free constant.
fn objective(
    target: Target,
    p: &[f64],
    q: &[f64],
    quad: &Quadrature,
    coarse: &(Quadrature, Vec<f64>),
    q_coarse: &[f64],
) -> f64 {
    let int = |f: &dyn Fn(usize) -> f64| (0..quad.x.len()).map(|i| quad.w[i] * f(i)).sum::<f64>();
    match target {
        Target::Kl => -int(&|i| {
            if p[i] > 0.0 {
                p[i] * q[i].max(1e-300).ln()
            } else {
                0.0
            }
        }),
        Target::Discrepancy(DiscrepancyKind::Hellinger) => -int(&|i| (p[i] * q[i]).sqrt()),
        Target::Discrepancy(DiscrepancyKind::PowerDivergence { gamma }) => {
            int(&|i| q[i].powf(1.0 + gamma))
                - (1.0 + 1.0 / gamma) * int(&|i| q[i].powf(gamma) * p[i])
        }
        Target::Discrepancy(DiscrepancyKind::Mmd { kernel })
        | Target::Discrepancy(DiscrepancyKind::MmdStudentized { kernel }) => {
            let (cq, p_coarse) = coarse;
            let n = cq.x.len();
            let mut total = 0.0;
            for i in 0..n {
                let mut inner = 0.0;
                for j in 0..n {
                    inner += cq.w[j]
                        * kernel.eval(&[cq.x[i]], &[cq.x[j]])
                        * (q_coarse[j] - 2.0 * p_coarse[j]);
                }
                total += cq.w[i] * q_coarse[i] * inner;
            }
            total
        }
    }
}

/// Argmin over θ ∈ [lo, hi] of the population discrepancy between `truth`
/// and the one-parameter `family`.
pub fn projection_1d(
    target: Target,
    truth: &ModelSpec,
    family: &Family,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    if family.dim() != 1 || truth.data_dim() != 1 {
        return Err(SbiError::Config(
            "projection oracle handles one free parameter and scalar data".into(),
        ));
    }
    if !(lo < hi) {
        return Err(SbiError::Domain("projection search needs lo < hi".into()));
    }
    let (ylo, yhi) = support(&[truth.clone(), family.at(&[lo])?, family.at(&[hi])?])?;
    let quad = Quadrature::new(ylo, yhi, QUAD_POINTS);
    let cq = Quadrature::new(ylo, yhi, MMD_POINTS);
    let p = dens(truth, &quad.x)?;
    let coarse = (cq, dens(truth, &Quadrature::new(ylo, yhi, MMD_POINTS).x)?);
    let is_mmd = matches!(
        target,
        Target::Discrepancy(DiscrepancyKind::Mmd { .. } | DiscrepancyKind::MmdStudentized { .. })
    );
    let f = |t: f64| -> Result<f64> {
        let m = family.at(&[t])?;
        let q = if is_mmd {
            Vec::new()
        } else {
            dens(&m, &quad.x)?
        };
        let qc = if is_mmd {
            dens(&m, &coarse.0.x)?
        } else {
            Vec::new()
        };
        Ok(objective(target, &p, &q, &quad, &coarse, &qc))
    };
    let step = (hi - lo) / (SEARCH_POINTS - 1) as f64;
    let mut best = (0, f64::INFINITY);
    for i in 0..SEARCH_POINTS {
        let v = f(lo + step * i as f64)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    // golden-section refinement within one step on either side
    let (mut a, mut b) = (
        (lo + step * best.0 as f64 - step).max(lo),
        (lo + step * best.0 as f64 + step).min(hi),
    );
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-7 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}
