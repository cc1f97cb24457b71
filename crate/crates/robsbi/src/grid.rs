//! Parameter grids: lattices over boxes and draws from a uniform prior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SbiError};
use crate::rng::rng_from_seed;

/// Points in Θ, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub points: Vec<f64>,
}

/// Axis-aligned box `lo ≤ θ ≤ hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(SbiError::Dimension {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(SbiError::Domain("box needs lo < hi on every axis".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(t, (a, b))| *t >= *a && *t <= *b)
    }
}

impl Grid {
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(SbiError::Degenerate(
                "grid needs at least one point of positive dimension".into(),
            ));
        }
        Ok(Self { dim, points })
    }

    /// `n` evenly spaced points on [lo, hi].
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(SbiError::Degenerate("grid needs at least one point".into()));
        }
        if n == 1 {
            return Self::new(vec![lo], 1);
        }
        Self::new(
            (0..n)
                // the last point is hi exactly, not lo + (hi − lo) rounded
                .map(|i| {
                    if i + 1 == n {
                        hi
                    } else {
                        lo + (hi - lo) * i as f64 / (n - 1) as f64
                    }
                })
                .collect(),
            1,
        )
    }

    /// Cartesian lattice with `per_axis[a]` points on axis a (first axis slowest).
    pub fn lattice(b: &ThetaBox, per_axis: &[usize]) -> Result<Self> {
        if per_axis.len() != b.dim() {
            return Err(SbiError::Dimension {
                expected: b.dim(),
                got: per_axis.len(),
            });
        }
        let axes: Vec<Vec<f64>> = (0..b.dim())
            .map(|a| Self::linspace(b.lo[a], b.hi[a], per_axis[a]).map(|g| g.points))
            .collect::<Result<_>>()?;
        let total: usize = per_axis.iter().product();
        let mut points = Vec::with_capacity(total * b.dim());
        for flat in 0..total {
            let mut rem = flat;
            let mut row = vec![0.0; b.dim()];
            for a in (0..b.dim()).rev() {
                row[a] = axes[a][rem % per_axis[a]];
                rem /= per_axis[a];
            }
            points.extend(row);
        }
        Self::new(points, b.dim())
    }

    /// `n` independent uniform draws over the box.
    pub fn uniform(b: &ThetaBox, n: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let mut points = Vec::with_capacity(n * b.dim());
        for _ in 0..n {
            for a in 0..b.dim() {
                points.push(rng.random_range(b.lo[a]..=b.hi[a]));
            }
        }
        Self::new(points, b.dim())
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    /// Index of the point nearest to `theta` (Euclidean).
    pub fn nearest(&self, theta: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (j, p) in self.rows().enumerate() {
            let d: f64 = p.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    }

    /// Smallest positive gap between sorted coordinates along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        let mut v: Vec<f64> = self.rows().map(|p| p[axis]).collect();
        v.sort_by(f64::total_cmp);
        v.windows(2)
            .map(|w| w[1] - w[0])
            .filter(|d| *d > 0.0)
            .fold(f64::INFINITY, f64::min)
    }
}
