use serde::{Deserialize, Serialize};

use crate::error::{Result, SbiError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Observed,
    SimulatedAt(Vec<f64>),
    Reference,
    Resampled,
}

/// An ordered collection of `n` points in `R^dim`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    points: Vec<f64>,
    dim: usize,
    pub provenance: Provenance,
    pub seed: u64,
}

impl Sample {
    pub fn new(points: Vec<f64>, dim: usize, provenance: Provenance, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(SbiError::Degenerate(
                "sample dimension must be positive".into(),
            ));
        }
        if points.is_empty() || points.len() % dim != 0 {
            return Err(SbiError::Degenerate(format!(
                "sample needs n >= 1 rows of width {dim}, got {} values",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(SbiError::Degenerate(format!(
                "non-finite entry at flat index {i}"
            )));
        }
        Ok(Self {
            points,
            dim,
            provenance,
            seed,
        })
    }

    /// One-dimensional observed sample.
    pub fn observed(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 1, Provenance::Observed, 0)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Flat row-major storage.
    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    /// Rows selected by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Sample {
        let mut pts = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            pts.extend_from_slice(self.point(i));
        }
        Sample {
            points: pts,
            dim: self.dim,
            provenance: self.provenance.clone(),
            seed: self.seed,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Values of a one-dimensional sample.
    pub fn values_1d(&self) -> Result<&[f64]> {
        if self.dim != 1 {
            return Err(SbiError::Dimension {
                expected: 1,
                got: self.dim,
            });
        }
        Ok(&self.points)
    }

    pub fn sorted_1d(&self) -> Result<Vec<f64>> {
        let mut v = self.values_1d()?.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(v)
    }

    pub fn check_same_dim(&self, other: &Sample) -> Result<()> {
        if self.dim != other.dim {
            return Err(SbiError::Dimension {
                expected: self.dim,
                got: other.dim,
            });
        }
        Ok(())
    }
}
