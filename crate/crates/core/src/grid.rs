//! Axis-aligned boxes and regular lattices used by the sampling diagnostics
//! and the cubical complexes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Shape(format!(
                "box corners have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::Domain("box corners must be finite".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return Err(Error::Domain("box must have positive extent on every axis".into()));
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[-half_width, half_width]^dim`.
    pub fn cube(dim: usize, half_width: f64) -> Self {
        Self {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= *a && *v <= *b)
    }
}

/// A regular lattice of nodes over a box. Periodic axes identify `hi` with
/// `lo`, so they carry `cells` nodes instead of `cells + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub domain: BoxDomain,
    pub cells: Vec<usize>,
    pub periodic: Vec<bool>,
}

impl Lattice {
    pub fn new(domain: BoxDomain, cells: Vec<usize>, periodic: Vec<bool>) -> Result<Self> {
        let n = domain.dim();
        if cells.len() != n || periodic.len() != n {
            return Err(Error::Shape("lattice resolution does not match box dimension".into()));
        }
        if cells.iter().any(|&c| c == 0) {
            return Err(Error::Domain("lattice needs at least one cell per axis".into()));
        }
        Ok(Self {
            domain,
            cells,
            periodic,
        })
    }

    pub fn uniform(domain: BoxDomain, cells: usize) -> Result<Self> {
        let n = domain.dim();
        Self::new(domain, vec![cells; n], vec![false; n])
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.domain.hi[axis] - self.domain.lo[axis]) / self.cells[axis] as f64
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim()).map(|i| self.spacing(i)).fold(0.0, f64::max)
    }

    pub fn nodes_on_axis(&self, axis: usize) -> usize {
        if self.periodic[axis] {
            self.cells[axis]
        } else {
            self.cells[axis] + 1
        }
    }

    pub fn node_count(&self) -> usize {
        (0..self.dim()).map(|i| self.nodes_on_axis(i)).product()
    }

    /// Multi-index of a node; axis 0 varies fastest.
    pub fn node_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for axis in 0..self.dim() {
            let m = self.nodes_on_axis(axis);
            idx.push(flat % m);
            flat /= m;
        }
        idx
    }

    pub fn node_flat(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for axis in (0..self.dim()).rev() {
            flat = flat * self.nodes_on_axis(axis) + idx[axis];
        }
        flat
    }

    pub fn node_point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(axis, &i)| self.domain.lo[axis] + i as f64 * self.spacing(axis))
            .collect()
    }

    /// Moves `idx` by `offset` along `axis`, wrapping on periodic axes.
    /// Returns `None` when the step leaves a non-periodic box.
    pub fn shifted(&self, idx: &[usize], axis: usize, offset: isize) -> Option<Vec<usize>> {
        let m = self.nodes_on_axis(axis) as isize;
        let mut j = idx[axis] as isize + offset;
        if self.periodic[axis] {
            j = j.rem_euclid(m);
        } else if j < 0 || j >= m {
            return None;
        }
        let mut out = idx.to_vec();
        out[axis] = j as usize;
        Some(out)
    }
}
