//! Mod-2 relative homology of the cubical pair approximating
//! `(closure N_δ, ∂N_δ)` with `N_δ = {U > δ}`.
//!
//! Cells are addressed by doubled coordinates: an even coordinate is a node
//! position along that axis, an odd one an edge. The dimension of a cell is
//! the number of odd coordinates.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{MetricChart, MetricFamily};
use crate::grid::{BoxDomain, Lattice};
use crate::potential::PotentialSpec;

const IN_X: u8 = 1;
const IN_A: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BettiVector {
    pub ranks: Vec<usize>,
}

impl BettiVector {
    pub fn dim(&self) -> usize {
        self.ranks.len() - 1
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.ranks
            .iter()
            .enumerate()
            .map(|(k, &b)| if k % 2 == 0 { b as i64 } else { -(b as i64) })
            .sum()
    }
}

/// A cubical complex `X` (closure of the interior top cells) together with
/// the closed subcomplex `A` of cells lying on a non-interior top cell.
#[derive(Debug, Clone)]
pub struct CubicalPair {
    lattice: Lattice,
    /// Extent of the doubled lattice on each axis.
    extent: Vec<usize>,
    flags: Vec<u8>,
    interior_count: usize,
}

impl CubicalPair {
    /// Builds the pair from a mask over the top cells of `lattice`, indexed
    /// like lattice nodes with axis 0 fastest.
    pub fn from_mask(lattice: Lattice, mask: &[bool]) -> Result<Self> {
        let n = lattice.dim();
        let cells: Vec<usize> = (0..n).map(|a| lattice.cells[a]).collect();
        let top_count: usize = cells.iter().product();
        if mask.len() != top_count {
            return Err(Error::Shape(format!(
                "mask has {} entries, lattice has {top_count} top cells",
                mask.len()
            )));
        }
        if lattice.periodic.iter().zip(&cells).any(|(&p, &c)| p && c < 2) {
            return Err(Error::Homology("periodic axes need at least two cells".into()));
        }
        let extent: Vec<usize> = (0..n)
            .map(|a| if lattice.periodic[a] { 2 * cells[a] } else { 2 * cells[a] + 1 })
            .collect();
        let total: usize = extent.iter().product();
        let mut pair = Self {
            lattice,
            extent,
            flags: vec![0; total],
            interior_count: 0,
        };

        let mut top = vec![0usize; n];
        for (t, &inside) in mask.iter().enumerate() {
            let mut r = t;
            for a in 0..n {
                top[a] = 2 * (r % cells[a]) + 1;
                r /= cells[a];
            }
            if inside {
                pair.interior_count += 1;
                for a in 0..n {
                    if !pair.lattice.periodic[a] && (top[a] == 1 || top[a] == 2 * cells[a] - 1) {
                        return Err(Error::Homology(
                            "box too small: the region touches the bounding box".into(),
                        ));
                    }
                }
            }
            let bit = if inside { IN_X } else { IN_A };
            pair.for_each_face(&top, |flat, flags| flags[flat] |= bit);
        }
        // Only cells of X can belong to A.
        for f in pair.flags.iter_mut() {
            if *f & IN_X == 0 {
                *f = 0;
            }
        }
        Ok(pair)
    }

    /// Corner test: a top cell is interior when `U > δ` at all of its corners.
    pub fn build(spec: &PotentialSpec, chart: &MetricChart, delta: f64, bbox: &BoxDomain, grid_n: usize) -> Result<Self> {
        if grid_n < 2 {
            return Err(Error::Domain("grid_n must be at least 2".into()));
        }
        let lattice = match chart.family() {
            MetricFamily::FlatTorus { periods } => {
                let domain = BoxDomain::new(vec![0.0; periods.len()], periods.clone())?;
                Lattice::new(domain, vec![grid_n; periods.len()], vec![true; periods.len()])?
            }
            _ => Lattice::uniform(bbox.clone(), grid_n)?,
        };
        if lattice.dim() != spec.dim() {
            return Err(Error::Shape("grid dimension does not match potential".into()));
        }
        let n = lattice.dim();
        let values: Vec<f64> = (0..lattice.node_count())
            .map(|f| spec.value(&lattice.node_point(&lattice.node_index(f))))
            .collect();
        let cells = lattice.cells.clone();
        let top_count: usize = cells.iter().product();
        let mut mask = vec![false; top_count];
        let mut idx = vec![0usize; n];
        for (t, m) in mask.iter_mut().enumerate() {
            let mut r = t;
            for a in 0..n {
                idx[a] = r % cells[a];
                r /= cells[a];
            }
            *m = (0..1usize << n).all(|corner| {
                let mut c = idx.clone();
                for (a, ca) in c.iter_mut().enumerate() {
                    if corner >> a & 1 == 1 {
                        *ca = if lattice.periodic[a] { (*ca + 1) % cells[a] } else { *ca + 1 };
                    }
                }
                values[lattice.node_flat(&c)] > delta
            });
        }
        Self::from_mask(lattice, &mask)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn interior_cell_count(&self) -> usize {
        self.interior_count
    }

    fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = flat % self.extent[a];
            flat /= self.extent[a];
        }
    }

    fn flatten(&self, c: &[usize]) -> usize {
        c.iter().rev().zip(self.extent.iter().rev()).fold(0, |acc, (&x, &e)| acc * e + x)
    }

    fn wrap(&self, axis: usize, x: isize) -> usize {
        let e = self.extent[axis] as isize;
        if self.lattice.periodic[axis] {
            x.rem_euclid(e) as usize
        } else {
            x as usize
        }
    }

    /// Visits every face of the top cell `top`, itself included.
    fn for_each_face(&mut self, top: &[usize], mut f: impl FnMut(usize, &mut [u8])) {
        let n = top.len();
        let mut c = vec![0usize; n];
        for code in 0..3usize.pow(n as u32) {
            let mut r = code;
            for a in 0..n {
                let o = (r % 3) as isize - 1;
                r /= 3;
                c[a] = self.wrap(a, top[a] as isize + o);
            }
            let flat = self.flatten(&c);
            f(flat, &mut self.flags);
        }
    }

    fn cell_dim(c: &[usize]) -> usize {
        c.iter().filter(|&&x| x % 2 == 1).count()
    }

    /// Relative cells `X \ A` grouped by dimension, as doubled flat indices.
    fn relative_cells(&self) -> Vec<Vec<usize>> {
        let n = self.dim();
        let mut by_dim = vec![Vec::new(); n + 1];
        let mut c = vec![0usize; n];
        for (flat, &f) in self.flags.iter().enumerate() {
            if f == IN_X {
                self.unflatten(flat, &mut c);
                by_dim[Self::cell_dim(&c)].push(flat);
            }
        }
        by_dim
    }

    /// Number of cells of `X \ A` in each dimension.
    pub fn relative_cell_counts(&self) -> Vec<usize> {
        self.relative_cells().iter().map(Vec::len).collect()
    }

    /// Cells of `A` in each dimension.
    pub fn boundary_cell_counts(&self) -> Vec<usize> {
        let n = self.dim();
        let mut counts = vec![0; n + 1];
        let mut c = vec![0usize; n];
        for (flat, &f) in self.flags.iter().enumerate() {
            if f & IN_A != 0 {
                self.unflatten(flat, &mut c);
                counts[Self::cell_dim(&c)] += 1;
            }
        }
        counts
    }

    fn boundary_column(&self, flat: usize, rows: &HashMap<usize, u32>, c: &mut [usize]) -> Vec<u32> {
        self.unflatten(flat, c);
        let mut col = Vec::with_capacity(2 * c.len());
        for a in 0..c.len() {
            if c[a] % 2 == 0 {
                continue;
            }
            let orig = c[a];
            for o in [-1isize, 1] {
                c[a] = self.wrap(a, orig as isize + o);
                if let Some(&r) = rows.get(&self.flatten(c)) {
                    col.push(r);
                }
            }
            c[a] = orig;
        }
        col.sort_unstable();
        // A cell can meet the same face twice only on a two-cell periodic
        // axis, which is rejected at construction.
        col
    }
}

fn sym_diff(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Column reduction over 𝔽₂. Columns listed in `cleared` are known to reduce
/// to zero and are skipped. Returns the pivot rows of the nonzero columns.
fn reduce(columns: Vec<Vec<u32>>, cleared: &[bool]) -> Vec<u32> {
    let mut reduced: Vec<Vec<u32>> = Vec::with_capacity(columns.len());
    let mut owner: HashMap<u32, usize> = HashMap::new();
    let mut pivots = Vec::new();
    for (j, mut col) in columns.into_iter().enumerate() {
        if cleared.get(j).copied().unwrap_or(false) {
            reduced.push(Vec::new());
            continue;
        }
        while let Some(&low) = col.last() {
            match owner.get(&low) {
                Some(&k) => col = sym_diff(&col, &reduced[k]),
                None => break,
            }
        }
        if let Some(&low) = col.last() {
            owner.insert(low, j);
            pivots.push(low);
        }
        reduced.push(col);
    }
    pivots
}

/// Ranks of `H_k(X, A; 𝔽₂)` for `k = 0..n`.
pub fn relative_betti_mod2(pair: &CubicalPair) -> BettiVector {
    let n = pair.dim();
    let cells = pair.relative_cells();
    let rows: Vec<HashMap<usize, u32>> = cells
        .iter()
        .map(|v| v.iter().enumerate().map(|(i, &f)| (f, i as u32)).collect())
        .collect();
    // rank[k] = rank of ∂_k : C_k → C_{k-1}; ∂_0 and ∂_{n+1} vanish.
    let mut rank = vec![0usize; n + 2];
    let mut cleared: Vec<bool> = Vec::new();
    let mut scratch = vec![0usize; n];
    for k in (1..=n).rev() {
        let columns: Vec<Vec<u32>> = cells[k]
            .iter()
            .map(|&f| pair.boundary_column(f, &rows[k - 1], &mut scratch))
            .collect();
        let pivots = reduce(columns, &cleared);
        rank[k] = pivots.len();
        cleared = vec![false; cells[k - 1].len()];
        for p in pivots {
            cleared[p as usize] = true;
        }
    }
    let ranks = (0..=n)
        .map(|k| cells[k].len() - rank[k] - rank[k + 1])
        .collect();
    BettiVector { ranks }
}

/// The linking hypothesis holds when some relative Betti number in degrees
/// `1..=n` is nonzero.
pub fn check_lnk(betti: &BettiVector) -> bool {
    betti.ranks.iter().skip(1).any(|&b| b != 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_lattice(cells: usize, half: f64) -> Lattice {
        Lattice::uniform(BoxDomain::cube(2, half), cells).unwrap()
    }

    fn mask_from(lat: &Lattice, inside: impl Fn(&[f64]) -> bool) -> Vec<bool> {
        let cells = &lat.cells;
        let n = lat.dim();
        let top: usize = cells.iter().product();
        (0..top)
            .map(|t| {
                let mut r = t;
                let centre: Vec<f64> = (0..n)
                    .map(|a| {
                        let i = r % cells[a];
                        r /= cells[a];
                        lat.domain.lo[a] + (i as f64 + 0.5) * lat.spacing(a)
                    })
                    .collect();
                inside(&centre)
            })
            .collect()
    }

    fn betti(pair: &CubicalPair) -> Vec<usize> {
        relative_betti_mod2(pair).ranks
    }

    #[test]
    fn interval_rel_endpoints() {
        let lat = Lattice::uniform(BoxDomain::cube(1, 1.0), 10).unwrap();
        let mask: Vec<bool> = (0..10).map(|i| (2..8).contains(&i)).collect();
        let pair = CubicalPair::from_mask(lat, &mask).unwrap();
        assert_eq!(betti(&pair), vec![0, 1]);
        assert_eq!(pair.boundary_cell_counts(), vec![2, 0]);
    }

    #[test]
    fn single_square_is_a_disk() {
        let lat = square_lattice(3, 1.5);
        let mut mask = vec![false; 9];
        mask[4] = true;
        let pair = CubicalPair::from_mask(lat, &mask).unwrap();
        assert_eq!(betti(&pair), vec![0, 0, 1]);
        assert_eq!(pair.relative_cell_counts(), vec![0, 0, 1]);
    }

    #[test]
    fn disk_annulus_and_two_disks() {
        let lat = square_lattice(40, 2.0);
        let disk = mask_from(&lat, |q| q[0] * q[0] + q[1] * q[1] < 1.0);
        assert_eq!(betti(&CubicalPair::from_mask(lat.clone(), &disk).unwrap()), vec![0, 0, 1]);
        let ann = mask_from(&lat, |q| {
            let r2 = q[0] * q[0] + q[1] * q[1];
            (0.5..1.7).contains(&r2)
        });
        assert_eq!(betti(&CubicalPair::from_mask(lat.clone(), &ann).unwrap()), vec![0, 1, 1]);
        let two = mask_from(&lat, |q| {
            (q[0] - 0.9).powi(2) + q[1] * q[1] < 0.36 || (q[0] + 0.9).powi(2) + q[1] * q[1] < 0.36
        });
        assert_eq!(betti(&CubicalPair::from_mask(lat, &two).unwrap()), vec![0, 0, 2]);
    }

    #[test]
    fn whole_torus_has_no_boundary() {
        let lat = Lattice::new(BoxDomain::cube(2, 1.0), vec![6, 5], vec![true, true]).unwrap();
        let pair = CubicalPair::from_mask(lat, &[true; 30]).unwrap();
        assert_eq!(betti(&pair), vec![1, 2, 1]);
        // A band around one direction of the torus: S¹ × I rel ∂.
        let lat = Lattice::new(BoxDomain::cube(2, 1.0), vec![8, 8], vec![true, true]).unwrap();
        let band: Vec<bool> = (0..64).map(|t| (2..5).contains(&(t / 8))).collect();
        assert_eq!(betti(&CubicalPair::from_mask(lat, &band).unwrap()), vec![0, 1, 1]);
    }

    #[test]
    fn box_too_small() {
        let lat = square_lattice(4, 1.0);
        let err = CubicalPair::from_mask(lat, &[true; 16]).unwrap_err();
        assert!(matches!(err, Error::Homology(m) if m.contains("box too small")));
    }

    #[test]
    fn builtin_pairs() {
        let e1 = MetricChart::euclidean(1);
        let e2 = MetricChart::euclidean(2);
        let w = CubicalPair::build(&PotentialSpec::well1d(1.0), &e1, 0.1, &BoxDomain::cube(1, 2.0), 256).unwrap();
        assert_eq!(betti(&w), vec![0, 1]);
        assert_eq!(w.boundary_cell_counts(), vec![2, 0]);
        let h = CubicalPair::build(&PotentialSpec::harmonic2d(1.0), &e2, 0.1, &BoxDomain::cube(2, 2.0), 128).unwrap();
        assert_eq!(betti(&h), vec![0, 0, 1]);
        let a = CubicalPair::build(&PotentialSpec::annulus2d(0.0), &e2, 0.05, &BoxDomain::cube(2, 3.0), 128).unwrap();
        assert_eq!(betti(&a), vec![0, 1, 1]);
    }

    #[test]
    fn check_lnk_examples() {
        assert!(check_lnk(&BettiVector { ranks: vec![0, 1] }));
        assert!(check_lnk(&BettiVector { ranks: vec![0, 0, 1] }));
        assert!(!check_lnk(&BettiVector { ranks: vec![1, 0, 0] }));
    }

    #[test]
    fn euler_characteristic_matches_cell_counts() {
        let lat = square_lattice(32, 2.0);
        let ann = mask_from(&lat, |q| {
            let r2 = q[0] * q[0] + q[1] * q[1];
            (0.4..1.9).contains(&r2) && q[0] > -1.2
        });
        let pair = CubicalPair::from_mask(lat, &ann).unwrap();
        let b = relative_betti_mod2(&pair);
        let counts = pair.relative_cell_counts();
        let chi: i64 = counts
            .iter()
            .enumerate()
            .map(|(k, &c)| if k % 2 == 0 { c as i64 } else { -(c as i64) })
            .sum();
        assert_eq!(b.euler_characteristic(), chi);
    }
}
