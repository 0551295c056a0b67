//! Lattice boxes, circle grids and the enumerated discrete state space.
//!
//! A configuration assigns one angle in `[0, 2π)` to every site of the box
//! `Λ_n = [-n, n]^d`. Sites are ordered lexicographically on their lattice
//! coordinates, and a state index is the base-`M` number whose digits are the
//! per-site grid indices, first site most significant.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of enumerated states.
pub const DEFAULT_STATE_CAP: usize = 10_000_000;

/// Sub-cap below which dense linear algebra is used.
pub const DEFAULT_DENSE_CAP: usize = 5_000;

/// How coordinates outside the box are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Closure {
    /// Out-of-box coordinates are pinned at angle 0.
    Frozen,
    /// Coordinates wrap around the box.
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub dim: usize,
    pub half_width: usize,
    pub closure: Closure,
}

impl LatticeSpec {
    pub fn new(dim: usize, half_width: usize, closure: Closure) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput(
                "lattice dimension must be positive".into(),
            ));
        }
        Ok(Self {
            dim,
            half_width,
            closure,
        })
    }

    /// A single site at the origin.
    pub fn single_site() -> Self {
        Self {
            dim: 1,
            half_width: 0,
            closure: Closure::Frozen,
        }
    }

    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    pub fn site_count(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    /// Sites in lexicographic order of their coordinates.
    pub fn sites(&self) -> Vec<Vec<i64>> {
        let n = self.half_width as i64;
        let side = self.side();
        (0..self.site_count())
            .map(|mut k| {
                let mut point = vec![0i64; self.dim];
                for axis in (0..self.dim).rev() {
                    point[axis] = (k % side) as i64 - n;
                    k /= side;
                }
                point
            })
            .collect()
    }

    /// Position of `point` in the site order, after applying the closure.
    /// `None` means the coordinate is frozen.
    pub fn locate(&self, point: &[i64]) -> Option<usize> {
        let n = self.half_width as i64;
        let side = self.side() as i64;
        let mut index = 0usize;
        for &x in point {
            let x = match self.closure {
                Closure::Frozen => {
                    if x < -n || x > n {
                        return None;
                    }
                    x
                }
                Closure::Periodic => (x + n).rem_euclid(side) - n,
            };
            index = index * side as usize + (x + n) as usize;
        }
        Some(index)
    }

    pub fn contains(&self, point: &[i64]) -> bool {
        let n = self.half_width as i64;
        point.iter().all(|&x| (-n..=n).contains(&x))
    }

    /// Sup-norm distance between two sites, measured around the box for
    /// periodic closure.
    pub fn distance(&self, p: &[i64], q: &[i64]) -> i64 {
        let side = self.side() as i64;
        p.iter()
            .zip(q)
            .map(|(&x, &y)| {
                let d = (x - y).abs();
                match self.closure {
                    Closure::Frozen => d,
                    Closure::Periodic => {
                        let d = d.rem_euclid(side);
                        d.min(side - d)
                    }
                }
            })
            .max()
            .unwrap_or(0)
    }

    /// In-box site indices within distance `range` of `site`.
    pub fn neighbourhood(&self, site: &[i64], range: usize) -> Vec<usize> {
        self.sites()
            .iter()
            .enumerate()
            .filter(|(_, q)| self.distance(site, q) <= range as i64)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Uniform grid of `points` angles on the circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
}

impl GridSpec {
    pub fn new(points: usize) -> Result<Self> {
        if points < 4 || points % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "grid needs an even number of points >= 4, got {points}"
            )));
        }
        Ok(Self { points })
    }

    pub fn mesh(&self) -> f64 {
        2.0 * PI / self.points as f64
    }

    pub fn angle(&self, k: usize) -> f64 {
        2.0 * PI * (k % self.points) as f64 / self.points as f64
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.points).map(|k| self.angle(k)).collect()
    }
}

/// Read-only view of a configuration: in-box angles plus the closure rule.
#[derive(Debug, Clone, Copy)]
pub struct Configuration<'a> {
    lattice: &'a LatticeSpec,
    angles: &'a [f64],
}

impl<'a> Configuration<'a> {
    pub fn new(lattice: &'a LatticeSpec, angles: &'a [f64]) -> Self {
        debug_assert_eq!(angles.len(), lattice.site_count());
        Self { lattice, angles }
    }

    pub fn lattice(&self) -> &'a LatticeSpec {
        self.lattice
    }

    pub fn angles(&self) -> &'a [f64] {
        self.angles
    }

    /// Angle at an arbitrary lattice point.
    pub fn angle(&self, point: &[i64]) -> f64 {
        match self.lattice.locate(point) {
            Some(k) => self.angles[k],
            None => 0.0,
        }
    }

    /// Angle at `site + offset`.
    pub fn angle_at_offset(&self, site: &[i64], offset: &[i64]) -> f64 {
        let point: Vec<i64> = site.iter().zip(offset).map(|(x, o)| x + o).collect();
        self.angle(&point)
    }
}

/// Enumerated state space of a lattice box on a circle grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    lattice: LatticeSpec,
    grid: GridSpec,
    sites: Vec<Vec<i64>>,
    strides: Vec<usize>,
    count: usize,
}

/// Enumerates the states of `lattice` on `grid`, rejecting spaces above `cap`.
pub fn enumerate_states(lattice: &LatticeSpec, grid: &GridSpec, cap: usize) -> Result<StateSpace> {
    let sites = lattice.sites();
    let count = (grid.points as u128)
        .checked_pow(sites.len() as u32)
        .unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(Error::StateSpaceTooLarge { count, cap });
    }
    let count = count as usize;
    let mut strides = vec![1usize; sites.len()];
    for s in (0..sites.len().saturating_sub(1)).rev() {
        strides[s] = strides[s + 1] * grid.points;
    }
    Ok(StateSpace {
        lattice: lattice.clone(),
        grid: *grid,
        sites,
        strides,
        count,
    })
}

impl StateSpace {
    pub fn new(lattice: &LatticeSpec, grid: &GridSpec) -> Result<Self> {
        enumerate_states(lattice, grid, DEFAULT_STATE_CAP)
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn sites(&self) -> &[Vec<i64>] {
        &self.sites
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn encode(&self, digits: &[usize]) -> usize {
        digits
            .iter()
            .zip(&self.strides)
            .map(|(d, s)| (d % self.grid.points) * s)
            .sum()
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        let mut digits = vec![0; self.sites.len()];
        self.decode_into(index, &mut digits);
        digits
    }

    pub fn decode_into(&self, index: usize, digits: &mut [usize]) {
        for (d, s) in digits.iter_mut().zip(&self.strides) {
            *d = (index / s) % self.grid.points;
        }
    }

    pub fn digit(&self, index: usize, site: usize) -> usize {
        (index / self.strides[site]) % self.grid.points
    }

    /// Index of the state obtained by moving `site` one grid step up or down.
    pub fn shift(&self, index: usize, site: usize, up: bool) -> usize {
        let m = self.grid.points;
        let d = self.digit(index, site);
        let nd = if up { (d + 1) % m } else { (d + m - 1) % m };
        index - d * self.strides[site] + nd * self.strides[site]
    }

    pub fn angles_into(&self, index: usize, angles: &mut [f64]) {
        for (s, a) in angles.iter_mut().enumerate() {
            *a = self.grid.angle(self.digit(index, s));
        }
    }

    pub fn angles(&self, index: usize) -> Vec<f64> {
        let mut a = vec![0.0; self.sites.len()];
        self.angles_into(index, &mut a);
        a
    }
}
