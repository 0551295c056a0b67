//! Finite-range local potentials and the box Hamiltonian built from them.

use std::fmt::Debug;
use std::sync::Arc;

use crate::lattice::{Closure, Configuration, LatticeSpec};

/// Step used by the default central-difference partial derivative.
const PARTIAL_STEP: f64 = 1e-5;

/// A family of local potentials `Φ_j`, one per lattice point `j`.
pub trait Potential: Send + Sync + Debug {
    /// `Φ_j` only reads coordinates within this distance of `j`.
    fn range(&self) -> usize;

    fn value(&self, center: &[i64], cfg: &Configuration<'_>) -> f64;

    /// `∂Φ_center / ∂η_site` for the in-box site with index `site`.
    ///
    /// The default is a central difference; built-ins override it with the
    /// analytic derivative.
    fn partial(&self, center: &[i64], site: usize, cfg: &Configuration<'_>) -> f64 {
        let mut angles = cfg.angles().to_vec();
        let base = angles[site];
        angles[site] = base + PARTIAL_STEP;
        let up = self.value(center, &Configuration::new(cfg.lattice(), &angles));
        angles[site] = base - PARTIAL_STEP;
        let dn = self.value(center, &Configuration::new(cfg.lattice(), &angles));
        (up - dn) / (2.0 * PARTIAL_STEP)
    }

    fn describe(&self) -> String;
}

/// `Φ ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FreePotential;

impl Potential for FreePotential {
    fn range(&self) -> usize {
        0
    }

    fn value(&self, _: &[i64], _: &Configuration<'_>) -> f64 {
        0.0
    }

    fn partial(&self, _: &[i64], _: usize, _: &Configuration<'_>) -> f64 {
        0.0
    }

    fn describe(&self) -> String {
        "free".into()
    }
}

/// `Φ_j = β cos(η_j)`: independent sites.
#[derive(Debug, Clone, Copy)]
pub struct OnSiteCosine {
    pub beta: f64,
}

impl Potential for OnSiteCosine {
    fn range(&self) -> usize {
        0
    }

    fn value(&self, center: &[i64], cfg: &Configuration<'_>) -> f64 {
        self.beta * cfg.angle(center).cos()
    }

    fn partial(&self, center: &[i64], site: usize, cfg: &Configuration<'_>) -> f64 {
        if cfg.lattice().locate(center) == Some(site) {
            -self.beta * cfg.angle(center).sin()
        } else {
            0.0
        }
    }

    fn describe(&self) -> String {
        format!("on-site cosine, beta = {}", self.beta)
    }
}

/// `Φ_j = β Σ_axis cos(η_j − η_{j+e_axis})`: nearest-neighbour coupling.
#[derive(Debug, Clone, Copy)]
pub struct NeighbourCosine {
    pub beta: f64,
}

impl Potential for NeighbourCosine {
    fn range(&self) -> usize {
        1
    }

    fn value(&self, center: &[i64], cfg: &Configuration<'_>) -> f64 {
        let x = cfg.angle(center);
        (0..center.len())
            .map(|axis| {
                let mut q = center.to_vec();
                q[axis] += 1;
                self.beta * (x - cfg.angle(&q)).cos()
            })
            .sum()
    }

    fn partial(&self, center: &[i64], site: usize, cfg: &Configuration<'_>) -> f64 {
        let lattice = cfg.lattice();
        let here = lattice.locate(center);
        let x = cfg.angle(center);
        (0..center.len())
            .map(|axis| {
                let mut q = center.to_vec();
                q[axis] += 1;
                let there = lattice.locate(&q);
                let weight = (here == Some(site)) as i32 - (there == Some(site)) as i32;
                if weight == 0 {
                    0.0
                } else {
                    -self.beta * (x - cfg.angle(&q)).sin() * weight as f64
                }
            })
            .sum()
    }

    fn describe(&self) -> String {
        format!("nearest-neighbour cosine, beta = {}", self.beta)
    }
}

/// `H = Σ_j Φ_j` over every center whose potential touches the box.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    lattice: LatticeSpec,
    potential: Arc<dyn Potential>,
    centers: Vec<Vec<i64>>,
    /// For each in-box site, the centers whose potential can depend on it.
    relevant: Vec<Vec<usize>>,
}

impl Hamiltonian {
    pub fn new(lattice: &LatticeSpec, potential: Arc<dyn Potential>) -> Self {
        let range = potential.range();
        let centers = match lattice.closure {
            Closure::Periodic => lattice.sites(),
            Closure::Frozen => {
                let extended = LatticeSpec {
                    dim: lattice.dim,
                    half_width: lattice.half_width + range,
                    closure: Closure::Frozen,
                };
                extended
                    .sites()
                    .into_iter()
                    .filter(|c| {
                        lattice
                            .sites()
                            .iter()
                            .any(|s| lattice.distance(c, s) <= range as i64)
                    })
                    .collect()
            }
        };
        let relevant = lattice
            .sites()
            .iter()
            .map(|s| {
                centers
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| lattice.distance(c, s) <= range as i64)
                    .map(|(k, _)| k)
                    .collect()
            })
            .collect();
        Self {
            lattice: lattice.clone(),
            potential,
            centers,
            relevant,
        }
    }

    pub fn potential(&self) -> &Arc<dyn Potential> {
        &self.potential
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn value(&self, cfg: &Configuration<'_>) -> f64 {
        self.centers
            .iter()
            .map(|c| self.potential.value(c, cfg))
            .sum()
    }

    /// `∂H/∂η_site`.
    pub fn gradient(&self, site: usize, cfg: &Configuration<'_>) -> f64 {
        self.relevant[site]
            .iter()
            .map(|&k| self.potential.partial(&self.centers[k], site, cfg))
            .sum()
    }
}
