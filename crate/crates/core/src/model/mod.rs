//! Coefficient fields, diffusion specs and the interacting Brownian motions
//! model.
//!
//! Generators take the form `L = Σ_i (a_i/2 ∂_i² + b_i ∂_i)` throughout, so
//! the interacting Brownian motions model uses `a_i ≡ 2` and `b_i = ∂_i H`.

pub mod config;
pub mod potential;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{enumerate_states, Configuration, GridSpec, LatticeSpec, StateSpace};

pub use potential::{FreePotential, Hamiltonian, NeighbourCosine, OnSiteCosine, Potential};

/// Per-site evaluator `(site coordinates, configuration) -> value`.
pub type SiteFn = Arc<dyn Fn(&[i64], &Configuration<'_>) -> f64 + Send + Sync>;

/// Above this many states, sums over sites are bounded site by site instead
/// of maximized over the full product space.
const EXACT_SUP_CAP: usize = 1_000_000;

/// Largest local neighbourhood enumerated for site-wise extremes.
const LOCAL_ENUMERATION_CAP: usize = 10_000_000;

/// Diffusion and drift coefficients `a_i`, `b_i` of finite range.
#[derive(Clone)]
pub struct CoefficientField {
    pub range: usize,
    pub diffusion: SiteFn,
    pub drift: SiteFn,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("range", &self.range)
            .finish_non_exhaustive()
    }
}

/// Coefficients `c_i` of a diagonal first-order operator `A = Σ c_i ∂_i`.
#[derive(Clone)]
pub struct PerturbationField {
    pub range: usize,
    pub coefficient: SiteFn,
    pub label: String,
}

impl fmt::Debug for PerturbationField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PerturbationField")
            .field("range", &self.range)
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

impl PerturbationField {
    /// `A = ∂_0`.
    pub fn origin_derivative() -> Self {
        Self {
            range: 0,
            coefficient: Arc::new(|site, _| {
                if site.iter().all(|&x| x == 0) {
                    1.0
                } else {
                    0.0
                }
            }),
            label: "d0".into(),
        }
    }

    /// `c_i ≡ value` on every site.
    pub fn constant(value: f64) -> Self {
        Self {
            range: 0,
            coefficient: Arc::new(move |_, _| value),
            label: format!("constant {value}"),
        }
    }

    /// `c_0(η) = sin(η_0)`, zero elsewhere.
    pub fn origin_sine() -> Self {
        Self {
            range: 0,
            coefficient: Arc::new(|site, cfg| {
                if site.iter().all(|&x| x == 0) {
                    cfg.angle(site).sin()
                } else {
                    0.0
                }
            }),
            label: "sin0".into(),
        }
    }

    pub fn zero() -> Self {
        Self {
            range: 0,
            coefficient: Arc::new(|_, _| 0.0),
            label: "zero".into(),
        }
    }
}

/// Full problem definition: geometry, mesh and coefficients.
#[derive(Clone, Debug)]
pub struct DiffusionSpec {
    pub lattice: LatticeSpec,
    pub grid: GridSpec,
    pub coefficients: CoefficientField,
    /// Present for reversible built-ins, where `ν ∝ e^{H}` in the continuum.
    pub hamiltonian: Option<Arc<Hamiltonian>>,
    pub perturbation: Option<PerturbationField>,
    pub label: String,
}

impl DiffusionSpec {
    pub fn state_space(&self) -> Result<StateSpace> {
        StateSpace::new(&self.lattice, &self.grid)
    }

    pub fn with_perturbation(mut self, perturbation: PerturbationField) -> Self {
        self.perturbation = Some(perturbation);
        self
    }

    /// Same coefficients on a different box; used for truncation studies.
    pub fn with_lattice(&self, lattice: LatticeSpec) -> Self {
        let mut spec = self.clone();
        if let Some(h) = &self.hamiltonian {
            let rebuilt = build_ibm_model(h.potential().clone(), &lattice, &self.grid);
            spec.coefficients = rebuilt.coefficients;
            spec.hamiltonian = rebuilt.hamiltonian;
        }
        spec.lattice = lattice;
        spec
    }
}

/// Interacting Brownian motions: `a_i ≡ 2`, `b_i = ∂_i H` with `H = Σ Φ_j`.
pub fn build_ibm_model(
    potential: Arc<dyn Potential>,
    lattice: &LatticeSpec,
    grid: &GridSpec,
) -> DiffusionSpec {
    let range = potential.range();
    let label = format!("ibm ({})", potential.describe());
    let hamiltonian = Arc::new(Hamiltonian::new(lattice, potential));
    let h = hamiltonian.clone();
    let lat = lattice.clone();
    let drift: SiteFn = Arc::new(move |site, cfg| match lat.locate(site) {
        Some(k) => h.gradient(k, cfg),
        None => 0.0,
    });
    DiffusionSpec {
        lattice: lattice.clone(),
        grid: *grid,
        coefficients: CoefficientField {
            range: 2 * range,
            diffusion: Arc::new(|_, _| 2.0),
            drift,
        },
        hamiltonian: Some(hamiltonian),
        perturbation: None,
        label,
    }
}

/// Non-reversible custom model `a_i = a0 + a1 cos η_i`, `b_i = b0 + b1 sin η_i`.
pub fn build_custom_model(
    lattice: &LatticeSpec,
    grid: &GridSpec,
    a: (f64, f64),
    b: (f64, f64),
) -> DiffusionSpec {
    DiffusionSpec {
        lattice: lattice.clone(),
        grid: *grid,
        coefficients: CoefficientField {
            range: 0,
            diffusion: Arc::new(move |site, cfg| a.0 + a.1 * cfg.angle(site).cos()),
            drift: Arc::new(move |site, cfg| b.0 + b.1 * cfg.angle(site).sin()),
        },
        hamiltonian: None,
        perturbation: None,
        label: format!(
            "custom a = {} + {} cos, b = {} + {} sin",
            a.0, a.1, b.0, b.1
        ),
    }
}

/// Pure Laplacian `Σ ∂_i²`.
pub fn laplacian_model(lattice: &LatticeSpec, grid: &GridSpec) -> DiffusionSpec {
    let mut spec = build_ibm_model(Arc::new(FreePotential), lattice, grid);
    spec.label = "laplacian".into();
    spec
}

/// Calls `visit` with every configuration of the in-box sites within `range`
/// of `site`, all other sites held at angle 0.
fn for_each_local_configuration(
    lattice: &LatticeSpec,
    grid: &GridSpec,
    site: &[i64],
    range: usize,
    mut visit: impl FnMut(&Configuration<'_>),
) -> Result<()> {
    let local = lattice.neighbourhood(site, range);
    let m = grid.points;
    let count = (m as u128)
        .checked_pow(local.len() as u32)
        .unwrap_or(u128::MAX);
    if count > LOCAL_ENUMERATION_CAP as u128 {
        return Err(Error::StateSpaceTooLarge {
            count,
            cap: LOCAL_ENUMERATION_CAP,
        });
    }
    let mut angles = vec![0.0; lattice.site_count()];
    let mut digits = vec![0usize; local.len()];
    for _ in 0..count {
        for (d, &s) in digits.iter().zip(&local) {
            angles[s] = grid.angle(*d);
        }
        visit(&Configuration::new(lattice, &angles));
        for d in digits.iter_mut() {
            *d += 1;
            if *d < m {
                break;
            }
            *d = 0;
        }
    }
    Ok(())
}

/// `(min, max)` of `f(site, η)` over sites and grid states, using that `f`
/// has finite `range`.
pub fn site_extremes(
    f: &SiteFn,
    range: usize,
    lattice: &LatticeSpec,
    grid: &GridSpec,
) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for site in lattice.sites() {
        for_each_local_configuration(lattice, grid, &site, range, |cfg| {
            let v = f(&site, cfg);
            lo = lo.min(v);
            hi = hi.max(v);
        })?;
    }
    Ok((lo, hi))
}

/// `a = min_{i,η} a_i(η)`; fails unless strictly positive.
pub fn compute_ellipticity_bound(
    a: &CoefficientField,
    lattice: &LatticeSpec,
    grid: &GridSpec,
) -> Result<f64> {
    let (min, _) = site_extremes(&a.diffusion, a.range, lattice, grid)?;
    if min <= 0.0 || min.is_nan() {
        return Err(Error::NotElliptic { min });
    }
    Ok(min)
}

/// `max_{i,η} |b_i(η)|`.
pub fn compute_drift_bound(
    a: &CoefficientField,
    lattice: &LatticeSpec,
    grid: &GridSpec,
) -> Result<f64> {
    let (lo, hi) = site_extremes(&a.drift, a.range, lattice, grid)?;
    Ok(lo.abs().max(hi.abs()))
}

/// `max_{i,η} |c_i(η)|`.
pub fn compute_perturbation_bound(
    c: &PerturbationField,
    lattice: &LatticeSpec,
    grid: &GridSpec,
) -> Result<f64> {
    let (lo, hi) = site_extremes(&c.coefficient, c.range, lattice, grid)?;
    Ok(lo.abs().max(hi.abs()))
}

/// `C₀ = sqrt(max_η Σ_i c_i(η)²)`.
///
/// Exact over the full state space up to a million states; above that the
/// site-wise bound `Σ_i max_η c_i²` is returned, which still dominates
/// `Σ_i c_i(η)²` at every state.
pub fn compute_c0(c: &PerturbationField, lattice: &LatticeSpec, grid: &GridSpec) -> Result<f64> {
    if let Ok(space) = enumerate_states(lattice, grid, EXACT_SUP_CAP) {
        let sites = space.sites().to_vec();
        let max = (0..space.len())
            .into_par_iter()
            .map(|i| {
                let angles = space.angles(i);
                let cfg = Configuration::new(lattice, &angles);
                sites
                    .iter()
                    .map(|s| (c.coefficient)(s, &cfg).powi(2))
                    .sum::<f64>()
            })
            .reduce(|| 0.0, f64::max);
        return Ok(max.sqrt());
    }
    let mut total = 0.0;
    for site in lattice.sites() {
        let mut best = 0.0f64;
        for_each_local_configuration(lattice, grid, &site, c.range, |cfg| {
            best = best.max((c.coefficient)(&site, cfg).powi(2));
        })?;
        total += best;
    }
    Ok(total.sqrt())
}

/// `osc(H) = max H − min H` over grid states.
///
/// Exact up to a million states, otherwise bounded by the sum of the local
/// oscillations of the individual potentials.
pub fn hamiltonian_oscillation(h: &Hamiltonian, grid: &GridSpec) -> Result<f64> {
    let lattice = h.lattice();
    if let Ok(space) = enumerate_states(lattice, grid, EXACT_SUP_CAP) {
        let (lo, hi) = (0..space.len())
            .into_par_iter()
            .map(|i| {
                let angles = space.angles(i);
                let v = h.value(&Configuration::new(lattice, &angles));
                (v, v)
            })
            .reduce(
                || (f64::INFINITY, f64::NEG_INFINITY),
                |a, b| (a.0.min(b.0), a.1.max(b.1)),
            );
        return Ok(hi - lo);
    }
    let potential = h.potential().clone();
    let f: SiteFn = Arc::new(move |site, cfg| potential.value(site, cfg));
    let mut total = 0.0;
    for site in lattice.sites() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for_each_local_configuration(lattice, grid, &site, h.potential().range(), |cfg| {
            let v = f(&site, cfg);
            lo = lo.min(v);
            hi = hi.max(v);
        })?;
        total += hi - lo;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Closure;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain(n: usize, closure: Closure) -> LatticeSpec {
        LatticeSpec::new(1, n, closure).unwrap()
    }

    #[test]
    fn c0_examples() {
        let g8 = GridSpec::new(8).unwrap();
        let single = LatticeSpec::single_site();
        let c0 = compute_c0(&PerturbationField::origin_derivative(), &single, &g8).unwrap();
        assert_eq!(c0, 1.0);

        let three = chain(1, Closure::Frozen);
        let c0 = compute_c0(&PerturbationField::constant(1.0), &three, &g8).unwrap();
        assert!((c0 - 3f64.sqrt()).abs() < 1e-15);

        let brute = g8
            .angles()
            .iter()
            .map(|x| x.sin().abs())
            .fold(0.0, f64::max);
        let c0 = compute_c0(&PerturbationField::origin_sine(), &single, &g8).unwrap();
        assert_eq!(c0, brute);
    }

    #[test]
    fn ellipticity_examples() {
        let g8 = GridSpec::new(8).unwrap();
        let single = LatticeSpec::single_site();
        let lap = laplacian_model(&single, &g8);
        assert_eq!(
            compute_ellipticity_bound(&lap.coefficients, &single, &g8).unwrap(),
            2.0
        );

        let varying = build_custom_model(&single, &g8, (2.0, 1.0), (0.0, 0.0));
        let a = compute_ellipticity_bound(&varying.coefficients, &single, &g8).unwrap();
        assert!((a - 1.0).abs() < 1e-15);

        let bad = build_custom_model(&single, &g8, (0.0, 1.0), (0.0, 0.0));
        assert!(matches!(
            compute_ellipticity_bound(&bad.coefficients, &single, &g8),
            Err(Error::NotElliptic { .. })
        ));
    }

    #[test]
    fn ibm_drift_examples() {
        let g8 = GridSpec::new(8).unwrap();
        let single = LatticeSpec::single_site();
        let free = laplacian_model(&single, &g8);
        let cfg_angles = [1.3];
        let cfg = Configuration::new(&single, &cfg_angles);
        assert_eq!((free.coefficients.drift)(&[0], &cfg), 0.0);

        let beta = 0.8;
        let spec = build_ibm_model(Arc::new(OnSiteCosine { beta }), &single, &g8);
        assert_eq!((spec.coefficients.drift)(&[0], &cfg), -beta * 1.3f64.sin());
        assert_eq!((spec.coefficients.diffusion)(&[0], &cfg), 2.0);
    }

    #[test]
    fn ibm_drift_matches_grid_difference_of_h_at_second_order() {
        // Analytic b_i against (H(η + h e_i) − H(η − h e_i)) / 2h at two meshes.
        let lattice = chain(1, Closure::Frozen);
        let mut errors = Vec::new();
        for m in [16usize, 32] {
            let grid = GridSpec::new(m).unwrap();
            let spec = build_ibm_model(Arc::new(NeighbourCosine { beta: 0.5 }), &lattice, &grid);
            let h = spec.hamiltonian.clone().unwrap();
            let space = spec.state_space().unwrap();
            let mut worst = 0.0f64;
            for idx in 0..space.len() {
                let angles = space.angles(idx);
                let cfg = Configuration::new(&lattice, &angles);
                for (s, site) in lattice.sites().iter().enumerate() {
                    let b = (spec.coefficients.drift)(site, &cfg);
                    let up = space.angles(space.shift(idx, s, true));
                    let dn = space.angles(space.shift(idx, s, false));
                    let mut up = up;
                    let mut dn = dn;
                    // undo the wrap so the difference quotient sees a step of exactly h
                    up[s] = angles[s] + grid.mesh();
                    dn[s] = angles[s] - grid.mesh();
                    let hu = h.value(&Configuration::new(&lattice, &up));
                    let hd = h.value(&Configuration::new(&lattice, &dn));
                    worst = worst.max((b - (hu - hd) / (2.0 * grid.mesh())).abs());
                }
            }
            errors.push(worst);
        }
        let order = (errors[0] / errors[1]).log2();
        assert!(
            (order - 2.0).abs() < 0.1,
            "observed order {order}, errors {errors:?}"
        );
    }

    #[test]
    fn coefficients_have_finite_range() {
        let lattice = LatticeSpec::new(1, 3, Closure::Frozen).unwrap();
        let grid = GridSpec::new(8).unwrap();
        let spec = build_ibm_model(Arc::new(NeighbourCosine { beta: 0.9 }), &lattice, &grid);
        let pert = PerturbationField::origin_sine();
        let sites = lattice.sites();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = spec.coefficients.range as i64;
        for _ in 0..1000 {
            let base: Vec<f64> = (0..sites.len())
                .map(|_| grid.angle(rng.random_range(0..8)))
                .collect();
            let i = rng.random_range(0..sites.len());
            let far: Vec<usize> = (0..sites.len())
                .filter(|&j| lattice.distance(&sites[i], &sites[j]) > r)
                .collect();
            if far.is_empty() {
                continue;
            }
            let j = far[rng.random_range(0..far.len())];
            let mut moved = base.clone();
            moved[j] = grid.angle(rng.random_range(0..8));
            let c1 = Configuration::new(&lattice, &base);
            let c2 = Configuration::new(&lattice, &moved);
            let s = &sites[i];
            assert_eq!(
                (spec.coefficients.drift)(s, &c1).to_bits(),
                (spec.coefficients.drift)(s, &c2).to_bits()
            );
            assert_eq!(
                (spec.coefficients.diffusion)(s, &c1).to_bits(),
                (spec.coefficients.diffusion)(s, &c2).to_bits()
            );
            if lattice.distance(s, &sites[j]) > pert.range as i64 {
                assert_eq!(
                    (pert.coefficient)(s, &c1).to_bits(),
                    (pert.coefficient)(s, &c2).to_bits()
                );
            }
        }
    }

    #[test]
    fn extremes_ignore_site_relabeling() {
        // Mirror the chain: the field at site i reads η_{-i}. Max and min are unchanged.
        let lattice = chain(1, Closure::Frozen);
        let grid = GridSpec::new(6).unwrap();
        let direct = PerturbationField {
            range: 2,
            coefficient: Arc::new(|s, cfg| (s[0] as f64 + 1.0) * cfg.angle(s).cos()),
            label: "direct".into(),
        };
        let mirrored = PerturbationField {
            range: 2,
            coefficient: Arc::new(|s, cfg| (-s[0] as f64 + 1.0) * cfg.angle(&[-s[0]]).cos()),
            label: "mirrored".into(),
        };
        let a = compute_c0(&direct, &lattice, &grid).unwrap();
        let b = compute_c0(&mirrored, &lattice, &grid).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!((a - 5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn oscillation_of_single_site_cosine() {
        let grid = GridSpec::new(8).unwrap();
        let single = LatticeSpec::single_site();
        let spec = build_ibm_model(Arc::new(OnSiteCosine { beta: 0.3 }), &single, &grid);
        let osc = hamiltonian_oscillation(spec.hamiltonian.as_ref().unwrap(), &grid).unwrap();
        assert!((osc - 0.6).abs() < 1e-15);
    }
}
