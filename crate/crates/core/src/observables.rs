//! Test functions on the state space.

use rand::Rng;
use rayon::prelude::*;

use crate::lattice::StateSpace;

/// Evaluates `f(angles)` at every state.
pub fn evaluate(space: &StateSpace, f: impl Fn(&[f64]) -> f64 + Sync) -> Vec<f64> {
    (0..space.len())
        .into_par_iter()
        .map(|i| f(&space.angles(i)))
        .collect()
}

/// `cos(η_site)` at every state.
pub fn site_cosine(space: &StateSpace, site: usize) -> Vec<f64> {
    evaluate(space, |a| a[site].cos())
}

/// Random trigonometric polynomial: a constant, per-site harmonics up to
/// `max_degree` with coefficients damped like `1/k²`, and a coupling term
/// `cos(η_first − η_last)` when there is more than one site.
pub fn random_trig(space: &StateSpace, rng: &mut impl Rng, max_degree: usize) -> Vec<f64> {
    let sites = space.site_count();
    let constant: f64 = rng.random_range(-1.0..1.0);
    let harmonics: Vec<(usize, f64, f64, f64)> = (0..sites)
        .flat_map(|s| (1..=max_degree).map(move |k| (s, k)))
        .map(|(s, k)| {
            let damp = 1.0 / (k * k) as f64;
            (
                s,
                k as f64,
                damp * rng.random_range(-1.0..1.0),
                damp * rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let coupling: f64 = if sites > 1 {
        rng.random_range(-1.0..1.0)
    } else {
        0.0
    };
    evaluate(space, |a| {
        let mut v = constant;
        for &(s, k, c, d) in &harmonics {
            v += c * (k * a[s]).cos() + d * (k * a[s]).sin();
        }
        v + coupling * (a[0] - a[sites - 1]).cos()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Closure, GridSpec, LatticeSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trig_functions_are_reproducible_and_nonconstant() {
        let lattice = LatticeSpec::new(1, 1, Closure::Frozen).unwrap();
        let space = StateSpace::new(&lattice, &GridSpec::new(6).unwrap()).unwrap();
        let f = random_trig(&space, &mut ChaCha8Rng::seed_from_u64(3), 2);
        let g = random_trig(&space, &mut ChaCha8Rng::seed_from_u64(3), 2);
        assert_eq!(f, g);
        assert!(f.iter().any(|x| (x - f[0]).abs() > 1e-3));
        let c = site_cosine(&space, 1);
        assert_eq!(c[0], 1.0);
    }
}
