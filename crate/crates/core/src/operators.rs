//! Sparse assembly of generators, first-order perturbations, `ν`-adjoints and
//! symmetric parts.
//!
//! Per site `i` the stencils are
//! `∂_i² f ≈ (f(η⁺) − 2f(η) + f(η⁻)) / h²` and `∂_i f ≈ (f(η⁺) − f(η⁻)) / 2h`,
//! where `η^±` moves site `i` one grid step. Coefficients are read at `η`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Configuration, GridSpec, LatticeSpec, StateSpace};
use crate::measure::{Measure, WEIGHT_FLOOR};
use crate::model::{
    compute_drift_bound, compute_ellipticity_bound, DiffusionSpec, PerturbationField, SiteFn,
};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorTag {
    Generator,
    FirstOrder,
    Adjoint,
    SymmetricPart,
    AntisymmetricPart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub lattice: LatticeSpec,
    pub grid: GridSpec,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub matrix: CsrMatrix,
    pub tag: OperatorTag,
    pub provenance: Provenance,
}

impl OperatorMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(f)
    }

    fn derived(&self, matrix: CsrMatrix, tag: OperatorTag, what: &str) -> Self {
        Self {
            matrix,
            tag,
            provenance: Provenance {
                label: format!("{what} of {}", self.provenance.label),
                ..self.provenance.clone()
            },
        }
    }
}

/// One generator-style row: off-diagonals from the per-site stencils, then
/// the diagonal as minus their sum.
fn stencil_rows(
    space: &StateSpace,
    site_weights: impl Fn(&[i64], &Configuration<'_>) -> (f64, f64) + Sync,
) -> CsrMatrix {
    let lattice = space.lattice();
    let sites = space.sites();
    let rows = (0..space.len())
        .into_par_iter()
        .map(|i| {
            let angles = space.angles(i);
            let cfg = Configuration::new(lattice, &angles);
            let mut entries = Vec::with_capacity(2 * sites.len() + 1);
            for (s, site) in sites.iter().enumerate() {
                let (up, dn) = site_weights(site, &cfg);
                if up != 0.0 {
                    entries.push((space.shift(i, s, true), up));
                }
                if dn != 0.0 {
                    entries.push((space.shift(i, s, false), dn));
                }
            }
            entries.sort_by_key(|e| e.0);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(entries.len() + 1);
            for (c, v) in entries {
                match row.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => row.push((c, v)),
                }
            }
            let off: f64 = row.iter().map(|e| e.1).sum();
            row.push((i, -off));
            row
        })
        .collect();
    CsrMatrix::from_normalized_rows(space.len(), rows)
}

/// Checks the mesh keeps every generator off-diagonal nonnegative.
pub fn check_mesh(spec: &DiffusionSpec, extra_drift: f64) -> Result<(f64, f64)> {
    let a_min = compute_ellipticity_bound(&spec.coefficients, &spec.lattice, &spec.grid)?;
    let b_max = compute_drift_bound(&spec.coefficients, &spec.lattice, &spec.grid)? + extra_drift;
    let product = spec.grid.mesh() * b_max;
    if product >= a_min {
        return Err(Error::MeshTooCoarse { product, a_min });
    }
    Ok((a_min, b_max))
}

/// Discretizes `L = Σ_i (a_i/2 ∂_i² + b_i ∂_i)`.
pub fn assemble_generator(spec: &DiffusionSpec) -> Result<OperatorMatrix> {
    let space = spec.state_space()?;
    check_mesh(spec, 0.0)?;
    let h = spec.grid.mesh();
    let (diff, drift) = (&spec.coefficients.diffusion, &spec.coefficients.drift);
    let matrix = stencil_rows(&space, |site, cfg| {
        let a = diff(site, cfg);
        let b = drift(site, cfg);
        let second = a / (2.0 * h * h);
        let first = b / (2.0 * h);
        (second + first, second - first)
    });
    Ok(OperatorMatrix {
        matrix,
        tag: OperatorTag::Generator,
        provenance: Provenance {
            lattice: spec.lattice.clone(),
            grid: spec.grid,
            label: spec.label.clone(),
        },
    })
}

/// Discretizes `A = Σ_i c_i ∂_i`.
pub fn assemble_first_order(
    c: &PerturbationField,
    lattice: &LatticeSpec,
    grid: &GridSpec,
) -> Result<OperatorMatrix> {
    let space = StateSpace::new(lattice, grid)?;
    Ok(first_order_on(&space, &c.coefficient, &c.label))
}

fn first_order_on(space: &StateSpace, c: &SiteFn, label: &str) -> OperatorMatrix {
    let h = space.grid().mesh();
    let matrix = stencil_rows(space, |site, cfg| {
        let w = c(site, cfg) / (2.0 * h);
        (w, -w)
    });
    OperatorMatrix {
        matrix,
        tag: OperatorTag::FirstOrder,
        provenance: Provenance {
            lattice: space.lattice().clone(),
            grid: *space.grid(),
            label: label.to_string(),
        },
    }
}

/// `L₀ + εA`, with each diagonal re-derived from its row's off-diagonals.
pub fn perturbed_generator(
    l0: &OperatorMatrix,
    a: &OperatorMatrix,
    eps: f64,
) -> Result<OperatorMatrix> {
    let matrix = l0.matrix.combine_generator(&a.matrix, eps)?;
    Ok(l0.derived(
        matrix,
        OperatorTag::Generator,
        &format!("eps = {eps} perturbation"),
    ))
}

/// `M* = D_ν⁻¹ Mᵀ D_ν`, so that `(g, Mf)_ν = (M*g, f)_ν`.
pub fn nu_adjoint(m: &OperatorMatrix, nu: &Measure) -> Result<OperatorMatrix> {
    if nu.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            got: nu.len(),
        });
    }
    nu.check_positive(WEIGHT_FLOOR)?;
    let w = nu.weights();
    let matrix = m.matrix.transpose().map(|r, c, v| v * w[c] / w[r]);
    Ok(m.derived(matrix, OperatorTag::Adjoint, "adjoint"))
}

/// `S = (L + L*)/2` and `Asym = (L − L*)/2`.
pub fn symmetrize(l: &OperatorMatrix, nu: &Measure) -> Result<(OperatorMatrix, OperatorMatrix)> {
    let adj = nu_adjoint(l, nu)?;
    let s = l.matrix.combine(0.5, &adj.matrix, 0.5)?;
    let a = l.matrix.combine(0.5, &adj.matrix, -0.5)?;
    Ok((
        l.derived(s, OperatorTag::SymmetricPart, "symmetric part"),
        l.derived(a, OperatorTag::AntisymmetricPart, "antisymmetric part"),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletForm {
    /// `(f, Lf)_ν` by matrix action.
    pub lhs: f64,
    /// `−½ Σ_i ⟨a_i (D_i f)²⟩_ν` with the central difference `D_i`.
    pub rhs: f64,
}

/// Both sides of the Dirichlet-form identity for `L = Σ(a_i/2 ∂_i² + b_i ∂_i)`.
/// They agree to `O(h²)`, not exactly.
pub fn dirichlet_form(
    l: &OperatorMatrix,
    spec: &DiffusionSpec,
    nu: &Measure,
    f: &[f64],
) -> Result<DirichletForm> {
    let space = spec.state_space()?;
    if f.len() != space.len() || l.dim() != space.len() {
        return Err(Error::DimensionMismatch {
            expected: space.len(),
            got: f.len(),
        });
    }
    let lhs = nu.inner(f, &l.apply(f));
    let h = spec.grid.mesh();
    let sites = space.sites();
    let w = nu.weights();
    let rhs = -0.5
        * (0..space.len())
            .into_par_iter()
            .map(|i| {
                let angles = space.angles(i);
                let cfg = Configuration::new(&spec.lattice, &angles);
                let local: f64 = sites
                    .iter()
                    .enumerate()
                    .map(|(s, site)| {
                        let d =
                            (f[space.shift(i, s, true)] - f[space.shift(i, s, false)]) / (2.0 * h);
                        (spec.coefficients.diffusion)(site, &cfg) * d * d
                    })
                    .sum();
                w[i] * local
            })
            .sum::<f64>();
    Ok(DirichletForm { lhs, rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Closure;
    use crate::model::{
        build_custom_model, build_ibm_model, laplacian_model, NeighbourCosine, OnSiteCosine,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    /// Independent assembler: loops over states and sites, writing stencil
    /// weights into a dense matrix with explicit digit arithmetic.
    fn brute_force(
        lattice: &LatticeSpec,
        grid: &GridSpec,
        weights: impl Fn(usize, &[f64]) -> (f64, f64, f64),
    ) -> nalgebra::DMatrix<f64> {
        let m = grid.points;
        let sites = lattice.site_count();
        let n = m.pow(sites as u32);
        let mut out = nalgebra::DMatrix::zeros(n, n);
        for idx in 0..n {
            let mut digits = vec![0; sites];
            let mut r = idx;
            for s in (0..sites).rev() {
                digits[s] = r % m;
                r /= m;
            }
            let angles: Vec<f64> = digits
                .iter()
                .map(|&d| 2.0 * PI * d as f64 / m as f64)
                .collect();
            for s in 0..sites {
                let (up, mid, dn) = weights(s, &angles);
                let mut du = digits.clone();
                du[s] = (du[s] + 1) % m;
                let mut dd = digits.clone();
                dd[s] = (dd[s] + m - 1) % m;
                let enc = |d: &[usize]| d.iter().fold(0, |acc, x| acc * m + x);
                out[(idx, enc(&du))] += up;
                out[(idx, enc(&dd))] += dn;
                out[(idx, idx)] += mid;
            }
        }
        out
    }

    #[test]
    fn single_site_laplacian_is_circulant() {
        let grid = GridSpec::new(4).unwrap();
        let spec = laplacian_model(&LatticeSpec::single_site(), &grid);
        let l = assemble_generator(&spec).unwrap().matrix.to_dense();
        let h2 = grid.mesh().powi(2);
        for i in 0..4 {
            assert_eq!(l[(i, i)], -2.0 / h2);
            assert_eq!(l[(i, (i + 1) % 4)], 1.0 / h2);
            assert_eq!(l[(i, (i + 3) % 4)], 1.0 / h2);
            assert_eq!(l[(i, (i + 2) % 4)], 0.0);
        }
    }

    #[test]
    fn row_sums_vanish_exactly() {
        let grid = GridSpec::new(6).unwrap();
        let lattice = LatticeSpec::new(1, 1, Closure::Frozen).unwrap();
        let spec = build_ibm_model(Arc::new(NeighbourCosine { beta: 0.5 }), &lattice, &grid);
        let l = assemble_generator(&spec).unwrap();
        assert!(l.apply(&vec![1.0; l.dim()]).iter().all(|&x| x == 0.0));
        let a = assemble_first_order(&PerturbationField::origin_sine(), &lattice, &grid).unwrap();
        assert!(a.apply(&vec![1.0; a.dim()]).iter().all(|&x| x == 0.0));
        // at most 2 off-diagonals per site plus the diagonal
        for i in 0..l.dim() {
            assert!(l.matrix.row(i).count() <= 1 + 2 * lattice.site_count());
        }
    }

    #[test]
    fn generator_matches_brute_force_assembly() {
        let grid = GridSpec::new(6).unwrap();
        let lattice = LatticeSpec::new(1, 1, Closure::Frozen).unwrap();
        let beta = 0.5;
        let spec = build_ibm_model(Arc::new(NeighbourCosine { beta }), &lattice, &grid);
        let fast = assemble_generator(&spec).unwrap().matrix.to_dense();
        let h = grid.mesh();
        // b_i = ∂_i H for the frozen chain 0 | η_-1 η_0 η_1 | 0
        let oracle = brute_force(&lattice, &grid, |s, x| {
            let ext = [0.0, x[0], x[1], x[2], 0.0];
            let k = s + 1;
            let b = -beta * (ext[k] - ext[k + 1]).sin() + beta * (ext[k - 1] - ext[k]).sin();
            (
                1.0 / (h * h) + b / (2.0 * h),
                -2.0 / (h * h),
                1.0 / (h * h) - b / (2.0 * h),
            )
        });
        assert_eq!(fast.nrows(), 216);
        let diff = (&fast - &oracle).abs().max();
        assert!(diff < 1e-12 * oracle.abs().max(), "max diff {diff}");
    }

    #[test]
    fn first_order_examples() {
        let grid = GridSpec::new(4).unwrap();
        let single = LatticeSpec::single_site();
        let a = assemble_first_order(&PerturbationField::origin_derivative(), &single, &grid)
            .unwrap()
            .matrix
            .to_dense();
        let w = 1.0 / (2.0 * grid.mesh());
        for i in 0..4 {
            assert_eq!(a[(i, i)], 0.0);
            assert_eq!(a[(i, (i + 1) % 4)], w);
            assert_eq!(a[(i, (i + 2) % 4)], 0.0);
            assert_eq!(a[(i, (i + 3) % 4)], -w);
        }

        let lattice = LatticeSpec::new(1, 1, Closure::Frozen).unwrap();
        let grid = GridSpec::new(6).unwrap();
        let h = grid.mesh();
        let fast = assemble_first_order(&PerturbationField::origin_sine(), &lattice, &grid)
            .unwrap()
            .matrix
            .to_dense();
        let oracle = brute_force(&lattice, &grid, |s, x| {
            let c = if s == 1 { x[1].sin() } else { 0.0 };
            (c / (2.0 * h), 0.0, -c / (2.0 * h))
        });
        assert!((&fast - &oracle).abs().max() < 1e-14);
    }

    #[test]
    fn coarse_mesh_is_rejected() {
        let grid = GridSpec::new(4).unwrap();
        let spec = build_custom_model(&LatticeSpec::single_site(), &grid, (2.0, 0.0), (5.0, 0.0));
        assert!(matches!(
            assemble_generator(&spec),
            Err(Error::MeshTooCoarse { .. })
        ));
    }

    fn random_measure(n: usize, rng: &mut impl Rng) -> Measure {
        Measure::new(
            (0..n).map(|_| rng.random_range(0.1..2.0)).collect(),
            0.0,
            crate::measure::SolverTag::Given,
        )
        .unwrap()
    }

    #[test]
    fn adjoint_examples() {
        let grid = GridSpec::new(8).unwrap();
        let lattice = LatticeSpec::new(1, 1, Closure::Frozen).unwrap();
        let spec = build_ibm_model(Arc::new(NeighbourCosine { beta: 0.5 }), &lattice, &grid);
        let l = assemble_generator(&spec).unwrap();
        let n = l.dim();

        let uniform = Measure::uniform(n);
        let adj = nu_adjoint(&l, &uniform).unwrap();
        assert_eq!(adj.matrix, l.matrix.transpose());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nu = random_measure(n, &mut rng);
        let twice = nu_adjoint(&nu_adjoint(&l, &nu).unwrap(), &nu).unwrap();
        let scale = l.matrix.max_abs();
        let worst = l
            .matrix
            .triplets()
            .map(|(i, j, v)| (v - twice.matrix.get(i, j)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-14 * scale, "involution defect {worst}");

        let adj = nu_adjoint(&l, &nu).unwrap();
        for _ in 0..100 {
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = nu.inner(&g, &l.apply(&f));
            let b = nu.inner(&adj.apply(&g), &f);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300));
        }
    }

    #[test]
    fn adjoint_rejects_degenerate_measure() {
        let grid = GridSpec::new(4).unwrap();
        let spec = laplacian_model(&LatticeSpec::single_site(), &grid);
        let l = assemble_generator(&spec).unwrap();
        let nu = Measure::new(
            vec![1.0, 0.0, 1.0, 1.0],
            0.0,
            crate::measure::SolverTag::Given,
        )
        .unwrap();
        assert!(matches!(
            nu_adjoint(&l, &nu),
            Err(Error::DegenerateMeasure { .. })
        ));
    }

    #[test]
    fn symmetrize_laplacian_and_constant_drift() {
        let grid = GridSpec::new(8).unwrap();
        let single = LatticeSpec::single_site();
        let lap = assemble_generator(&laplacian_model(&single, &grid)).unwrap();
        let uniform = Measure::uniform(8);
        let (s, a) = symmetrize(&lap, &uniform).unwrap();
        assert_eq!(a.matrix.max_abs(), 0.0);
        assert_eq!(s.matrix.to_dense(), lap.matrix.to_dense());

        let drift = 0.7;
        let spec = build_custom_model(&single, &grid, (2.0, 0.0), (drift, 0.0));
        let l = assemble_generator(&spec).unwrap();
        let (_, a) = symmetrize(&l, &uniform).unwrap();
        let first =
            assemble_first_order(&PerturbationField::constant(drift), &single, &grid).unwrap();
        // equal up to the rounding of (1/h² ± w) in the generator entries
        let defect = (a.matrix.to_dense() - first.matrix.to_dense()).abs().max();
        assert!(
            defect <= 4.0 * f64::EPSILON * l.matrix.max_abs(),
            "defect {defect}"
        );
    }

    #[test]
    fn parts_add_back_to_the_operator() {
        let grid = GridSpec::new(6).unwrap();
        let lattice = LatticeSpec::new(1, 1, Closure::Frozen).unwrap();
        let spec = build_ibm_model(Arc::new(NeighbourCosine { beta: 0.5 }), &lattice, &grid);
        let l = assemble_generator(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nu = random_measure(l.dim(), &mut rng);
        let (s, a) = symmetrize(&l, &nu).unwrap();
        let back = s.matrix.combine(1.0, &a.matrix, 1.0).unwrap();
        let scale = l.matrix.max_abs();
        for (i, j, v) in l.matrix.triplets() {
            assert!((back.get(i, j) - v).abs() <= 4.0 * f64::EPSILON * scale);
        }
        // S is ν-self-adjoint, Asym ν-skew-adjoint
        let s_adj = nu_adjoint(&s, &nu).unwrap();
        let a_adj = nu_adjoint(&a, &nu).unwrap();
        for (i, j, v) in s.matrix.triplets() {
            assert!((s_adj.matrix.get(i, j) - v).abs() <= 1e-13 * scale);
        }
        for (i, j, v) in a.matrix.triplets() {
            assert!((a_adj.matrix.get(i, j) + v).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn dirichlet_form_of_constants_vanishes() {
        let grid = GridSpec::new(8).unwrap();
        let single = LatticeSpec::single_site();
        let spec = build_ibm_model(Arc::new(OnSiteCosine { beta: 0.5 }), &single, &grid);
        let l = assemble_generator(&spec).unwrap();
        let d = dirichlet_form(&l, &spec, &Measure::uniform(8), &[3.0; 8]).unwrap();
        assert_eq!(d.lhs, 0.0);
        assert_eq!(d.rhs, 0.0);
    }

    #[test]
    fn dirichlet_mismatch_of_smooth_bump_is_second_order() {
        // Single-site Laplacian, uniform ν, f = exp(cos η).
        let mut errors = Vec::new();
        for m in [16usize, 32, 64] {
            let grid = GridSpec::new(m).unwrap();
            let spec = laplacian_model(&LatticeSpec::single_site(), &grid);
            let l = assemble_generator(&spec).unwrap();
            let f: Vec<f64> = grid.angles().iter().map(|x| x.cos().exp()).collect();
            let d = dirichlet_form(&l, &spec, &Measure::uniform(m), &f).unwrap();
            errors.push((d.lhs - d.rhs).abs());
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.25, "order {order} from {errors:?}");
        }
    }

    proptest::proptest! {
        #[test]
        fn custom_generators_are_markov(
            a0 in 1.5f64..3.0,
            a1 in -0.5f64..0.5,
            b0 in -0.5f64..0.5,
            b1 in -0.5f64..0.5,
            half in 3usize..6,
        ) {
            let grid = GridSpec::new(2 * half).unwrap();
            let lattice = LatticeSpec::new(1, 1, Closure::Periodic).unwrap();
            let l = assemble_generator(&build_custom_model(&lattice, &grid, (a0, a1), (b0, b1))).unwrap();
            for i in 0..l.dim() {
                let row: Vec<(usize, f64)> = l.matrix.row(i).collect();
                proptest::prop_assert!(row.iter().filter(|e| e.0 != i).all(|e| e.1 >= 0.0));
                let sum: f64 = row.iter().map(|e| e.1).sum();
                proptest::prop_assert!(sum.abs() <= 1e-12 * l.matrix.max_abs());
            }
        }
    }
}
