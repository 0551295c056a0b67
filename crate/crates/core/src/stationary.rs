//! Stationary measures, spectral gaps of the symmetric part, log-Sobolev
//! constant estimates and reversibility diagnostics.
//!
//! Convention: the log-Sobolev inequality reads
//! `Ent_ν(f²) ≤ γ Σ_i ⟨(∂_i f)²⟩_ν`, so together with ellipticity `a` it yields
//! the `L₂` decay rate `a/γ`. The LSI constant `γ` and the decay exponent of
//! uniform-norm ergodicity are different constants and are kept apart.

use nalgebra::{DVector, SymmetricEigen};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Configuration, GridSpec, DEFAULT_DENSE_CAP};
use crate::linalg::{dense_solve, gmres, lanczos_smallest, FnOperator, GmresOptions};
use crate::measure::{Measure, SolverTag, WEIGHT_FLOOR};
use crate::model::{hamiltonian_oscillation, DiffusionSpec};
use crate::operators::OperatorMatrix;
use crate::sparse::CsrMatrix;

/// Relative stationarity target `‖νᵀL‖₁ / ‖L‖₁`.
pub const STATIONARITY_TOLERANCE: f64 = 1e-10;

/// Roundoff band for negative weights that get clamped to zero.
pub const CLAMP_BAND: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StationaryMethod {
    /// Dense below the dense cap, iterative above.
    Auto,
    Dense,
    Iterative,
}

#[derive(Debug, Clone, Copy)]
pub struct StationaryOptions {
    pub method: StationaryMethod,
    pub dense_cap: usize,
    pub gmres: GmresOptions,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            method: StationaryMethod::Auto,
            dense_cap: DEFAULT_DENSE_CAP,
            gmres: GmresOptions {
                tolerance: 1e-14,
                ..GmresOptions::default()
            },
        }
    }
}

/// Number of closed communicating classes of the jump graph, which equals
/// the dimension of the kernel of `Lᵀ` for a generator.
pub fn kernel_dimension(l: &CsrMatrix) -> usize {
    let n = l.dim();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, l.nnz());
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for (j, v) in l.off_diagonal(i) {
            if v > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let components = tarjan_scc(&graph);
    let mut class = vec![0usize; n];
    for (c, comp) in components.iter().enumerate() {
        for node in comp {
            class[node.index()] = c;
        }
    }
    components
        .iter()
        .enumerate()
        .filter(|(c, comp)| {
            comp.iter().all(|node| {
                l.off_diagonal(node.index())
                    .all(|(j, v)| v <= 0.0 || class[j] == *c)
            })
        })
        .count()
}

/// `‖νᵀL‖₁`
pub fn stationarity_residual(l: &CsrMatrix, weights: &[f64]) -> f64 {
    l.left_mul_vec(weights).iter().map(|x| x.abs()).sum()
}

fn finish(l: &CsrMatrix, mut weights: Vec<f64>, solver: SolverTag) -> Result<Measure> {
    for (state, w) in weights.iter_mut().enumerate() {
        if *w < -CLAMP_BAND || w.is_nan() {
            return Err(Error::NegativeWeight { state, weight: *w });
        }
        if *w < 0.0 {
            *w = 0.0;
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let residual = stationarity_residual(l, &weights);
    let scale = l.norm_one();
    if residual > STATIONARITY_TOLERANCE * scale {
        return Err(Error::NoConvergence {
            method: "stationary solve",
            iterations: 0,
            residual: residual / scale,
        });
    }
    Measure::new(weights, residual, solver)
}

/// Solves `νᵀL = 0`, `Σν = 1`.
pub fn stationary_measure(l: &OperatorMatrix, opts: &StationaryOptions) -> Result<Measure> {
    let dimension = kernel_dimension(&l.matrix);
    if dimension != 1 {
        return Err(Error::NonUniqueKernel { dimension });
    }
    let n = l.dim();
    let dense = match opts.method {
        StationaryMethod::Dense => true,
        StationaryMethod::Iterative => false,
        StationaryMethod::Auto => n <= opts.dense_cap,
    };
    if dense {
        dense_stationary(&l.matrix)
    } else {
        bordered_gmres_stationary(&l.matrix, &opts.gmres)
    }
}

/// Dense null vector of `Lᵀ`: the last equation is replaced by `Σν = 1`.
pub fn dense_stationary(l: &CsrMatrix) -> Result<Measure> {
    let n = l.dim();
    let mut b = l.transpose().to_dense();
    for j in 0..n {
        b[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let x = dense_solve(&b, &rhs).ok_or(Error::NonUniqueKernel { dimension: 2 })?;
    finish(l, x.iter().copied().collect(), SolverTag::DenseNullSpace)
}

/// GMRES on the bordered system `[Lᵀ s·1; s·1ᵀ 0] (ν, μ) = (0, s)`, which is
/// nonsingular when the kernel is one-dimensional.
pub fn bordered_gmres_stationary(l: &CsrMatrix, opts: &GmresOptions) -> Result<Measure> {
    let n = l.dim();
    let lt = l.transpose();
    let s = l.max_abs().max(1.0);
    let op = FnOperator {
        n: n + 1,
        f: |x: &[f64], y: &mut [f64]| {
            lt.mul_vec_into(&x[..n], &mut y[..n]);
            let mu = x[n];
            let mut total = 0.0;
            for i in 0..n {
                y[i] += s * mu;
                total += x[i];
            }
            y[n] = s * total;
        },
    };
    let mut rhs = vec![0.0; n + 1];
    rhs[n] = s;
    let mut x0 = vec![1.0 / n as f64; n + 1];
    x0[n] = 0.0;
    let out = gmres(&op, &rhs, Some(&x0), opts)?;
    finish(l, out.solution[..n].to_vec(), SolverTag::BorderedGmres)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LsiMethod {
    /// Uniform-measure constant times `exp(osc H)`; an upper bound on `γ`.
    HolleyStroock,
    /// `1/λ₁`, a lower-bound proxy only.
    GapLowerProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsiEstimate {
    pub gamma_hat: f64,
    pub method: LsiMethod,
    /// Uniform-measure constant on the grid (Holley-Stroock only).
    pub gamma_uniform: Option<f64>,
    pub oscillation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Smallest nonzero eigenvalue of `−S` in `L₂[ν]`.
    pub gap: f64,
    pub kernel_dimension: usize,
    pub eigen_residual: f64,
    /// Gap eigenvector, `ν`-mean zero with unit `L₂[ν]` norm.
    pub gap_vector: Vec<f64>,
    pub lsi: Option<LsiEstimate>,
}

impl SpectralReport {
    /// Flat `key = value` record.
    pub fn to_record(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("gap".to_string(), format!("{:.16e}", self.gap)),
            (
                "kernel_dimension".to_string(),
                self.kernel_dimension.to_string(),
            ),
            (
                "eigen_residual".to_string(),
                format!("{:.16e}", self.eigen_residual),
            ),
        ];
        if let Some(lsi) = &self.lsi {
            out.push(("lsi_gamma_hat".into(), format!("{:.16e}", lsi.gamma_hat)));
            out.push(("lsi_method".into(), format!("{:?}", lsi.method)));
        }
        out
    }
}

/// Smallest nonzero eigenvalue of `−S` for the `ν`-symmetric part `S`.
///
/// `D^{1/2}(−S)D^{−1/2}` is symmetric; it is diagonalized densely below
/// `dense_cap` states and by deflated Lanczos above.
pub fn spectral_gap(s: &OperatorMatrix, nu: &Measure, dense_cap: usize) -> Result<SpectralReport> {
    let n = s.dim();
    nu.check_positive(WEIGHT_FLOOR)?;
    let root: Vec<f64> = nu.weights().iter().map(|w| w.sqrt()).collect();
    let sym = s.matrix.map(|i, j, v| -v * root[i] / root[j]);
    let scale = sym.max_abs().max(1.0);
    if n <= dense_cap {
        let d = sym.to_dense();
        let d = (&d + d.transpose()) * 0.5;
        let eig = SymmetricEigen::new(d.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let zero_tol = 1e-9 * scale;
        let kernel_dimension = order
            .iter()
            .filter(|&&k| eig.eigenvalues[k].abs() <= zero_tol)
            .count();
        let k = *order
            .iter()
            .find(|&&k| eig.eigenvalues[k] > zero_tol)
            .ok_or(Error::NonUniqueKernel { dimension: n })?;
        let gap = eig.eigenvalues[k];
        let v = eig.eigenvectors.column(k).into_owned();
        let eigen_residual = (&d * &v - &v * gap).norm();
        Ok(SpectralReport {
            gap,
            kernel_dimension,
            eigen_residual,
            gap_vector: to_nu_vector(v.as_slice(), &root, nu),
            lsi: None,
        })
    } else {
        let upper = (0..n)
            .map(|i| sym.row(i).map(|e| e.1.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let start: Vec<f64> = (0..n)
            .map(|i| ((i as f64 * 0.618_033_988_75).fract() - 0.5) * root[i])
            .collect();
        let pair = lanczos_smallest(&sym, &[root.clone()], upper, 600, 1e-9 * scale, &start)?;
        Ok(SpectralReport {
            gap: pair.value,
            kernel_dimension: 1,
            eigen_residual: pair.residual,
            gap_vector: to_nu_vector(&pair.vector, &root, nu),
            lsi: None,
        })
    }
}

fn to_nu_vector(v: &[f64], root: &[f64], nu: &Measure) -> Vec<f64> {
    let f: Vec<f64> = v.iter().zip(root).map(|(x, r)| x / r).collect();
    let f = nu.centered(&f);
    let norm = nu.norm2(&f);
    f.into_iter().map(|x| x / norm).collect()
}

/// Spectral gap of the nearest-neighbour walk on `M` equispaced circle
/// points with Dirichlet form `⟨(∇⁺f)²⟩`: `2(1 − cos h)/h²`.
pub fn uniform_circle_gap(grid: &GridSpec) -> f64 {
    let h = grid.mesh();
    2.0 * (1.0 - h.cos()) / (h * h)
}

/// Relative energy below which a profile counts as constant.
const NEAR_CONSTANT: f64 = 1e-8;

/// Ratio `Ent(f²) / ⟨(∇⁺f)²⟩` under the uniform measure on the grid.
fn lsi_ratio(f: &[f64], h: f64) -> f64 {
    let m = f.len();
    let w = 1.0 / m as f64;
    let z: f64 = f.iter().map(|x| w * x * x).sum();
    let ent: f64 = f
        .iter()
        .map(|x| {
            if *x == 0.0 {
                0.0
            } else {
                w * x * x * (x * x / z).ln()
            }
        })
        .sum();
    let energy: f64 = (0..m)
        .map(|k| w * ((f[(k + 1) % m] - f[k]) / h).powi(2))
        .sum();
    // near-constant f: the entropy sum is all cancellation, and the limit is
    // the 2/λ term handled by the caller
    if energy <= NEAR_CONSTANT * z {
        return 0.0;
    }
    ent / energy
}

/// Log-Sobolev constant of the uniform measure on the circle grid, for the
/// Dirichlet form `⟨(∇⁺f)²⟩`.
///
/// Maximizes the entropy/energy ratio by gradient ascent over `f = e^u` from
/// deterministic starting profiles, and includes the small-perturbation limit
/// `2/λ` of the ratio around constants.
pub fn uniform_lsi_constant(grid: &GridSpec) -> f64 {
    let m = grid.points;
    let h = grid.mesh();
    let mut best = 2.0 / uniform_circle_gap(grid);
    let w = 1.0 / m as f64;
    for start in 0..12 {
        let amplitude = 0.25 * (1 + start % 4) as f64;
        let mode = 1 + start / 4;
        let mut u: Vec<f64> = (0..m)
            .map(|k| amplitude * (mode as f64 * grid.angle(k)).cos())
            .collect();
        let mut step = 0.1;
        let mut value = lsi_ratio(&u.iter().map(|x| x.exp()).collect::<Vec<_>>(), h);
        for _ in 0..400 {
            let f: Vec<f64> = u.iter().map(|x| x.exp()).collect();
            let z: f64 = f.iter().map(|x| w * x * x).sum();
            let energy: f64 = (0..m)
                .map(|k| w * ((f[(k + 1) % m] - f[k]) / h).powi(2))
                .sum();
            let grad: Vec<f64> = (0..m)
                .map(|k| {
                    let d_ent = 2.0 * w * f[k] * ((f[k] * f[k]).ln() - z.ln());
                    let d_en =
                        2.0 * w * (2.0 * f[k] - f[(k + 1) % m] - f[(k + m - 1) % m]) / (h * h);
                    f[k] * (d_ent - value * d_en) / energy
                })
                .collect();
            let gn = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gn < 1e-12 {
                break;
            }
            let trial: Vec<f64> = u
                .iter()
                .zip(&grad)
                .map(|(x, g)| x + step * g / gn)
                .collect();
            let tv = lsi_ratio(&trial.iter().map(|x| x.exp()).collect::<Vec<_>>(), h);
            if tv > value {
                u = trial;
                value = tv;
                step *= 1.2;
            } else {
                step *= 0.5;
                if step < 1e-10 {
                    break;
                }
            }
        }
        best = best.max(value);
    }
    best
}

/// `γ̂` by the requested method.
pub fn lsi_constant_estimate(
    spec: &DiffusionSpec,
    report: &SpectralReport,
    method: LsiMethod,
) -> Result<LsiEstimate> {
    match method {
        LsiMethod::HolleyStroock => {
            let h = spec.hamiltonian.as_ref().ok_or(Error::NoHamiltonian)?;
            let gamma_uniform = uniform_lsi_constant(&spec.grid);
            let oscillation = hamiltonian_oscillation(h, &spec.grid)?;
            Ok(LsiEstimate {
                gamma_hat: gamma_uniform * oscillation.exp(),
                method,
                gamma_uniform: Some(gamma_uniform),
                oscillation: Some(oscillation),
            })
        }
        LsiMethod::GapLowerProxy => Ok(LsiEstimate {
            gamma_hat: 1.0 / report.gap,
            method,
            gamma_uniform: None,
            oscillation: None,
        }),
    }
}

/// `max |ν_i L_ij − ν_j L_ji| / max |ν_i L_ij|`.
pub fn detailed_balance_residual(l: &OperatorMatrix, nu: &Measure) -> f64 {
    let w = nu.weights();
    let lt = l.matrix.transpose();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..l.dim() {
        for (j, v) in l.matrix.off_diagonal(i) {
            let v2 = lt.get(i, j);
            worst = worst.max((w[i] * v - w[j] * v2).abs());
            scale = scale.max((w[i] * v).abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

/// Which Gibbs orientation `e^{σH}` the measure matches, and the worst
/// relative mismatch for that orientation.
pub fn gibbs_orientation(spec: &DiffusionSpec, nu: &Measure) -> Result<(i8, f64)> {
    let h = spec.hamiltonian.as_ref().ok_or(Error::NoHamiltonian)?;
    let space = spec.state_space()?;
    let energies: Vec<f64> = (0..space.len())
        .map(|i| {
            let a = space.angles(i);
            h.value(&Configuration::new(&spec.lattice, &a))
        })
        .collect();
    let mismatch = |sigma: f64| {
        let raw: Vec<f64> = energies.iter().map(|e| (sigma * e).exp()).collect();
        let z: f64 = raw.iter().sum();
        raw.iter()
            .zip(nu.weights())
            .map(|(r, w)| ((r / z) - w).abs() / w)
            .fold(0.0, f64::max)
    };
    let (plus, minus) = (mismatch(1.0), mismatch(-1.0));
    Ok(if plus <= minus {
        (1, plus)
    } else {
        (-1, minus)
    })
}

/// `‖νᵀL‖₁ / ‖L‖₁`.
pub fn relative_stationarity(l: &OperatorMatrix, nu: &Measure) -> f64 {
    stationarity_residual(&l.matrix, nu.weights()) / l.matrix.norm_one()
}
