//! Power-series expansion of the stationary density of `L₀ + εA` in `ε`,
//! the directly solved perturbed measure, and the spectral projector onto the
//! kernel of `L_ε` by contour quadrature.

use std::io::Write;

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_line, LineFit};
use crate::lattice::DEFAULT_DENSE_CAP;
use crate::linalg::{gmres, FnOperator, GmresOptions};
use crate::measure::Measure;
use crate::model::{
    compute_c0, compute_ellipticity_bound, compute_perturbation_bound, DiffusionSpec,
};
use crate::observables::random_trig;
use crate::operators::{check_mesh, nu_adjoint, perturbed_generator, OperatorMatrix};
use crate::sparse::CsrMatrix;
use crate::stationary::{relative_stationarity, stationary_measure, LsiMethod, StationaryOptions};

/// `‖L₀*f_{k+1} + A*f_k‖_ν / ‖A*f_k‖_ν` must stay below this.
pub const RECURRENCE_TOLERANCE: f64 = 1e-9;
/// Largest tolerated `|⟨A*f_k⟩_ν|`.
pub const SOLVABILITY_TOLERANCE: f64 = 1e-10;
/// Norms below this count as zero when fitting growth rates.
pub const NEGLIGIBLE_NORM: f64 = 1e-14;

/// `ε_c = a / (C₀ √γ)`.
pub fn epsilon_c(a: f64, c0: f64, gamma: f64) -> Result<f64> {
    for (name, value) in [("a", a), ("C0", c0), ("gamma", gamma)] {
        if !(value > 0.0) {
            return Err(Error::NonPositiveConstant { name, value });
        }
    }
    Ok(a / (c0 * gamma.sqrt()))
}

/// `ε_c` together with the constants that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalRadius {
    pub value: f64,
    pub a: f64,
    pub c0: f64,
    pub gamma_hat: f64,
    pub method: LsiMethod,
}

impl CriticalRadius {
    pub fn new(a: f64, c0: f64, gamma_hat: f64, method: LsiMethod) -> Result<Self> {
        Ok(Self {
            value: epsilon_c(a, c0, gamma_hat)?,
            a,
            c0,
            gamma_hat,
            method,
        })
    }
}

/// How the singular systems `L₀*x = r`, `⟨x⟩_ν = 0` are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SingularSolve {
    /// `[L₀* 1; νᵀ 0] (x, μ) = (r, 0)`.
    Bordered,
    /// `(L₀* + s·1νᵀ) x = r`, nonsingular on a one-dimensional kernel.
    Deflated,
}

#[derive(Debug, Clone, Copy)]
pub struct SeriesOptions {
    pub strategy: SingularSolve,
    pub dense_cap: usize,
    pub gmres: GmresOptions,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        Self {
            strategy: SingularSolve::Bordered,
            dense_cap: DEFAULT_DENSE_CAP,
            gmres: GmresOptions {
                tolerance: 1e-13,
                ..GmresOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeriesResult {
    /// `f_0 ≡ 1, f_1, …, f_K`.
    pub coefficients: Vec<Vec<f64>>,
    /// `‖f_k‖_{2,ν}`.
    pub norms: Vec<f64>,
    /// `⟨f_k⟩_ν`.
    pub means: Vec<f64>,
    /// Relative recurrence residual for `f_k`; zero for `k = 0`.
    pub residuals: Vec<f64>,
    /// `⟨A*f_{k−1}⟩_ν` checked before solving for `f_k`; zero for `k = 0`.
    pub solvability: Vec<f64>,
    pub strategy: SingularSolve,
}

impl SeriesResult {
    pub fn order(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Columns `k norm mean residual`.
    pub fn write_table(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "k,norm,mean,residual")?;
        for k in 0..self.coefficients.len() {
            writeln!(
                w,
                "{k},{:.16e},{:.16e},{:.16e}",
                self.norms[k], self.means[k], self.residuals[k]
            )?;
        }
        Ok(())
    }
}

enum Factor {
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Iterative,
}

/// Solver for `L₀*x = r` with `⟨x⟩_ν = 0`, factored once and reused.
struct SingularSolver<'a> {
    lstar: &'a CsrMatrix,
    nu: &'a [f64],
    strategy: SingularSolve,
    scale: f64,
    factor: Factor,
    gmres: GmresOptions,
}

impl<'a> SingularSolver<'a> {
    fn new(lstar: &'a CsrMatrix, nu: &'a [f64], opts: &SeriesOptions) -> Self {
        let n = lstar.dim();
        let scale = lstar.max_abs().max(1.0);
        let factor = if n <= opts.dense_cap {
            let d = lstar.to_dense();
            let m = match opts.strategy {
                SingularSolve::Bordered => {
                    let mut b = DMatrix::zeros(n + 1, n + 1);
                    b.view_mut((0, 0), (n, n)).copy_from(&d);
                    for i in 0..n {
                        b[(i, n)] = scale;
                        b[(n, i)] = scale * nu[i];
                    }
                    b
                }
                SingularSolve::Deflated => DMatrix::from_fn(n, n, |i, j| d[(i, j)] + scale * nu[j]),
            };
            Factor::Dense(m.lu())
        } else {
            Factor::Iterative
        };
        Self {
            lstar,
            nu,
            strategy: opts.strategy,
            scale,
            factor,
            gmres: opts.gmres,
        }
    }

    fn apply_system(&self, x: &[f64], y: &mut [f64]) {
        let n = self.lstar.dim();
        let s = self.scale;
        self.lstar.mul_vec_into(&x[..n], &mut y[..n]);
        let mean: f64 = x[..n].iter().zip(self.nu).map(|(a, w)| a * w).sum();
        match self.strategy {
            SingularSolve::Bordered => {
                let mu = x[n];
                y[..n].iter_mut().for_each(|v| *v += s * mu);
                y[n] = s * mean;
            }
            SingularSolve::Deflated => y.iter_mut().for_each(|v| *v += s * mean),
        }
    }

    fn system_dim(&self) -> usize {
        self.lstar.dim() + matches!(self.strategy, SingularSolve::Bordered) as usize
    }

    fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        let n = self.lstar.dim();
        let m = self.system_dim();
        let mut rhs = vec![0.0; m];
        rhs[..n].copy_from_slice(r);
        let x = match &self.factor {
            Factor::Dense(lu) => {
                let b = DVector::from_vec(rhs.clone());
                let mut x = lu.solve(&b).ok_or(Error::NoConvergence {
                    method: "singular solve factorization",
                    iterations: 0,
                    residual: f64::INFINITY,
                })?;
                // one step of iterative refinement
                let mut ax = vec![0.0; m];
                self.apply_system(x.as_slice(), &mut ax);
                let res = DVector::from_iterator(m, rhs.iter().zip(&ax).map(|(a, b)| a - b));
                if let Some(dx) = lu.solve(&res) {
                    x += dx;
                }
                x.as_slice().to_vec()
            }
            Factor::Iterative => {
                let op = FnOperator {
                    n: m,
                    f: |x: &[f64], y: &mut [f64]| self.apply_system(x, y),
                };
                gmres(&op, &rhs, None, &self.gmres)?.solution
            }
        };
        let mut x = x[..n].to_vec();
        let mean: f64 = x.iter().zip(self.nu).map(|(a, w)| a * w).sum();
        x.iter_mut().for_each(|v| *v -= mean);
        Ok(x)
    }
}

/// Coefficients `f_0..f_K` of `g_ε = Σ ε^k f_k` from `L₀*f_{k+1} = −A*f_k`,
/// `⟨f_k⟩_ν = 0` for `k ≥ 1`.
pub fn rs_coefficients(
    l0: &OperatorMatrix,
    a: &OperatorMatrix,
    nu: &Measure,
    order: usize,
    opts: &SeriesOptions,
) -> Result<SeriesResult> {
    if order == 0 {
        return Err(Error::InvalidInput(
            "series order must be at least 1".into(),
        ));
    }
    if a.dim() != l0.dim() {
        return Err(Error::DimensionMismatch {
            expected: l0.dim(),
            got: a.dim(),
        });
    }
    let stationarity = relative_stationarity(l0, nu);
    if stationarity > 10.0 * crate::stationary::STATIONARITY_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "measure is not stationary for L0 (relative residual {stationarity:.3e})"
        )));
    }
    let l0_star = nu_adjoint(l0, nu)?;
    let a_star = nu_adjoint(a, nu)?;
    let solver = SingularSolver::new(&l0_star.matrix, nu.weights(), opts);

    let n = l0.dim();
    let mut result = SeriesResult {
        coefficients: vec![vec![1.0; n]],
        norms: vec![1.0],
        means: vec![1.0],
        residuals: vec![0.0],
        solvability: vec![0.0],
        strategy: opts.strategy,
    };
    for k in 0..order {
        let rhs: Vec<f64> = a_star
            .apply(&result.coefficients[k])
            .iter()
            .map(|v| -v)
            .collect();
        let mean = nu.mean(&rhs);
        if mean.abs() > SOLVABILITY_TOLERANCE {
            return Err(Error::SolvabilityViolated { order: k, mean });
        }
        let rhs_norm = nu.norm2(&rhs);
        let next = if rhs_norm == 0.0 {
            vec![0.0; n]
        } else {
            solver.solve(&rhs)?
        };
        let lf = l0_star.apply(&next);
        let defect: Vec<f64> = lf.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let residual = if rhs_norm == 0.0 {
            nu.norm2(&defect)
        } else {
            nu.norm2(&defect) / rhs_norm
        };
        if residual > RECURRENCE_TOLERANCE {
            return Err(Error::NoConvergence {
                method: "series recurrence",
                iterations: k + 1,
                residual,
            });
        }
        result.norms.push(nu.norm2(&next));
        result.means.push(nu.mean(&next));
        result.residuals.push(residual);
        result.solvability.push(mean);
        result.coefficients.push(next);
    }
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct SeriesDensity {
    /// `Σ_{k≤K} ε^k f_k`.
    pub g: Vec<f64>,
    /// `ν·g` renormalized; absent when `g` goes negative.
    pub measure: Option<Measure>,
    /// `|⟨g⟩_ν − 1|` before renormalization.
    pub renormalization_defect: f64,
    pub min_density: f64,
}

impl SeriesDensity {
    pub fn is_negative(&self) -> bool {
        self.min_density < 0.0
    }
}

/// Truncated density `g^{(K)}` and the measure it defines.
pub fn series_density(
    series: &SeriesResult,
    nu: &Measure,
    eps: f64,
    order: usize,
) -> SeriesDensity {
    let order = order.min(series.order());
    let n = nu.len();
    let mut g = vec![0.0; n];
    // Horner in ε
    for k in (0..=order).rev() {
        for (gi, fi) in g.iter_mut().zip(&series.coefficients[k]) {
            *gi = *gi * eps + fi;
        }
    }
    let mean = nu.mean(&g);
    let min_density = g.iter().copied().fold(f64::INFINITY, f64::min);
    let measure = if min_density >= 0.0 {
        let weights = nu.weights().iter().zip(&g).map(|(w, x)| w * x).collect();
        Measure::new(weights, 0.0, crate::measure::SolverTag::Series).ok()
    } else {
        None
    };
    SeriesDensity {
        g,
        measure,
        renormalization_defect: (mean - 1.0).abs(),
        min_density,
    }
}

#[derive(Debug, Clone)]
pub struct PerturbedMeasure {
    pub measure: Measure,
    /// `ν_ε / ν` pointwise.
    pub g: Vec<f64>,
    pub generator: OperatorMatrix,
}

/// Stationary measure of `L₀ + εA` by a direct solve.
pub fn direct_perturbed_measure(
    spec: &DiffusionSpec,
    l0: &OperatorMatrix,
    a: &OperatorMatrix,
    nu: &Measure,
    eps: f64,
    opts: &StationaryOptions,
) -> Result<PerturbedMeasure> {
    let c_max = match &spec.perturbation {
        Some(p) => compute_perturbation_bound(p, &spec.lattice, &spec.grid)?,
        None => a.matrix.max_abs() * 2.0 * spec.grid.mesh(),
    };
    check_mesh(spec, eps.abs() * c_max)?;
    let generator = perturbed_generator(l0, a, eps)?;
    let measure = stationary_measure(&generator, opts)?;
    let g = measure
        .weights()
        .iter()
        .zip(nu.weights())
        .map(|(a, b)| a / b)
        .collect();
    Ok(PerturbedMeasure {
        measure,
        g,
        generator,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusFit {
    /// Fitted growth rate `ρ̂` of `‖f_k‖`.
    pub rho_hat: f64,
    /// `ε̂ = 1/ρ̂`.
    pub epsilon_hat: f64,
    pub fit: LineFit,
    pub first_order: usize,
    pub last_order: usize,
}

impl RadiusFit {
    /// `ε̂ ≥ ε_c`, meaningful only when `γ̂` bounds `γ` from above.
    pub fn exceeds(&self, critical: &CriticalRadius) -> Option<bool> {
        match critical.method {
            LsiMethod::HolleyStroock => Some(self.epsilon_hat >= critical.value),
            LsiMethod::GapLowerProxy => None,
        }
    }
}

/// Least-squares fit of `log ‖f_k‖` against `k` over `first_order ≤ k ≤ K`.
pub fn empirical_radius(series: &SeriesResult, first_order: usize) -> Result<RadiusFit> {
    let last = series.order();
    if series.norms[1..].iter().all(|&v| v < NEGLIGIBLE_NORM) {
        return Err(Error::DegenerateSeries);
    }
    if last < first_order + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least two orders from {first_order} to fit a radius, have K = {last}"
        )));
    }
    let ks: Vec<f64> = (first_order..=last).map(|k| k as f64).collect();
    let logs: Vec<f64> = (first_order..=last).map(|k| series.norms[k].ln()).collect();
    if logs.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSeries);
    }
    let fit = fit_line(&ks, &logs).ok_or(Error::DegenerateSeries)?;
    let rho_hat = fit.slope.exp();
    Ok(RadiusFit {
        rho_hat,
        epsilon_hat: 1.0 / rho_hat,
        fit,
        first_order,
        last_order: last,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectorOptions {
    pub initial_nodes: usize,
    pub max_nodes: usize,
    /// Largest entrywise change under node doubling accepted as converged.
    pub tolerance: f64,
    pub dense_cap: usize,
}

impl Default for ProjectorOptions {
    fn default() -> Self {
        Self {
            initial_nodes: 16,
            max_nodes: 1024,
            tolerance: 1e-8,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectorResult {
    pub matrix: DMatrix<f64>,
    pub radius: f64,
    pub nodes: usize,
    /// `‖P² − P‖_F`.
    pub idempotency_defect: f64,
    pub rank: usize,
    pub singular_values: [f64; 2],
    /// Largest imaginary part discarded from the quadrature sum.
    pub imaginary_residue: f64,
    /// Entrywise change at the last node doubling.
    pub quadrature_change: f64,
    /// Modulus of the eigenvalue nearest the origin other than zero.
    pub nearest_nonzero_eigenvalue: f64,
}

impl ProjectorResult {
    /// `P*1` normalized to `ν`-mean one: the density of the perturbed
    /// stationary measure with respect to `ν`.
    pub fn adjoint_density(&self, nu: &Measure) -> Vec<f64> {
        let w = DVector::from_column_slice(nu.weights());
        let pt_nu = self.matrix.transpose() * &w;
        let g: Vec<f64> = pt_nu.iter().zip(nu.weights()).map(|(a, b)| a / b).collect();
        let mean = nu.mean(&g);
        g.into_iter().map(|x| x / mean).collect()
    }
}

/// Default contour radius: half the gap of the unperturbed symmetric part.
pub fn default_contour_radius(gap: f64) -> f64 {
    0.5 * gap
}

type CMatrix = DMatrix<Complex<f64>>;

/// `Σ_q z_q (L − z_q)⁻¹` over the nodes `r·e^{2πi(q + offset)/Q}`.
fn resolvent_sum(l: &DMatrix<f64>, radius: f64, q: usize, offset: f64) -> Result<CMatrix> {
    let n = l.nrows();
    let lc: CMatrix = l.map(|v| Complex::new(v, 0.0));
    let terms: Vec<Result<CMatrix>> = (0..q)
        .into_par_iter()
        .map(|j| {
            let theta = 2.0 * std::f64::consts::PI * (j as f64 + offset) / q as f64;
            let z = Complex::from_polar(radius, theta);
            let mut m = lc.clone();
            for i in 0..n {
                m[(i, i)] -= z;
            }
            let inv = m.lu().try_inverse().ok_or(Error::ContourHitsSpectrum {
                radius,
                nearest: 0.0,
            })?;
            if inv.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::ContourHitsSpectrum {
                    radius,
                    nearest: 0.0,
                });
            }
            Ok(inv * z)
        })
        .collect();
    let mut sum = CMatrix::zeros(n, n);
    for t in terms {
        sum += t?;
    }
    Ok(sum)
}

/// `P = −(1/2πi)∮ (L − z)⁻¹ dz` over `|z| = radius` by the trapezoid rule,
/// doubling the node count until the entrywise change drops below tolerance.
pub fn riesz_projector(
    l_eps: &OperatorMatrix,
    radius: f64,
    opts: &ProjectorOptions,
) -> Result<ProjectorResult> {
    let n = l_eps.dim();
    if n > opts.dense_cap {
        return Err(Error::StateSpaceTooLarge {
            count: n as u128,
            cap: opts.dense_cap,
        });
    }
    if !(radius > 0.0) {
        return Err(Error::NonPositiveConstant {
            name: "contour radius",
            value: radius,
        });
    }
    let l = l_eps.matrix.to_dense();
    let mut moduli: Vec<f64> = l.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    moduli.sort_by(f64::total_cmp);
    let nearest_nonzero = moduli.get(1).copied().unwrap_or(f64::INFINITY);
    let margin = 1e-8 * l.amax().max(1.0);
    if radius >= nearest_nonzero - margin || radius <= moduli[0] + margin {
        let nearest = if (radius - moduli[0]).abs() < (nearest_nonzero - radius).abs() {
            moduli[0]
        } else {
            nearest_nonzero
        };
        return Err(Error::ContourHitsSpectrum { radius, nearest });
    }

    let mut q = opts.initial_nodes.max(2);
    let mut sum = resolvent_sum(&l, radius, q, 0.0)?;
    let mut change = f64::INFINITY;
    while q < opts.max_nodes {
        let odd = resolvent_sum(&l, radius, q, 0.5)?;
        let previous = &sum * Complex::new(-1.0 / q as f64, 0.0);
        sum += odd;
        q *= 2;
        let current = &sum * Complex::new(-1.0 / q as f64, 0.0);
        change = (current - previous)
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        if change <= opts.tolerance {
            break;
        }
    }
    if change > opts.tolerance {
        return Err(Error::QuadratureNotConverged { nodes: q, change });
    }
    let p = &sum * Complex::new(-1.0 / q as f64, 0.0);
    let imaginary_residue = p.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    let matrix = p.map(|v| v.re);
    let idempotency_defect = (&matrix * &matrix - &matrix).norm();
    let mut sv: Vec<f64> = matrix.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let rank_tol = 1e-6 * sv[0].max(f64::MIN_POSITIVE);
    let rank = sv.iter().filter(|&&s| s > rank_tol).count();
    Ok(ProjectorResult {
        matrix,
        radius,
        nodes: q,
        idempotency_defect,
        rank,
        singular_values: [sv[0], sv.get(1).copied().unwrap_or(0.0)],
        imaginary_residue,
        quadrature_change: change,
        nearest_nonzero_eigenvalue: nearest_nonzero,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeBoundReport {
    pub evaluations: usize,
    pub violations: usize,
    /// Smallest `(rhs − lhs)/rhs` seen.
    pub worst_slack: f64,
    /// Largest `(lhs − rhs)/rhs`, zero when nothing is violated.
    pub worst_violation: f64,
    pub a: f64,
    pub c0: f64,
}

/// Checks `‖Af‖ ≤ (C₀/√a)(λ⁻¹‖Lf‖ + λ‖f‖)` in `L₂[ν]` for random smooth `f`.
pub fn relative_bound_check(
    spec: &DiffusionSpec,
    l0: &OperatorMatrix,
    a_op: &OperatorMatrix,
    nu: &Measure,
    trials: usize,
    lambdas: &[f64],
    seed: u64,
) -> Result<RelativeBoundReport> {
    let field = spec
        .perturbation
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("relative bound needs a perturbation".into()))?;
    let a = compute_ellipticity_bound(&spec.coefficients, &spec.lattice, &spec.grid)?;
    let c0 = compute_c0(field, &spec.lattice, &spec.grid)?;
    let space = spec.state_space()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let functions: Vec<Vec<f64>> = (0..trials)
        .map(|_| random_trig(&space, &mut rng, 3))
        .collect();
    let mut report = RelativeBoundReport {
        evaluations: 0,
        violations: 0,
        worst_slack: f64::INFINITY,
        worst_violation: 0.0,
        a,
        c0,
    };
    let factor = c0 / a.sqrt();
    for f in &functions {
        let af = nu.norm2(&a_op.apply(f));
        let lf = nu.norm2(&l0.apply(f));
        let nf = nu.norm2(f);
        for &lambda in lambdas {
            let rhs = factor * (lf / lambda + lambda * nf);
            report.evaluations += 1;
            let slack = if rhs > 0.0 {
                (rhs - af) / rhs
            } else if af == 0.0 {
                0.0
            } else {
                -1.0
            };
            report.worst_slack = report.worst_slack.min(slack);
            if af > rhs {
                report.violations += 1;
                report.worst_violation = report.worst_violation.max(-slack);
            }
        }
    }
    Ok(report)
}
