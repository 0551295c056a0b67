//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion, then asserts it.
//!
//! Desk models:
//! - (i) one site, `M ∈ {8, 16, 32}`, `Φ = 0.5 cos η₀`, `A = ∂₀`;
//! - (ii) three sites (`d = 1`, `n = 1`, frozen), `Φᵢ = 0.5 cos(ηᵢ − ηᵢ₊₁)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use torus_diffusion::dynamics::experiments::{hypercontractivity_check, LocalObservable};
use torus_diffusion::dynamics::{
    euler_maruyama, l2_decay_experiment, monte_carlo_check, truncation_experiment,
    uniform_decay_experiment, EmOptions, SemigroupOptions,
};
use torus_diffusion::fit::fit_line;
use torus_diffusion::lattice::{Closure, GridSpec, LatticeSpec, DEFAULT_DENSE_CAP};
use torus_diffusion::measure::Measure;
use torus_diffusion::model::{
    build_ibm_model, compute_c0, compute_ellipticity_bound, DiffusionSpec, NeighbourCosine,
    OnSiteCosine, PerturbationField,
};
use torus_diffusion::observables::random_trig;
use torus_diffusion::operators::{
    assemble_first_order, assemble_generator, dirichlet_form, nu_adjoint, perturbed_generator,
    symmetrize, OperatorMatrix,
};
use torus_diffusion::perturbation::{
    default_contour_radius, direct_perturbed_measure, empirical_radius, relative_bound_check,
    riesz_projector, rs_coefficients, series_density, CriticalRadius, ProjectorOptions,
    SeriesOptions,
};
use torus_diffusion::stationary::{
    lsi_constant_estimate, relative_stationarity, spectral_gap, stationary_measure, LsiMethod,
    SpectralReport, StationaryMethod, StationaryOptions,
};

const BETA: f64 = 0.5;

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    println!(
        "{} [{id:>2}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

struct Model {
    spec: DiffusionSpec,
    l0: OperatorMatrix,
    a: OperatorMatrix,
    nu: Measure,
    spectral: SpectralReport,
}

impl Model {
    fn build(spec: DiffusionSpec) -> Self {
        let spec = spec.with_perturbation(PerturbationField::origin_derivative());
        let l0 = assemble_generator(&spec).unwrap();
        let a = assemble_first_order(
            spec.perturbation.as_ref().unwrap(),
            &spec.lattice,
            &spec.grid,
        )
        .unwrap();
        let nu = stationary_measure(&l0, &StationaryOptions::default()).unwrap();
        let (s, _) = symmetrize(&l0, &nu).unwrap();
        let spectral = spectral_gap(&s, &nu, DEFAULT_DENSE_CAP).unwrap();
        Self {
            spec,
            l0,
            a,
            nu,
            spectral,
        }
    }

    fn single(m: usize) -> Self {
        Self::build(single_spec(m))
    }

    fn chain(m: usize) -> Self {
        Self::build(chain_spec(m, true))
    }
}

fn single_spec(m: usize) -> DiffusionSpec {
    build_ibm_model(
        Arc::new(OnSiteCosine { beta: BETA }),
        &LatticeSpec::single_site(),
        &GridSpec::new(m).unwrap(),
    )
}

fn chain_spec(m: usize, coupled: bool) -> DiffusionSpec {
    let lattice = LatticeSpec::new(1, 1, Closure::Frozen).unwrap();
    let grid = GridSpec::new(m).unwrap();
    if coupled {
        build_ibm_model(Arc::new(NeighbourCosine { beta: BETA }), &lattice, &grid)
    } else {
        build_ibm_model(Arc::new(OnSiteCosine { beta: BETA }), &lattice, &grid)
    }
}

fn times(end: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| end * k as f64 / (count - 1) as f64)
        .collect()
}

fn sup(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[test]
fn c01_stationarity() {
    let mut worst_residual = 0.0f64;
    let mut worst_tv = 0.0f64;
    let specs: Vec<DiffusionSpec> = [8, 16, 32]
        .into_iter()
        .map(single_spec)
        .chain([6, 8, 10, 12].into_iter().map(|m| chain_spec(m, true)))
        .collect();
    for spec in &specs {
        let l = assemble_generator(spec).unwrap();
        let dense = stationary_measure(
            &l,
            &StationaryOptions {
                method: StationaryMethod::Dense,
                ..Default::default()
            },
        )
        .unwrap();
        let iterative = stationary_measure(
            &l,
            &StationaryOptions {
                method: StationaryMethod::Iterative,
                ..Default::default()
            },
        )
        .unwrap();
        worst_residual = worst_residual
            .max(relative_stationarity(&l, &dense))
            .max(relative_stationarity(&l, &iterative));
        worst_tv = worst_tv.max(dense.total_variation(&iterative));
    }
    verdict(
        1,
        "stationarity",
        worst_residual <= 1e-10 && worst_tv <= 1e-8,
        format!("max relative residual {worst_residual:.2e} (<= 1e-10), max dense/iterative TV {worst_tv:.2e} (<= 1e-8)"),
    );
}

#[test]
fn c02_dirichlet_form_order() {
    // degree-1 trigonometric polynomials, drawn once and sampled on every grid
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let coeffs: Vec<[f64; 3]> = (0..20)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let meshes = [8usize, 16, 32];
    let mut mismatch = vec![Vec::new(); coeffs.len()];
    for &m in &meshes {
        let model = Model::single(m);
        let angles = model.spec.grid.angles();
        for (c, out) in coeffs.iter().zip(&mut mismatch) {
            let f: Vec<f64> = angles
                .iter()
                .map(|x| c[0] + c[1] * x.cos() + c[2] * x.sin())
                .collect();
            let d = dirichlet_form(&model.l0, &model.spec, &model.nu, &f).unwrap();
            out.push((d.lhs - d.rhs).abs());
        }
    }
    let log_h: Vec<f64> = meshes.iter().map(|&m| (2.0 * PI / m as f64).ln()).collect();
    let orders: Vec<f64> = mismatch
        .iter()
        .map(|e| {
            fit_line(&log_h, &e.iter().map(|x| x.ln()).collect::<Vec<_>>())
                .unwrap()
                .slope
        })
        .collect();
    let (lo, hi) = orders
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &o| {
            (a.min(o), b.max(o))
        });
    verdict(
        2,
        "Dirichlet-form mismatch is second order",
        lo >= 1.8 && hi <= 2.2,
        format!("fitted orders over M = 8, 16, 32 for 20 functions lie in [{lo:.3}, {hi:.3}] (need [1.8, 2.2])"),
    );
}

#[test]
fn c03_adjoint_exactness() {
    let mut worst = 0.0f64;
    for model in [Model::single(16), Model::chain(8)] {
        let adj = nu_adjoint(&model.l0, &model.nu).unwrap();
        let n = model.l0.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lf = model.l0.apply(&f);
            let lhs = model.nu.inner(&g, &lf);
            let rhs = model.nu.inner(&adj.apply(&g), &f);
            // Cauchy-Schwarz scale, so pairs with a near-zero product do not inflate the defect
            let scale = model.nu.norm2(&g) * model.nu.norm2(&lf);
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    verdict(
        3,
        "adjoint exactness",
        worst <= 1e-12,
        format!("max |(g,Lf) - (L*g,f)| / (|g| |Lf|) over 2 x 100 pairs = {worst:.2e} (<= 1e-12)"),
    );
}

#[test]
fn c04_recurrence_residuals() {
    let mut worst_res = 0.0f64;
    let mut worst_mean = 0.0f64;
    for model in [
        Model::single(8),
        Model::single(16),
        Model::single(32),
        Model::chain(6),
        Model::chain(8),
    ] {
        let s =
            rs_coefficients(&model.l0, &model.a, &model.nu, 6, &SeriesOptions::default()).unwrap();
        worst_res = worst_res.max(sup(s.residuals.iter().copied()));
        worst_mean = worst_mean.max(sup(s.means[1..].iter().copied()));
    }
    verdict(
        4,
        "series recurrence",
        worst_res <= 1e-9 && worst_mean <= 1e-12,
        format!("max relative residual {worst_res:.2e} (<= 1e-9), max |<f_k>| {worst_mean:.2e} (<= 1e-12), k <= 6"),
    );
}

#[test]
fn c05_first_order_term() {
    let mut worst = 0.0f64;
    for m in [8, 16, 32] {
        let model = Model::single(m);
        let s =
            rs_coefficients(&model.l0, &model.a, &model.nu, 1, &SeriesOptions::default()).unwrap();
        // oracle: stationarity of ν(1 + εf₁) at first order, in measure
        // coordinates: L₀ᵀ(νf₁) = −Aᵀν, solved by SVD with Σ νf₁ = 0
        let w = DVector::from_column_slice(model.nu.weights());
        let rhs = -(model.a.matrix.to_dense().transpose() * &w);
        let x = model
            .l0
            .matrix
            .to_dense()
            .transpose()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .unwrap();
        let f1: Vec<f64> = x
            .iter()
            .zip(model.nu.weights())
            .map(|(a, b)| a / b)
            .collect();
        let f1 = model.nu.centered(&f1);
        let diff: Vec<f64> = f1
            .iter()
            .zip(&s.coefficients[1])
            .map(|(a, b)| a - b)
            .collect();
        worst = worst.max(model.nu.norm2(&diff) / model.nu.norm2(&f1));
    }
    verdict(
        5,
        "first-order term",
        worst <= 1e-9,
        format!("max relative L2 difference to the single-equation solve over M = 8, 16, 32: {worst:.2e} (<= 1e-9)"),
    );
}

#[test]
fn c06_series_against_direct() {
    let mut worst_ratio = 0.0f64;
    let mut worst_final = 0.0f64;
    for m in [8, 16, 32] {
        let model = Model::single(m);
        let s =
            rs_coefficients(&model.l0, &model.a, &model.nu, 6, &SeriesOptions::default()).unwrap();
        let fit = empirical_radius(&s, 2).unwrap();
        let eps = 0.1 * fit.epsilon_hat;
        let direct = direct_perturbed_measure(
            &model.spec,
            &model.l0,
            &model.a,
            &model.nu,
            eps,
            &StationaryOptions::default(),
        )
        .unwrap();
        let err: Vec<f64> = (0..=6)
            .map(|k| {
                let g = series_density(&s, &model.nu, eps, k).g;
                model.nu.norm2(
                    &g.iter()
                        .zip(&direct.g)
                        .map(|(a, b)| a - b)
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        for k in 1..6 {
            worst_ratio = worst_ratio.max(err[k + 1] / err[k]);
        }
        worst_final = worst_final.max(err[6] / err[0]);
    }
    verdict(
        6,
        "series converges to the direct solve",
        worst_ratio <= 0.15 && worst_final <= 1e-4,
        format!("eps = 0.1 eps_hat, M = 8, 16, 32: max err(K+1)/err(K) for K = 1..5 is {worst_ratio:.3} (<= 0.15), max err(6)/err(0) {worst_final:.2e} (<= 1e-4)"),
    );
}

#[test]
fn c07_coefficient_growth() {
    let mut lines = Vec::new();
    let mut pass = true;
    for m in [8, 16, 32] {
        let model = Model::single(m);
        let s =
            rs_coefficients(&model.l0, &model.a, &model.nu, 6, &SeriesOptions::default()).unwrap();
        let fit = empirical_radius(&s, 2).unwrap();
        let a = compute_ellipticity_bound(
            &model.spec.coefficients,
            &model.spec.lattice,
            &model.spec.grid,
        )
        .unwrap();
        let c0 = compute_c0(
            model.spec.perturbation.as_ref().unwrap(),
            &model.spec.lattice,
            &model.spec.grid,
        )
        .unwrap();
        let est =
            lsi_constant_estimate(&model.spec, &model.spectral, LsiMethod::HolleyStroock).unwrap();
        let crit = CriticalRadius::new(a, c0, est.gamma_hat, est.method).unwrap();
        let r2 = fit.fit.r_squared;
        let exceeds = fit.exceeds(&crit).unwrap();
        pass &= r2 >= 0.99 && exceeds;
        lines.push(format!(
            "M = {m}: R^2 = {r2:.4} (>= 0.99), eps_hat = {:.4} vs eps_c = {:.4}",
            fit.epsilon_hat, crit.value
        ));
    }
    verdict(
        7,
        "coefficient growth is log-linear",
        pass,
        lines.join("; "),
    );
}

#[test]
fn c08_riesz_projector() {
    let model = Model::single(16);
    let radius = default_contour_radius(model.spectral.gap);
    let opts = ProjectorOptions::default();
    let p0 = riesz_projector(&model.l0, radius, &opts).unwrap();
    let w = model.nu.weights();
    let n = model.l0.dim();
    let p0_err = sup((0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| p0.matrix[(i, j)] - w[j]));

    let s = rs_coefficients(&model.l0, &model.a, &model.nu, 6, &SeriesOptions::default()).unwrap();
    let eps = 0.1 * empirical_radius(&s, 2).unwrap().epsilon_hat;
    let l_eps = perturbed_generator(&model.l0, &model.a, eps).unwrap();
    let p = riesz_projector(&l_eps, radius, &opts).unwrap();
    let direct = direct_perturbed_measure(
        &model.spec,
        &model.l0,
        &model.a,
        &model.nu,
        eps,
        &StationaryOptions::default(),
    )
    .unwrap();
    let density_err = sup(p
        .adjoint_density(&model.nu)
        .iter()
        .zip(&direct.g)
        .map(|(a, b)| a - b));
    let idem = p.idempotency_defect.max(p0.idempotency_defect);
    verdict(
        8,
        "Riesz projector",
        idem <= 1e-8 && p.rank == 1 && p0.rank == 1 && p0_err <= 1e-8 && density_err <= 1e-6,
        format!(
            "idempotency {idem:.2e} (<= 1e-8), ranks {}/{} (1), |P0 - 1 nu^T| {p0_err:.2e} (<= 1e-8), |P*1 - g_direct| {density_err:.2e} (<= 1e-6), {} nodes",
            p0.rank, p.rank, p.nodes
        ),
    );
}

#[test]
fn c09_relative_boundedness() {
    let lambdas = [0.1, 1.0, 10.0];
    let mut violations = Vec::new();
    let mut details = Vec::new();
    for m in [8, 16, 32] {
        let model = Model::single(m);
        let r = relative_bound_check(
            &model.spec,
            &model.l0,
            &model.a,
            &model.nu,
            1000,
            &lambdas,
            9,
        )
        .unwrap();
        details.push(format!(
            "M = {m}: {} violations of {}, worst {:.2e}",
            r.violations, r.evaluations, r.worst_violation
        ));
        violations.push(r.worst_violation);
    }
    // any violation must be a discretization effect shrinking like h²
    let shrinking = violations
        .windows(2)
        .all(|w| w[0] == 0.0 && w[1] == 0.0 || w[1] <= w[0] / 2f64.powf(1.8));
    let pass = violations[0] == 0.0 || shrinking;
    verdict(9, "relative boundedness", pass, details.join("; "));
}

#[test]
fn c10_l2_decay() {
    let model = Model::single(16);
    let space = model.spec.state_space().unwrap();
    let ts = times(3.0, 20);
    let opts = SemigroupOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures = 0;
    for _ in 0..20 {
        let f = random_trig(&space, &mut rng, 3);
        let r = l2_decay_experiment(
            &model.l0,
            &model.nu,
            model.spectral.gap,
            None,
            &f,
            &ts,
            &opts,
        )
        .unwrap();
        failures += usize::from(!r.passed());
    }
    let eig = l2_decay_experiment(
        &model.l0,
        &model.nu,
        model.spectral.gap,
        None,
        &model.spectral.gap_vector,
        &ts,
        &opts,
    )
    .unwrap();
    let dev = eig
        .norms
        .iter()
        .zip(&eig.gap_bounds)
        .map(|(a, b)| (a - b).abs() / b)
        .fold(0.0, f64::max);
    verdict(
        10,
        "L2 decay at the gap rate",
        failures == 0 && dev <= 1e-6,
        format!("{failures} of 20 random functions exceed the bound at 20 times; gap eigenvector relative deviation {dev:.2e} (<= 1e-6)"),
    );
}

#[test]
fn c11_uniform_decay() {
    let mut pass = true;
    let mut lines = Vec::new();
    for m in [6, 8] {
        let model = Model::chain(m);
        let space = model.spec.state_space().unwrap();
        let f = LocalObservable::cosine(vec![0]).evaluate(&space).unwrap();
        let ts = times(5.0 / model.spectral.gap, 21);
        let r = uniform_decay_experiment(
            &model.spec,
            &model.l0,
            &model.nu,
            model.spectral.gap,
            &f,
            &ts,
            &SemigroupOptions::default(),
        )
        .unwrap();
        let fit = r.fit.unwrap();
        pass &= fit.r_squared >= 0.99 && -fit.slope > 0.0;
        lines.push(format!(
            "M = {m}: rate {:.4} (gap {:.4}), R^2 = {:.6}",
            -fit.slope, model.spectral.gap, fit.r_squared
        ));
    }
    verdict(11, "uniform-norm exponential decay", pass, lines.join("; "));
}

#[test]
fn c12_hypercontractivity() {
    let model = Model::single(16);
    let est =
        lsi_constant_estimate(&model.spec, &model.spectral, LsiMethod::HolleyStroock).unwrap();
    let space = model.spec.state_space().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let fs: Vec<Vec<f64>> = (0..100).map(|_| random_trig(&space, &mut rng, 3)).collect();
    let r = hypercontractivity_check(
        &model.l0,
        &model.nu,
        est.gamma_hat,
        &fs,
        &times(2.0, 21),
        &SemigroupOptions::default(),
    )
    .unwrap();
    verdict(
        12,
        "hypercontractivity",
        r.violations == 0,
        format!(
            "{} violations in {} evaluations, worst |S_t f|_p(t) / |f|_2 = {:.6}, gamma_hat = {:.4}",
            r.violations, r.evaluations, r.worst_ratio, r.gamma_hat
        ),
    );
}

#[test]
fn c13_monte_carlo() {
    let spec = single_spec(16);
    let em = EmOptions {
        dt: 1e-3,
        horizon: 0.5,
        paths: 10_000,
        seed: 13,
        record_every: None,
    };
    let f = |a: &[f64]| a[0].cos();
    let (cmp, ens) =
        monte_carlo_check(&spec, &f, &[0.0], &em, &SemigroupOptions::default()).unwrap();
    let again = euler_maruyama(&spec, &[0.0], &em).unwrap();
    let reproducible = again.finals == ens.finals;
    verdict(
        13,
        "Monte Carlo consistency",
        cmp.within && reproducible,
        format!(
            "MC {:.5} vs exact {:.5}, |diff| {:.2e} <= 3 x {:.2e}: {}; bit-reproducible: {reproducible}",
            cmp.monte_carlo,
            cmp.exact,
            (cmp.monte_carlo - cmp.exact).abs(),
            cmp.error_bar,
            cmp.within
        ),
    );
}

#[test]
fn c14_truncation_locality() {
    let ts = times(2.0, 11);
    let opts = SemigroupOptions::default();
    let obs = LocalObservable::cosine(vec![0]);
    let coupled = truncation_experiment(&chain_spec(6, true), &obs, &ts, 1, 2, &opts).unwrap();
    let free = truncation_experiment(&chain_spec(6, false), &obs, &ts, 1, 2, &opts).unwrap();
    let start = coupled.distance[0];
    let monotone = coupled.distance.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    let free_max = sup(free.distance.iter().copied());
    verdict(
        14,
        "truncation locality",
        start == 0.0 && monotone && free_max <= 1e-12,
        format!(
            "D(0) = {start:.1e}, nondecreasing: {monotone}, D(u_max) = {:.3e}; non-interacting max D = {free_max:.1e} (<= 1e-12)",
            coupled.distance.last().unwrap()
        ),
    );
}
