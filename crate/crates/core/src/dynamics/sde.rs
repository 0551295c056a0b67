//! Euler-Maruyama simulation of the diffusion on the continuum torus.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Configuration, GridSpec};
use crate::model::{compute_drift_bound, DiffusionSpec};
use crate::observables::evaluate;
use crate::operators::assemble_generator;

use super::{Semigroup, SemigroupOptions};

/// Steps with `dt·b_max` above this fraction of `2π` are refused.
pub const STEP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    /// Keep every `k`-th state of each path when set.
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
    pub steps: usize,
    pub initial: Vec<f64>,
    /// Angles at the horizon, one vector per path.
    pub finals: Vec<Vec<f64>>,
    /// Recorded states per path when `record_every` was set.
    pub trajectories: Option<Vec<Vec<Vec<f64>>>>,
}

impl PathEnsemble {
    /// Sample mean of `f` at the horizon and its standard error.
    pub fn estimate(&self, f: impl Fn(&[f64]) -> f64) -> (f64, f64) {
        let values: Vec<f64> = self.finals.iter().map(|a| f(a)).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        (mean, (var / n).sqrt())
    }

    /// Columns: `path,site_0,…,site_{k−1}` with the horizon angles.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let sites = self.initial.len();
        let header: Vec<String> = (0..sites).map(|s| format!("site_{s}")).collect();
        writeln!(w, "path,{}", header.join(","))?;
        for (p, a) in self.finals.iter().enumerate() {
            let row: Vec<String> = a.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{p},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Standard normal by Box-Muller from two uniforms; always consumes four
/// 32-bit words, so each `(step, site)` draw sits at a fixed stream offset.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// `η ← η + b(η)dt + √(a(η)dt)·ξ` per site, angles reduced mod `2π`.
///
/// Path `p` draws from ChaCha stream `p` of the master seed, so ensembles are
/// bit-reproducible and independent of thread scheduling.
pub fn euler_maruyama(
    spec: &DiffusionSpec,
    initial: &[f64],
    opts: &EmOptions,
) -> Result<PathEnsemble> {
    let sites = spec.lattice.sites();
    if initial.len() != sites.len() {
        return Err(Error::DimensionMismatch {
            expected: sites.len(),
            got: initial.len(),
        });
    }
    if !(opts.dt > 0.0) || !(opts.horizon >= 0.0) || opts.paths == 0 {
        return Err(Error::InvalidInput(
            "need dt > 0, horizon >= 0 and at least one path".into(),
        ));
    }
    let b_max = compute_drift_bound(&spec.coefficients, &spec.lattice, &spec.grid)?;
    let limit = STEP_FRACTION * 2.0 * PI;
    if opts.dt * b_max > limit {
        return Err(Error::StepTooLarge {
            dt: opts.dt,
            product: opts.dt * b_max,
            limit,
        });
    }
    let steps = (opts.horizon / opts.dt).round() as usize;
    let start: Vec<f64> = initial.iter().map(|a| a.rem_euclid(2.0 * PI)).collect();
    let runs: Vec<(Vec<f64>, Option<Vec<Vec<f64>>>)> = (0..opts.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(p as u64);
            let mut eta = start.clone();
            let mut next = eta.clone();
            let mut record = opts.record_every.map(|_| vec![eta.clone()]);
            for step in 0..steps {
                let cfg = Configuration::new(&spec.lattice, &eta);
                for (s, site) in sites.iter().enumerate() {
                    let a = (spec.coefficients.diffusion)(site, &cfg);
                    let b = (spec.coefficients.drift)(site, &cfg);
                    let xi = normal(&mut rng);
                    next[s] =
                        (eta[s] + b * opts.dt + (a * opts.dt).sqrt() * xi).rem_euclid(2.0 * PI);
                }
                std::mem::swap(&mut eta, &mut next);
                if let (Some(rec), Some(k)) = (record.as_mut(), opts.record_every) {
                    if (step + 1) % k.max(1) == 0 {
                        rec.push(eta.clone());
                    }
                }
            }
            (eta, record)
        })
        .collect();
    let trajectories = opts.record_every.map(|_| {
        runs.iter()
            .map(|r| r.1.clone().unwrap_or_default())
            .collect()
    });
    Ok(PathEnsemble {
        seed: opts.seed,
        dt: opts.dt,
        horizon: steps as f64 * opts.dt,
        steps,
        initial: start,
        finals: runs.into_iter().map(|r| r.0).collect(),
        trajectories,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McComparison {
    pub monte_carlo: f64,
    pub standard_error: f64,
    /// `S_T f` at the start state from the grid generator.
    pub exact: f64,
    /// `(4/3)|S^{(M)}_T f − S^{(2M)}_T f|`, the extrapolated mesh error.
    pub mesh_error: f64,
    /// `C·dt` with `C = T·max|L²f|/2`.
    pub step_error: f64,
    /// `standard_error + mesh_error + step_error`.
    pub error_bar: f64,
    pub within: bool,
}

fn grid_value(
    spec: &DiffusionSpec,
    grid: GridSpec,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    start: &[f64],
    t: f64,
    opts: &SemigroupOptions,
) -> Result<(f64, Vec<f64>, crate::operators::OperatorMatrix)> {
    let mut s = spec.clone();
    s.grid = grid;
    let space = s.state_space()?;
    let h = grid.mesh();
    let digits: Vec<usize> = start
        .iter()
        .map(|a| {
            let k = a.rem_euclid(2.0 * PI) / h;
            if (k - k.round()).abs() > 1e-9 {
                Err(Error::InvalidInput(format!(
                    "start angle {a} is not on the grid with M = {}",
                    grid.points
                )))
            } else {
                Ok(k.round() as usize % grid.points)
            }
        })
        .collect::<Result<_>>()?;
    let values = evaluate(&space, f);
    let l = assemble_generator(&s)?;
    let st = Semigroup::new(&l, *opts).apply(&values, t)?;
    Ok((st[space.encode(&digits)], values, l))
}

/// Compares the Euler-Maruyama estimate of `S_T f(η₀)` with the grid
/// semigroup, within three combined error bars.
pub fn monte_carlo_check(
    spec: &DiffusionSpec,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    start: &[f64],
    em: &EmOptions,
    opts: &SemigroupOptions,
) -> Result<(McComparison, PathEnsemble)> {
    let ensemble = euler_maruyama(spec, start, em)?;
    let t = ensemble.horizon;
    let (mc, se) = ensemble.estimate(f);
    let (exact, _, _) = grid_value(spec, spec.grid, f, start, t, opts)?;
    let fine_grid = GridSpec::new(2 * spec.grid.points)?;
    let (fine, values, l_fine) = grid_value(spec, fine_grid, f, start, t, opts)?;
    let mesh_error = 4.0 / 3.0 * (exact - fine).abs();
    let l2f = l_fine.apply(&l_fine.apply(&values));
    let c = t * l2f.iter().fold(0.0f64, |m, v| m.max(v.abs())) / 2.0;
    let step_error = c * em.dt;
    let error_bar = se + mesh_error + step_error;
    Ok((
        McComparison {
            monte_carlo: mc,
            standard_error: se,
            exact,
            mesh_error,
            step_error,
            error_bar,
            within: (mc - exact).abs() <= 3.0 * error_bar,
        },
        ensemble,
    ))
}
