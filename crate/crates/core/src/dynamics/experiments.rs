//! Decay, truncation and hypercontractivity experiments on `S_t`.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_line, LineFit};
use crate::lattice::{Closure, LatticeSpec, StateSpace};
use crate::measure::Measure;
use crate::model::DiffusionSpec;
use crate::operators::{assemble_generator, OperatorMatrix};
use crate::stationary::{LsiEstimate, LsiMethod};

use super::{Semigroup, SemigroupOptions};

/// Relative slack allowed for roundoff when comparing against a bound.
const BOUND_SLACK: f64 = 1e-9;

/// An observable reading only the listed sites, given in that order.
#[derive(Clone)]
pub struct LocalObservable {
    pub support: Vec<Vec<i64>>,
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub label: String,
}

impl std::fmt::Debug for LocalObservable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalObservable")
            .field("support", &self.support)
            .field("label", &self.label)
            .finish_non_exhaustive()
    }
}

impl LocalObservable {
    /// `cos(η_site)`.
    pub fn cosine(site: Vec<i64>) -> Self {
        Self {
            support: vec![site],
            f: Arc::new(|a| a[0].cos()),
            label: "cos".into(),
        }
    }

    pub fn evaluate(&self, space: &StateSpace) -> Result<Vec<f64>> {
        let lattice = space.lattice();
        let slots = self
            .support
            .iter()
            .map(|s| {
                lattice.locate(s).filter(|_| lattice.contains(s)).ok_or(
                    Error::UnsupportedObservable {
                        site: s.clone(),
                        half_width: lattice.half_width,
                    },
                )
            })
            .collect::<Result<Vec<usize>>>()?;
        Ok(crate::observables::evaluate(space, |a| {
            let local: Vec<f64> = slots.iter().map(|&k| a[k]).collect();
            (self.f)(&local)
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayKind {
    L2,
    Sup,
}

#[derive(Debug, Clone)]
pub struct DecayReport {
    pub kind: DecayKind,
    pub times: Vec<f64>,
    /// `‖S_tf − ⟨f⟩_ν‖` in the norm given by `kind`.
    pub norms: Vec<f64>,
    /// `e^{−λ₁t}‖f − ⟨f⟩_ν‖_{2,ν}` (L2 only).
    pub gap_bounds: Vec<f64>,
    /// `e^{−(a/γ̂)t}‖f − ⟨f⟩_ν‖_{2,ν}` (L2 only, when `γ̂` is supplied).
    pub lsi_bounds: Vec<f64>,
    /// Fit of `log norm` against `t` over the tail window `[t_m/2, t_m]`.
    pub fit: Option<LineFit>,
    pub gap: f64,
    pub lsi_rate: Option<f64>,
    pub lsi_method: Option<LsiMethod>,
    /// Discrete `|||f|||` (sup-norm experiments).
    pub triple_norm: Option<f64>,
    /// `A` in `sup|S_tf − ⟨f⟩| ≈ A|||f|||e^{−rate·t}`.
    pub fitted_constant: Option<f64>,
    pub verdicts: Vec<(String, bool)>,
}

impl DecayReport {
    pub fn fitted_rate(&self) -> Option<f64> {
        self.fit.map(|f| -f.slope)
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.1)
    }

    /// Columns: `t,norm,gap_bound,lsi_bound`; bounds left empty when absent.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,norm,gap_bound,lsi_bound")?;
        for (k, t) in self.times.iter().enumerate() {
            let g = self
                .gap_bounds
                .get(k)
                .map(|v| format!("{v:.16e}"))
                .unwrap_or_default();
            let l = self
                .lsi_bounds
                .get(k)
                .map(|v| format!("{v:.16e}"))
                .unwrap_or_default();
            writeln!(w, "{t:.16e},{:.16e},{g},{l}", self.norms[k])?;
        }
        Ok(())
    }
}

fn tail_fit(times: &[f64], norms: &[f64]) -> Option<LineFit> {
    let t_end = *times.last()?;
    let floor = 1e-12 * norms.iter().copied().fold(0.0, f64::max);
    let (ts, logs): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(norms)
        .filter(|(t, n)| **t >= 0.5 * t_end && **n > floor && **n > 0.0)
        .map(|(t, n)| (*t, n.ln()))
        .unzip();
    fit_line(&ts, &logs)
}

/// `L₂[ν]` decay of `S_tf − ⟨f⟩_ν` against `e^{−λ₁t}` and, when given,
/// the looser `e^{−(a/γ̂)t}`.
pub fn l2_decay_experiment(
    l: &OperatorMatrix,
    nu: &Measure,
    gap: f64,
    lsi: Option<(f64, LsiEstimate)>,
    f: &[f64],
    times: &[f64],
    opts: &SemigroupOptions,
) -> Result<DecayReport> {
    let sg = Semigroup::new(l, *opts);
    let mean = nu.mean(f);
    let centered: Vec<f64> = f.iter().map(|x| x - mean).collect();
    let initial = nu.norm2(&centered);
    let traj = sg.trajectory(&centered, times)?;
    let norms: Vec<f64> = traj.iter().map(|u| nu.norm2(&nu.centered(u))).collect();
    let gap_bounds: Vec<f64> = times.iter().map(|t| (-gap * t).exp() * initial).collect();
    let holds = |bounds: &[f64]| {
        norms
            .iter()
            .zip(bounds)
            .all(|(n, b)| *n <= b * (1.0 + BOUND_SLACK) + 1e-14 * initial.max(1e-300))
    };
    let mut verdicts = vec![("gap_bound".to_string(), holds(&gap_bounds))];
    let (lsi_rate, lsi_method, lsi_bounds) = match lsi {
        Some((a, est)) => {
            let rate = a / est.gamma_hat;
            let b: Vec<f64> = times.iter().map(|t| (-rate * t).exp() * initial).collect();
            verdicts.push(("lsi_bound".to_string(), holds(&b)));
            (Some(rate), Some(est.method), b)
        }
        None => (None, None, Vec::new()),
    };
    Ok(DecayReport {
        kind: DecayKind::L2,
        times: times.to_vec(),
        fit: tail_fit(times, &norms),
        norms,
        gap_bounds,
        lsi_bounds,
        gap,
        lsi_rate,
        lsi_method,
        triple_norm: None,
        fitted_constant: None,
        verdicts,
    })
}

/// Discrete `|||f|||`: the largest second difference over states and site
/// pairs (mixed for distinct sites), divided by `h²`.
pub fn triple_norm(space: &StateSpace, f: &[f64]) -> f64 {
    let h2 = space.grid().mesh().powi(2);
    let sites = space.site_count();
    (0..space.len())
        .map(|i| {
            let mut worst = 0.0f64;
            for s in 0..sites {
                let up = space.shift(i, s, true);
                let dn = space.shift(i, s, false);
                worst = worst.max((f[up] - 2.0 * f[i] + f[dn]).abs());
                for t in s + 1..sites {
                    let ut = space.shift(i, t, true);
                    let both = space.shift(up, t, true);
                    worst = worst.max((f[both] - f[up] - f[ut] + f[i]).abs());
                }
            }
            worst / h2
        })
        .fold(0.0, f64::max)
}

/// Exhaustive `sup_η |S_tf(η) − ⟨f⟩_ν|` with an exponential tail fit.
pub fn uniform_decay_experiment(
    spec: &DiffusionSpec,
    l: &OperatorMatrix,
    nu: &Measure,
    gap: f64,
    f: &[f64],
    times: &[f64],
    opts: &SemigroupOptions,
) -> Result<DecayReport> {
    let space = spec.state_space()?;
    let sg = Semigroup::new(l, *opts);
    let mean = nu.mean(f);
    let traj = sg.trajectory(f, times)?;
    let norms: Vec<f64> = traj
        .iter()
        .map(|u| u.iter().fold(0.0f64, |m, x| m.max((x - mean).abs())))
        .collect();
    let fit = tail_fit(times, &norms);
    let tn = triple_norm(&space, f);
    let fitted_constant = fit.and_then(|fit| (tn > 0.0).then(|| fit.intercept.exp() / tn));
    let rate = fit.map(|fit| -fit.slope);
    let verdicts = vec![
        ("positive_rate".to_string(), rate.is_some_and(|r| r > 0.0)),
        (
            "fit_quality".to_string(),
            fit.is_some_and(|f| f.r_squared >= 0.99),
        ),
        (
            "rate_vs_gap".to_string(),
            rate.is_some_and(|r| r >= 0.5 * gap),
        ),
    ];
    Ok(DecayReport {
        kind: DecayKind::Sup,
        times: times.to_vec(),
        norms,
        gap_bounds: Vec::new(),
        lsi_bounds: Vec::new(),
        fit,
        gap,
        lsi_rate: None,
        lsi_method: None,
        triple_norm: Some(tn),
        fitted_constant,
        verdicts,
    })
}

#[derive(Debug, Clone)]
pub struct TruncationReport {
    pub times: Vec<f64>,
    pub n: usize,
    pub n_prime: usize,
    /// `D(u)` between scales `n` and `n′`.
    pub distance: Vec<f64>,
    /// `D(u)` between scales `n − 1` and `n′`, when `n ≥ 1` and the
    /// observable fits in the smaller box.
    pub coarser: Option<Vec<f64>>,
    pub verdicts: Vec<(String, bool)>,
}

impl TruncationReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.1)
    }
}

/// Index map from the scale-`n` states into the scale-`n′` state space,
/// with every coordinate outside `Λ_n` at grid angle 0.
fn embedding(small: &StateSpace, large: &StateSpace) -> Vec<usize> {
    let slots: Vec<Option<usize>> = large
        .sites()
        .iter()
        .map(|s| {
            small
                .lattice()
                .locate(s)
                .filter(|_| small.lattice().contains(s))
        })
        .collect();
    let mut digits = vec![0usize; small.site_count()];
    let mut out = vec![0usize; large.site_count()];
    (0..small.len())
        .map(|i| {
            small.decode_into(i, &mut digits);
            for (k, slot) in slots.iter().enumerate() {
                out[k] = slot.map_or(0, |s| digits[s]);
            }
            large.encode(&out)
        })
        .collect()
}

fn scale_distance(
    spec: &DiffusionSpec,
    observable: &LocalObservable,
    times: &[f64],
    n: usize,
    large: &(StateSpace, Vec<Vec<f64>>),
    opts: &SemigroupOptions,
) -> Result<Vec<f64>> {
    let lattice = LatticeSpec::new(spec.lattice.dim, n, Closure::Frozen)?;
    let small_spec = spec.with_lattice(lattice);
    let space = small_spec.state_space()?;
    let f = observable.evaluate(&space)?;
    let l = assemble_generator(&small_spec)?;
    let traj = Semigroup::new(&l, *opts).trajectory(&f, times)?;
    let map = embedding(&space, &large.0);
    Ok(traj
        .iter()
        .zip(&large.1)
        .map(|(u, v)| {
            map.iter()
                .enumerate()
                .map(|(i, &j)| (u[i] - v[j]).abs())
                .fold(0.0, f64::max)
        })
        .collect())
}

/// `D(u) = max_η |S_u^{(n)}f(η) − S_u^{(n′)}f(η)|` over the scale-`n` states,
/// both dynamics on Frozen boxes.
pub fn truncation_experiment(
    spec: &DiffusionSpec,
    observable: &LocalObservable,
    times: &[f64],
    n: usize,
    n_prime: usize,
    opts: &SemigroupOptions,
) -> Result<TruncationReport> {
    if n >= n_prime {
        return Err(Error::InvalidInput(format!(
            "need n < n', got {n} and {n_prime}"
        )));
    }
    let small = LatticeSpec::new(spec.lattice.dim, n, Closure::Frozen)?;
    for s in &observable.support {
        if !small.contains(s) {
            return Err(Error::UnsupportedObservable {
                site: s.clone(),
                half_width: n,
            });
        }
    }
    let large_spec = spec.with_lattice(LatticeSpec::new(
        spec.lattice.dim,
        n_prime,
        Closure::Frozen,
    )?);
    let large_space = large_spec.state_space()?;
    let l_large = assemble_generator(&large_spec)?;
    let f_large = observable.evaluate(&large_space)?;
    let traj_large = Semigroup::new(&l_large, *opts).trajectory(&f_large, times)?;
    let large = (large_space, traj_large);

    let distance = scale_distance(spec, observable, times, n, &large, opts)?;
    let coarser = if n >= 1 {
        match scale_distance(spec, observable, times, n - 1, &large, opts) {
            Ok(d) => Some(d),
            Err(Error::UnsupportedObservable { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let tol = 1e-12;
    let mut verdicts = Vec::new();
    if times.first() == Some(&0.0) {
        verdicts.push(("zero_at_start".to_string(), distance[0] <= 1e-14));
    }
    verdicts.push((
        "nondecreasing".to_string(),
        distance.windows(2).all(|w| w[1] >= w[0] - tol),
    ));
    if let Some(c) = &coarser {
        verdicts.push((
            "shrinks_in_n".to_string(),
            c.iter().zip(&distance).all(|(a, b)| *b <= a + tol),
        ));
    }
    Ok(TruncationReport {
        times: times.to_vec(),
        n,
        n_prime,
        distance,
        coarser,
        verdicts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypercontractivityReport {
    pub evaluations: usize,
    pub violations: usize,
    /// Largest `‖S_tf‖_{p(t),ν} / ‖f‖_{2,ν}`.
    pub worst_ratio: f64,
    pub gamma_hat: f64,
}

/// `p(t) = 1 + e^{4t/γ}`.
pub fn gross_exponent(t: f64, gamma: f64) -> f64 {
    1.0 + (4.0 * t / gamma).exp()
}

/// Checks `‖S_tf‖_{p(t),ν} ≤ ‖f‖_{2,ν}` at every time for every function.
pub fn hypercontractivity_check(
    l: &OperatorMatrix,
    nu: &Measure,
    gamma_hat: f64,
    functions: &[Vec<f64>],
    times: &[f64],
    opts: &SemigroupOptions,
) -> Result<HypercontractivityReport> {
    let sg = Semigroup::new(l, *opts);
    let mut report = HypercontractivityReport {
        evaluations: 0,
        violations: 0,
        worst_ratio: 0.0,
        gamma_hat,
    };
    for f in functions {
        let base = nu.norm2(f);
        let traj = sg.trajectory(f, times)?;
        for (u, t) in traj.iter().zip(times) {
            let lhs = nu.norm_p(u, gross_exponent(*t, gamma_hat));
            let ratio = if base == 0.0 { 0.0 } else { lhs / base };
            report.evaluations += 1;
            report.worst_ratio = report.worst_ratio.max(ratio);
            if ratio > 1.0 + 1e-12 {
                report.violations += 1;
            }
        }
    }
    Ok(report)
}
