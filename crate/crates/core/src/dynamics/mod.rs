//! Semigroup evaluation `S_t = e^{tL}`, decay and locality experiments, and
//! Euler-Maruyama path simulation.

pub mod experiments;
pub mod sde;

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::krylov_expmv;
use crate::operators::OperatorMatrix;

pub use experiments::{
    hypercontractivity_check, l2_decay_experiment, triple_norm, truncation_experiment,
    uniform_decay_experiment, DecayKind, DecayReport, HypercontractivityReport, LocalObservable,
    TruncationReport,
};
pub use sde::{euler_maruyama, monte_carlo_check, EmOptions, McComparison, PathEnsemble};

/// Above this many states `S_t` is applied by Krylov projection; a dense
/// exponential costs `O(N³)` per distinct time step.
pub const DENSE_EXPM_CAP: usize = 1024;

/// Largest tolerated derivative residual `‖(d/dt)S_tf − L S_tf‖_∞ / (‖L‖_∞‖S_tf‖_∞)`.
pub const DERIVATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct SemigroupOptions {
    pub dense_cap: usize,
    pub krylov_dim: usize,
    pub krylov_tolerance: f64,
}

impl Default for SemigroupOptions {
    fn default() -> Self {
        Self {
            dense_cap: DENSE_EXPM_CAP,
            krylov_dim: 30,
            krylov_tolerance: 1e-14,
        }
    }
}

/// `e^{tL}` acting on vectors; dense exponentials are cached per time step.
pub struct Semigroup<'a> {
    l: &'a OperatorMatrix,
    dense: Option<DMatrix<f64>>,
    cache: Mutex<HashMap<u64, DMatrix<f64>>>,
    opts: SemigroupOptions,
}

impl<'a> Semigroup<'a> {
    pub fn new(l: &'a OperatorMatrix, opts: SemigroupOptions) -> Self {
        let dense = (l.dim() <= opts.dense_cap).then(|| l.matrix.to_dense());
        Self {
            l,
            dense,
            cache: Mutex::new(HashMap::new()),
            opts,
        }
    }

    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    /// `S_t f`.
    pub fn apply(&self, f: &[f64], t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "semigroup time must be nonnegative, got {t}"
            )));
        }
        if t == 0.0 {
            return Ok(f.to_vec());
        }
        match &self.dense {
            Some(d) => {
                let mut cache = self.cache.lock().expect("semigroup cache poisoned");
                let e = cache.entry(t.to_bits()).or_insert_with(|| (d * t).exp());
                Ok((&*e * DVector::from_column_slice(f)).as_slice().to_vec())
            }
            None => krylov_expmv(
                &self.l.matrix,
                f,
                t,
                self.opts.krylov_dim,
                self.opts.krylov_tolerance,
            ),
        }
    }

    /// `S_t f` at each of the nondecreasing `times`, stepping between them.
    pub fn trajectory(&self, f: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(times.len());
        let mut current = f.to_vec();
        let mut now = 0.0;
        for &t in times {
            if t < now {
                return Err(Error::InvalidInput(
                    "time grid must be nondecreasing".into(),
                ));
            }
            current = self.apply(&current, t - now)?;
            now = t;
            out.push(current.clone());
        }
        Ok(out)
    }

    /// `‖D − Lu‖_∞ / (‖L‖_∞ ‖u‖_∞)` where `D` is a Richardson-extrapolated
    /// forward difference of `s ↦ S_s u` at `s = 0`.
    pub fn derivative_residual(&self, u: &[f64]) -> Result<f64> {
        let scale = (0..self.l.dim())
            .map(|i| self.l.matrix.row(i).map(|e| e.1.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let sup = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 || sup == 0.0 {
            return Ok(0.0);
        }
        let delta = 0.01 / scale;
        let forward = |d: f64| -> Result<Vec<f64>> {
            let v = self.apply(u, d)?;
            Ok(v.iter().zip(u).map(|(a, b)| (a - b) / d).collect())
        };
        let d1 = forward(delta)?;
        let d2 = forward(delta / 2.0)?;
        let d4 = forward(delta / 4.0)?;
        let lu = self.l.apply(u);
        let worst = (0..u.len())
            .map(|i| {
                let r1 = 2.0 * d2[i] - d1[i];
                let r2 = 2.0 * d4[i] - d2[i];
                let extrapolated = (4.0 * r2 - r1) / 3.0;
                (extrapolated - lu[i]).abs()
            })
            .fold(0.0, f64::max);
        Ok(worst / (scale * sup))
    }
}

#[derive(Debug, Clone)]
pub struct SemigroupAction {
    pub value: Vec<f64>,
    pub derivative_residual: f64,
    pub dense: bool,
}

/// `S_t f` with the derivative residual check at time `t`.
pub fn semigroup_apply(
    l: &OperatorMatrix,
    f: &[f64],
    t: f64,
    opts: &SemigroupOptions,
) -> Result<SemigroupAction> {
    let sg = Semigroup::new(l, *opts);
    let value = sg.apply(f, t)?;
    let derivative_residual = sg.derivative_residual(&value)?;
    if derivative_residual > DERIVATIVE_TOLERANCE {
        return Err(Error::NoConvergence {
            method: "semigroup derivative check",
            iterations: 0,
            residual: derivative_residual,
        });
    }
    Ok(SemigroupAction {
        value,
        derivative_residual,
        dense: sg.is_dense(),
    })
}
