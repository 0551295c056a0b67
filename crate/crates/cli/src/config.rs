//! Run configuration: model sections plus `[run]` and `[tolerances]`, with
//! every default kept in one table.

use serde::{Deserialize, Serialize};
use torus_diffusion::model::config::{
    GridSection, LatticeSection, ModelConfig, ModelSection, PerturbationSection,
};
use torus_diffusion::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Stationary,
    Gap,
    Perturb,
    Projector,
    L2decay,
    Supdecay,
    Truncate,
    Hyper,
    Sde,
    All,
}

impl Experiment {
    pub const EACH: [Experiment; 9] = [
        Experiment::Stationary,
        Experiment::Gap,
        Experiment::Perturb,
        Experiment::Projector,
        Experiment::L2decay,
        Experiment::Supdecay,
        Experiment::Truncate,
        Experiment::Hyper,
        Experiment::Sde,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Stationary => "stationary",
            Experiment::Gap => "gap",
            Experiment::Perturb => "perturb",
            Experiment::Projector => "projector",
            Experiment::L2decay => "l2decay",
            Experiment::Supdecay => "supdecay",
            Experiment::Truncate => "truncate",
            Experiment::Hyper => "hyper",
            Experiment::Sde => "sde",
            Experiment::All => "all",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::EACH
            .iter()
            .chain(std::iter::once(&Experiment::All))
            .find(|e| e.name() == name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown experiment `{name}`")))
    }
}

/// `[run]`; every field falls back to [`Defaults`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub experiment: Option<Experiment>,
    pub order: Option<usize>,
    /// Explicit perturbation strengths; overrides `epsilon_fraction`.
    pub epsilon: Option<Vec<f64>>,
    /// Strength as a fraction of the fitted radius when `epsilon` is absent.
    pub epsilon_fraction: Option<f64>,
    pub t_max: Option<f64>,
    pub time_points: Option<usize>,
    pub dt: Option<f64>,
    /// Euler-Maruyama horizon `T`.
    pub horizon: Option<f64>,
    pub paths: Option<usize>,
    pub contour_nodes: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub trials: Option<usize>,
    pub bound_trials: Option<usize>,
    pub n_prime: Option<usize>,
}

/// `[tolerances]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    pub stationarity: Option<f64>,
    pub solver_agreement: Option<f64>,
    pub eigen_residual: Option<f64>,
    pub recurrence: Option<f64>,
    pub coefficient_mean: Option<f64>,
    pub idempotency: Option<f64>,
    pub projector_entries: Option<f64>,
    pub projector_density: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeSection,
    pub grid: GridSection,
    pub model: ModelSection,
    #[serde(default)]
    pub perturbation: Option<PerturbationSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
}

/// Every default that can influence a run, in one place.
pub struct Defaults;

impl Defaults {
    pub const EXPERIMENT: Experiment = Experiment::Stationary;
    pub const ORDER: usize = 6;
    pub const EPSILON_FRACTION: f64 = 0.1;
    pub const T_MAX: f64 = 4.0;
    pub const TIME_POINTS: usize = 21;
    pub const DT: f64 = 1e-3;
    pub const HORIZON: f64 = 0.5;
    pub const PATHS: usize = 10_000;
    pub const CONTOUR_NODES: usize = 16;
    pub const SEED: u64 = 42;
    pub const OUT: &'static str = "tdlab-out";
    pub const TRIALS: usize = 20;
    pub const BOUND_TRIALS: usize = 1000;
    pub const BOUND_LAMBDAS: [f64; 3] = [0.1, 1.0, 10.0];

    pub const STATIONARITY: f64 = 1e-10;
    pub const SOLVER_AGREEMENT: f64 = 1e-8;
    pub const EIGEN_RESIDUAL: f64 = 1e-8;
    pub const RECURRENCE: f64 = 1e-9;
    pub const COEFFICIENT_MEAN: f64 = 1e-12;
    pub const IDEMPOTENCY: f64 = 1e-8;
    pub const PROJECTOR_ENTRIES: f64 = 1e-8;
    pub const PROJECTOR_DENSITY: f64 = 1e-6;

    /// `(key, default, meaning)` rows, as echoed into every manifest.
    pub fn table() -> Vec<(&'static str, String, &'static str)> {
        vec![
            (
                "run.experiment",
                Self::EXPERIMENT.name().into(),
                "experiment to run",
            ),
            ("run.order", Self::ORDER.to_string(), "series order K"),
            (
                "run.epsilon_fraction",
                Self::EPSILON_FRACTION.to_string(),
                "epsilon as a fraction of the fitted radius",
            ),
            (
                "run.t_max",
                Self::T_MAX.to_string(),
                "last time of the decay/truncation grid",
            ),
            (
                "run.time_points",
                Self::TIME_POINTS.to_string(),
                "points of the time grid, t = 0 included",
            ),
            ("run.dt", Self::DT.to_string(), "Euler-Maruyama step"),
            (
                "run.horizon",
                Self::HORIZON.to_string(),
                "Euler-Maruyama horizon T",
            ),
            ("run.paths", Self::PATHS.to_string(), "Euler-Maruyama paths"),
            (
                "run.contour_nodes",
                Self::CONTOUR_NODES.to_string(),
                "initial contour quadrature nodes",
            ),
            ("run.seed", Self::SEED.to_string(), "master seed"),
            ("run.out", Self::OUT.into(), "output directory"),
            (
                "run.trials",
                Self::TRIALS.to_string(),
                "random test functions per decay experiment",
            ),
            (
                "run.bound_trials",
                Self::BOUND_TRIALS.to_string(),
                "random test functions for the relative bound",
            ),
            ("run.n_prime", "n + 1".into(), "larger truncation scale"),
            (
                "run.bound_lambdas",
                format!("{:?}", Self::BOUND_LAMBDAS),
                "lambda grid of the relative bound",
            ),
            (
                "tolerances.stationarity",
                Self::STATIONARITY.to_string(),
                "relative stationarity residual",
            ),
            (
                "tolerances.solver_agreement",
                Self::SOLVER_AGREEMENT.to_string(),
                "TV distance between solvers",
            ),
            (
                "tolerances.eigen_residual",
                Self::EIGEN_RESIDUAL.to_string(),
                "gap eigenpair residual",
            ),
            (
                "tolerances.recurrence",
                Self::RECURRENCE.to_string(),
                "relative series recurrence residual",
            ),
            (
                "tolerances.coefficient_mean",
                Self::COEFFICIENT_MEAN.to_string(),
                "largest |<f_k>_nu|, k >= 1",
            ),
            (
                "tolerances.idempotency",
                Self::IDEMPOTENCY.to_string(),
                "||P^2 - P||_F",
            ),
            (
                "tolerances.projector_entries",
                Self::PROJECTOR_ENTRIES.to_string(),
                "entrywise P_0 - 1 nu^T",
            ),
            (
                "tolerances.projector_density",
                Self::PROJECTOR_DENSITY.to_string(),
                "P*1 against the direct density",
            ),
        ]
    }
}

/// Command-line overrides; `None` leaves the config value in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub order: Option<usize>,
    pub epsilon: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub contour_nodes: Option<usize>,
    pub dt: Option<f64>,
    pub paths: Option<usize>,
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub stationarity: f64,
    pub solver_agreement: f64,
    pub eigen_residual: f64,
    pub recurrence: f64,
    pub coefficient_mean: f64,
    pub idempotency: f64,
    pub projector_entries: f64,
    pub projector_density: f64,
}

/// Fully resolved parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub model: ModelConfig,
    pub experiment: Experiment,
    pub order: usize,
    pub epsilon: Option<Vec<f64>>,
    pub epsilon_fraction: f64,
    pub t_max: f64,
    pub time_points: usize,
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub contour_nodes: usize,
    pub seed: u64,
    pub out: String,
    pub trials: usize,
    pub bound_trials: usize,
    pub bound_lambdas: Vec<f64>,
    pub n_prime: usize,
    pub tolerances: Tolerances,
}

impl Resolved {
    pub fn times(&self) -> Vec<f64> {
        let n = self.time_points.max(2);
        (0..n)
            .map(|k| self.t_max * k as f64 / (n - 1) as f64)
            .collect()
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            lattice: self.lattice.clone(),
            grid: self.grid.clone(),
            model: self.model.clone(),
            perturbation: self.perturbation.clone(),
        }
    }

    pub fn resolve(&self, o: &Overrides) -> Result<Resolved> {
        let r = &self.run;
        let t = &self.tolerances;
        let resolved = Resolved {
            model: self.model_config(),
            experiment: o
                .experiment
                .or(r.experiment)
                .unwrap_or(Defaults::EXPERIMENT),
            order: o.order.or(r.order).unwrap_or(Defaults::ORDER),
            epsilon: o.epsilon.clone().or_else(|| r.epsilon.clone()),
            epsilon_fraction: r.epsilon_fraction.unwrap_or(Defaults::EPSILON_FRACTION),
            t_max: o.t_max.or(r.t_max).unwrap_or(Defaults::T_MAX),
            time_points: r.time_points.unwrap_or(Defaults::TIME_POINTS),
            dt: o.dt.or(r.dt).unwrap_or(Defaults::DT),
            horizon: r.horizon.unwrap_or(Defaults::HORIZON),
            paths: o.paths.or(r.paths).unwrap_or(Defaults::PATHS),
            contour_nodes: o
                .contour_nodes
                .or(r.contour_nodes)
                .unwrap_or(Defaults::CONTOUR_NODES),
            seed: o.seed.or(r.seed).unwrap_or(Defaults::SEED),
            out: o
                .out
                .clone()
                .or_else(|| r.out.clone())
                .unwrap_or_else(|| Defaults::OUT.into()),
            trials: r.trials.unwrap_or(Defaults::TRIALS),
            bound_trials: r.bound_trials.unwrap_or(Defaults::BOUND_TRIALS),
            bound_lambdas: Defaults::BOUND_LAMBDAS.to_vec(),
            n_prime: r.n_prime.unwrap_or(self.lattice.n + 1),
            tolerances: Tolerances {
                stationarity: t.stationarity.unwrap_or(Defaults::STATIONARITY),
                solver_agreement: t.solver_agreement.unwrap_or(Defaults::SOLVER_AGREEMENT),
                eigen_residual: t.eigen_residual.unwrap_or(Defaults::EIGEN_RESIDUAL),
                recurrence: t.recurrence.unwrap_or(Defaults::RECURRENCE),
                coefficient_mean: t.coefficient_mean.unwrap_or(Defaults::COEFFICIENT_MEAN),
                idempotency: t.idempotency.unwrap_or(Defaults::IDEMPOTENCY),
                projector_entries: t.projector_entries.unwrap_or(Defaults::PROJECTOR_ENTRIES),
                projector_density: t.projector_density.unwrap_or(Defaults::PROJECTOR_DENSITY),
            },
        };
        if resolved.order == 0 {
            return Err(Error::Config("run.order must be at least 1".into()));
        }
        if !(resolved.t_max > 0.0) || resolved.time_points < 2 {
            return Err(Error::Config(
                "need run.t_max > 0 and run.time_points >= 2".into(),
            ));
        }
        if resolved.n_prime <= self.lattice.n {
            return Err(Error::Config("run.n_prime must exceed lattice.n".into()));
        }
        Ok(resolved)
    }
}
