//! `tdlab`: runs named experiments on a declared torus-lattice diffusion
//! and writes a manifest plus per-experiment reports.

pub mod config;
pub mod experiments;
pub mod report;

use std::path::{Path, PathBuf};

use torus_diffusion::{Error, Result};

use config::{Defaults, Experiment, Overrides, Resolved, RunConfig};
use report::{inputs_hash, DefaultRow, Manifest};

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const VERDICT_FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

/// Exit code for an error: configuration problems are 2, numerics 3.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::NoHamiltonian
        | Error::InvalidInput(_)
        | Error::UnsupportedObservable { .. }
        | Error::StateSpaceTooLarge { .. }
        | Error::MeshTooCoarse { .. }
        | Error::StepTooLarge { .. }
        | Error::NotElliptic { .. } => exit::CONFIG,
        _ => exit::NUMERIC,
    }
}

pub fn resolve(config_path: &Path, overrides: &Overrides) -> Result<Resolved> {
    RunConfig::load(config_path)?.resolve(overrides)
}

/// Runs the configured experiment(s), writing `manifest.json` and one
/// directory per experiment under `out`.
pub fn run(cfg: &Resolved) -> Result<Manifest> {
    let out = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out)?;
    let hash = inputs_hash(cfg);
    let ctx = experiments::Context::new(cfg, &out, hash.clone())?;
    let list: Vec<Experiment> = match cfg.experiment {
        Experiment::All => Experiment::EACH.to_vec(),
        e => vec![e],
    };
    let mut reports = Vec::new();
    for e in list {
        let r = experiments::run_one(&ctx, e).map_err(|err| match err {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", e.name())),
            Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", e.name())),
            other => other,
        })?;
        reports.push(r);
    }
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        inputs_hash: hash,
        seed: cfg.seed,
        config: cfg.clone(),
        defaults: Defaults::table()
            .into_iter()
            .map(|(k, d, m)| DefaultRow {
                key: k.into(),
                default: d,
                meaning: m.into(),
            })
            .collect(),
        passed: reports.iter().all(|r| r.passed()),
        reports,
    };
    manifest.write(&out.join("manifest.json"))?;
    Ok(manifest)
}
