use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use tdlab::config::{Experiment, Overrides};
use tdlab::report::{compare, Manifest, ToleranceSpec};
use tdlab::{exit, exit_code};

/// Run experiments on a torus-lattice diffusion, or compare two run manifests.
#[derive(Parser, Debug)]
#[command(name = "tdlab", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, required_unless_present = "compare")]
    config: Option<PathBuf>,
    /// stationary, gap, perturb, projector, l2decay, supdecay, truncate, hyper, sde or all.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    order: Option<usize>,
    /// Comma-separated perturbation strengths.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    epsilon: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long = "contour-nodes")]
    contour_nodes: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    tmax: Option<f64>,
    /// Manifest to compare against `--against`.
    #[arg(long, requires = "against", conflicts_with = "config")]
    compare: Option<PathBuf>,
    #[arg(long)]
    against: Option<PathBuf>,
    /// Absolute tolerance for numeric fields without their own.
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
    /// Per-field tolerance, `experiment.metric=value`; repeatable.
    #[arg(long = "field-tolerance")]
    field_tolerance: Vec<String>,
}

fn run_compare(cli: &Cli) -> Result<i32, String> {
    let left = Manifest::load(cli.compare.as_ref().expect("checked")).map_err(|e| e.to_string())?;
    let right = Manifest::load(cli.against.as_ref().expect("required by clap"))
        .map_err(|e| e.to_string())?;
    let mut tol = ToleranceSpec {
        default: cli.tolerance,
        ..Default::default()
    };
    for item in &cli.field_tolerance {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| format!("field tolerance `{item}` is not key=value"))?;
        let v: f64 = v
            .parse()
            .map_err(|_| format!("field tolerance `{item}` has a bad value"))?;
        tol.fields.insert(k.to_string(), v);
    }
    let diffs = compare(&left.reports, &right.reports, &tol);
    println!(
        "{}",
        serde_json::to_string_pretty(&diffs).expect("diffs serialize")
    );
    Ok(if diffs.is_empty() {
        exit::PASS
    } else {
        exit::VERDICT_FAILED
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.compare.is_some() {
        return match run_compare(&cli) {
            Ok(code) => ExitCode::from(code as u8),
            Err(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(exit::CONFIG as u8)
            }
        };
    }
    let result = (|| {
        let experiment = cli
            .experiment
            .as_deref()
            .map(Experiment::parse)
            .transpose()?;
        let overrides = Overrides {
            experiment,
            order: cli.order,
            epsilon: cli.epsilon.clone(),
            seed: cli.seed,
            out: cli.out.clone(),
            contour_nodes: cli.contour_nodes,
            dt: cli.dt,
            paths: cli.paths,
            t_max: cli.tmax,
        };
        let cfg = tdlab::resolve(cli.config.as_ref().expect("required by clap"), &overrides)?;
        tdlab::run(&cfg)
    })();
    match result {
        Ok(m) => {
            for r in &m.reports {
                for (k, v) in &r.verdicts {
                    println!("{} {}.{k}", if *v { "PASS" } else { "FAIL" }, r.experiment);
                }
            }
            println!("manifest: {}/manifest.json", m.config.out);
            ExitCode::from(if m.passed {
                exit::PASS
            } else {
                exit::VERDICT_FAILED
            } as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
