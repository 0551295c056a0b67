//! Declarative model definitions (TOML).
//!
//! ```toml
//! [lattice]
//! d = 1
//! n = 0
//! closure = "frozen"
//!
//! [grid]
//! m = 16
//!
//! [model]
//! builtin = "ibm"
//! potential = "cos"
//! beta = 0.5
//!
//! [perturbation]
//! kind = "d0"
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    build_custom_model, build_ibm_model, DiffusionSpec, FreePotential, NeighbourCosine,
    OnSiteCosine, PerturbationField, Potential,
};
use crate::error::{Error, Result};
use crate::lattice::{Closure, GridSpec, LatticeSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub d: usize,
    pub n: usize,
    #[serde(default = "default_closure")]
    pub closure: Closure,
}

fn default_closure() -> Closure {
    Closure::Frozen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    Ibm,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// `Φ_j = β cos η_j`
    Cos,
    /// `Φ_j = β Σ cos(η_j − η_{j+e})`
    NeighbourCos,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub builtin: Builtin,
    #[serde(default)]
    pub potential: Option<PotentialKind>,
    #[serde(default)]
    pub beta: f64,
    /// Declared range; must cover the potential's own range.
    #[serde(default)]
    pub range: Option<usize>,
    /// Custom model: `a_i = a0 + a1 cos η_i`, `b_i = b0 + b1 sin η_i`.
    #[serde(default)]
    pub a0: Option<f64>,
    #[serde(default)]
    pub a1: Option<f64>,
    #[serde(default)]
    pub b0: Option<f64>,
    #[serde(default)]
    pub b1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    /// `A = ∂_0`
    D0,
    /// `c_i ≡ value`
    Constant,
    /// `c_0 = sin η_0`
    Sin0,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSection {
    pub kind: PerturbationKind,
    #[serde(default)]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lattice: LatticeSection,
    pub grid: GridSection,
    pub model: ModelSection,
    #[serde(default)]
    pub perturbation: Option<PerturbationSection>,
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<DiffusionSpec> {
        let lattice = LatticeSpec::new(self.lattice.d, self.lattice.n, self.lattice.closure)?;
        let grid = GridSpec::new(self.grid.m)?;
        let m = &self.model;
        let mut spec = match m.builtin {
            Builtin::Ibm => {
                if m.a0.is_some() || m.a1.is_some() || m.b0.is_some() || m.b1.is_some() {
                    return Err(Error::Config(
                        "a0/a1/b0/b1 only apply to builtin = \"custom\"".into(),
                    ));
                }
                let potential: Arc<dyn Potential> = match m.potential.unwrap_or(PotentialKind::None)
                {
                    PotentialKind::Cos => Arc::new(OnSiteCosine { beta: m.beta }),
                    PotentialKind::NeighbourCos => Arc::new(NeighbourCosine { beta: m.beta }),
                    PotentialKind::None => Arc::new(FreePotential),
                };
                if let Some(r) = m.range {
                    if r < potential.range() {
                        return Err(Error::Config(format!(
                            "declared range {r} is below the potential range {}",
                            potential.range()
                        )));
                    }
                }
                build_ibm_model(potential, &lattice, &grid)
            }
            Builtin::Custom => {
                if m.potential.is_some() {
                    return Err(Error::Config(
                        "potential only applies to builtin = \"ibm\"".into(),
                    ));
                }
                build_custom_model(
                    &lattice,
                    &grid,
                    (m.a0.unwrap_or(2.0), m.a1.unwrap_or(0.0)),
                    (m.b0.unwrap_or(0.0), m.b1.unwrap_or(0.0)),
                )
            }
        };
        if let Some(p) = &self.perturbation {
            let field = match p.kind {
                PerturbationKind::D0 => PerturbationField::origin_derivative(),
                PerturbationKind::Constant => {
                    PerturbationField::constant(p.value.ok_or_else(|| {
                        Error::Config("perturbation kind \"constant\" needs a value".into())
                    })?)
                }
                PerturbationKind::Sin0 => PerturbationField::origin_sine(),
                PerturbationKind::None => PerturbationField::zero(),
            };
            spec.perturbation = Some(field);
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE: &str = r#"
[lattice]
d = 1
n = 0

[grid]
m = 16

[model]
builtin = "ibm"
potential = "cos"
beta = 0.5

[perturbation]
kind = "d0"
"#;

    #[test]
    fn parses_and_builds() {
        let cfg = ModelConfig::from_toml(SINGLE).unwrap();
        let spec = cfg.build().unwrap();
        assert_eq!(spec.grid.points, 16);
        assert!(spec.hamiltonian.is_some());
        assert_eq!(spec.perturbation.unwrap().label, "d0");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = SINGLE.replace("beta = 0.5", "beta = 0.5\ntemperature = 3");
        assert!(matches!(
            ModelConfig::from_toml(&bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn constant_perturbation_needs_value() {
        let bad = SINGLE.replace("kind = \"d0\"", "kind = \"constant\"");
        let cfg = ModelConfig::from_toml(&bad).unwrap();
        assert!(cfg.build().is_err());
    }
}
