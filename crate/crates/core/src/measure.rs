//! Probability measures on the discrete state space and `L_p[ν]` helpers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights below this are treated as degenerate by adjoint constructions.
pub const WEIGHT_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverTag {
    DenseNullSpace,
    BorderedGmres,
    Series,
    Given,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    weights: Vec<f64>,
    /// `‖νᵀL‖₁` achieved by the solve that produced the weights.
    pub residual: f64,
    pub solver: SolverTag,
}

impl Measure {
    /// Normalizes `weights`; they must be nonnegative with positive total.
    pub fn new(weights: Vec<f64>, residual: f64, solver: SolverTag) -> Result<Self> {
        if let Some((state, &w)) = weights.iter().enumerate().find(|(_, w)| !(**w >= 0.0)) {
            return Err(Error::NegativeWeight { state, weight: w });
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("measure has zero total mass".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            weights,
            residual,
            solver,
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
            residual: 0.0,
            solver: SolverTag::Given,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Fails if any weight sits at or below `floor`.
    pub fn check_positive(&self, floor: f64) -> Result<()> {
        match self.weights.iter().enumerate().find(|(_, &w)| w <= floor) {
            Some((state, &weight)) => Err(Error::DegenerateMeasure {
                state,
                weight,
                floor,
            }),
            None => Ok(()),
        }
    }

    /// `⟨f⟩_ν`
    pub fn mean(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, x)| w * x).sum()
    }

    /// `(f, g)_ν`
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    pub fn norm2(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    /// `‖f‖_{p,ν}` for `p ≥ 1`.
    pub fn norm_p(&self, f: &[f64], p: f64) -> f64 {
        if p.is_infinite() {
            return f.iter().fold(0.0, |m, x| m.max(x.abs()));
        }
        // scale by the sup norm so large p does not overflow
        let scale = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let s: f64 = self
            .weights
            .iter()
            .zip(f)
            .map(|(w, x)| w * (x.abs() / scale).powf(p))
            .sum();
        scale * s.powf(1.0 / p)
    }

    /// `f − ⟨f⟩_ν`
    pub fn centered(&self, f: &[f64]) -> Vec<f64> {
        let m = self.mean(f);
        f.iter().map(|x| x - m).collect()
    }

    /// Total variation distance `½ Σ |ν − μ|`.
    pub fn total_variation(&self, other: &Measure) -> f64 {
        0.5 * self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    /// Two columns, `state weight`, 17 significant digits.
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        for (i, x) in self.weights.iter().enumerate() {
            writeln!(w, "{i} {x:.16e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_and_rejects_negatives() {
        let m = Measure::new(vec![1.0, 3.0], 0.0, SolverTag::Given).unwrap();
        assert_eq!(m.weights(), &[0.25, 0.75]);
        assert!(Measure::new(vec![1.0, -1e-3], 0.0, SolverTag::Given).is_err());
        assert!(Measure::new(vec![0.0, 0.0], 0.0, SolverTag::Given).is_err());
    }

    #[test]
    fn lp_norms() {
        let m = Measure::uniform(4);
        let f = [1.0, -1.0, 2.0, 0.0];
        assert!((m.norm2(&f) - (6.0f64 / 4.0).sqrt()).abs() < 1e-15);
        assert!((m.norm_p(&f, 2.0) - m.norm2(&f)).abs() < 1e-15);
        assert_eq!(m.norm_p(&f, f64::INFINITY), 2.0);
        assert!((m.norm_p(&f, 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_weights_are_flagged() {
        let m = Measure::new(vec![1.0, 0.0], 0.0, SolverTag::Given).unwrap();
        assert!(matches!(
            m.check_positive(WEIGHT_FLOOR),
            Err(Error::DegenerateMeasure { state: 1, .. })
        ));
    }
}
