//! The full driving model (law, `Z`, coefficient, `Y`) and its one-step fans.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::coefficient::{CoefficientConfig, CoefficientSpec, Margins};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::law::{DriverLinear, LawConfig, StepLaw, DRIVERS};
use crate::pair::{LawTables, PairBuilder, PairConfig};
use crate::zmodel::{ZGeneratorConfig, ZModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub horizon: f64,
    pub steps: usize,
    pub law: LawConfig,
    pub z: ZGeneratorConfig,
    pub coefficient: CoefficientConfig,
    pub pair: PairConfig,
}

/// Everything that can happen on one step from a given state: branch
/// probabilities, the resulting `Z`, `Δm̃`, the scaled `ΔY`, and driver loadings
/// of `ΔM` and `ΔY` for closed-form brackets.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFan {
    pub probs: Vec<f64>,
    pub drivers: Vec<[f64; DRIVERS]>,
    pub z_prev: f64,
    pub delta_a: f64,
    pub pred: f64,
    pub z: Vec<f64>,
    pub dmt: Vec<f64>,
    /// `dy[i][j]`: jump of `Y_j` on branch `i`.
    pub dy: Vec<Vec<f64>>,
    pub m_coeffs: [f64; DRIVERS],
    pub y_coeffs: Vec<[f64; DRIVERS]>,
    pub rho: f64,
    pub margins: Vec<Margins>,
}

impl StepFan {
    pub fn branches(&self) -> usize {
        self.probs.len()
    }

    /// `E[h(i)]` over the branches of this step.
    pub fn expect(&self, mut h: impl FnMut(usize) -> f64) -> f64 {
        self.probs.iter().enumerate().map(|(i, p)| p * h(i)).sum()
    }

    pub fn min_margin(&self) -> f64 {
        self.margins.iter().map(Margins::min).fold(f64::INFINITY, f64::min)
    }
}

/// Compiled model on a uniform grid.
#[derive(Debug, Clone)]
pub struct NaturalModel {
    grid: TimeGrid,
    law: StepLaw,
    z: ZModel,
    coefficient: CoefficientSpec,
    pair: PairBuilder,
    tables: LawTables,
}

impl NaturalModel {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        Self::build(spec, true)
    }

    /// As [`NaturalModel::new`] without the `ε`-envelope check on `Z`.
    pub fn new_unchecked(spec: &ModelSpec) -> Result<Self> {
        Self::build(spec, false)
    }

    fn build(spec: &ModelSpec, checked: bool) -> Result<Self> {
        let grid = TimeGrid::new(spec.horizon, spec.steps)?;
        let law = StepLaw::new(grid.dt(), &spec.law)?;
        let z = if checked {
            ZModel::new(spec.z, grid, &law)?
        } else {
            ZModel::new_unchecked(spec.z, grid, &law)?
        };
        let coefficient = CoefficientSpec::new(&spec.coefficient)?;
        let pair = PairBuilder::new(spec.pair.clone(), &coefficient)?;
        let tables = pair.tables(&coefficient, &law);
        Ok(NaturalModel {
            grid,
            law,
            z,
            coefficient,
            pair,
            tables,
        })
    }

    /// Same model with `g` replaced by zero.
    pub fn without_coefficient(&self) -> Self {
        let coefficient = CoefficientSpec::zero(self.coefficient.dim());
        let tables = self.pair.tables(&coefficient, &self.law);
        NaturalModel {
            coefficient,
            tables,
            ..self.clone()
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn law(&self) -> &StepLaw {
        &self.law
    }

    pub fn zmodel(&self) -> &ZModel {
        &self.z
    }

    pub fn coefficient(&self) -> &CoefficientSpec {
        &self.coefficient
    }

    pub fn pair(&self) -> &PairBuilder {
        &self.pair
    }

    pub fn tables_for(&self, law: &StepLaw) -> LawTables {
        self.pair.tables(&self.coefficient, law)
    }

    /// Fan of grid step `k` from `Z_{k−1} = z_prev`.
    pub fn fan(&self, k: usize, z_prev: f64) -> StepFan {
        let dh = self.z.hazard(k) - self.z.hazard(k - 1);
        self.fan_with(&self.law, &self.tables, dh, z_prev)
    }

    /// Fan of an arbitrary interval with its own law and hazard increment.
    pub fn fan_with(&self, law: &StepLaw, tables: &LawTables, d_hazard: f64, z_prev: f64) -> StepFan {
        let children: Vec<f64> = (0..law.branches())
            .map(|i| self.z.transition(z_prev, d_hazard, law.drivers(i)).z)
            .collect();
        let s = self.z.transition(z_prev, d_hazard, law.drivers(0));
        let m_coeffs = self.z.martingale_coeffs(z_prev, d_hazard);
        self.assemble(law, tables, z_prev, s.delta_a, children, m_coeffs)
    }

    /// Fan for externally given child values of `Z` (e.g. a tree built backward).
    /// `ΔM` must be linear in the drivers.
    pub fn fan_from_children(
        &self,
        law: &StepLaw,
        tables: &LawTables,
        z_prev: f64,
        children: Vec<f64>,
    ) -> Result<StepFan> {
        if children.len() != law.branches() {
            return Err(Error::GridMismatch {
                expected: law.branches(),
                got: children.len(),
            });
        }
        let mean = law.expect(|i| children[i]);
        let delta_a = z_prev - mean;
        if delta_a < 0.0 {
            return Err(Error::NotSupermartingale { node: 0, delta_a });
        }
        let dm: Vec<f64> = children.iter().map(|z| z - mean).collect();
        let fit = DriverLinear::from_branch_increments(&[dm], law, 1e-9)?;
        Ok(self.assemble(law, tables, z_prev, delta_a, children, fit.coeffs[0]))
    }

    fn assemble(
        &self,
        law: &StepLaw,
        tables: &LawTables,
        z_prev: f64,
        delta_a: f64,
        children: Vec<f64>,
        m_coeffs: [f64; DRIVERS],
    ) -> StepFan {
        let pred = 1.0 - z_prev + delta_a;
        let dmt: Vec<f64> = children
            .iter()
            .map(|z| -(z - z_prev + delta_a) / pred)
            .collect();
        let y = self.pair.ladder(&self.coefficient, tables, pred, &dmt);
        let dy = (0..law.branches())
            .map(|i| {
                self.pair
                    .candidate(law.drivers(i))
                    .into_iter()
                    .map(|v| y.rho * v)
                    .collect()
            })
            .collect();
        let y_coeffs = (0..self.pair.dim())
            .map(|j| {
                let c = self.pair.candidate_coeffs(j);
                [y.rho * c[0], y.rho * c[1], y.rho * c[2]]
            })
            .collect();
        StepFan {
            probs: law.probs().to_vec(),
            drivers: (0..law.branches()).map(|i| *law.drivers(i)).collect(),
            z_prev,
            delta_a,
            pred,
            z: children,
            dmt,
            dy,
            m_coeffs,
            y_coeffs,
            rho: y.rho,
            margins: y.margins,
        }
    }

    /// Simulates one path; `choose(k, probs)` picks the branch of step `k`.
    pub fn simulate(&self, mut choose: impl FnMut(usize, &[f64]) -> usize) -> DrivingPath {
        let n = self.grid.steps();
        let mut path = DrivingPath::with_capacity(n, self.pair.dim());
        path.times = self.grid.points();
        path.z.push(self.z.config().z0);
        path.a.push(0.0);
        for k in 1..=n {
            let fan = self.fan(k, path.z[k - 1]);
            let b = choose(k, &fan.probs);
            path.push(&fan, b);
        }
        path
    }
}

/// A realized path of every driving quantity. Step-indexed vectors have an
/// unused entry at index 0 so that entry `k` refers to step `k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DrivingPath {
    pub times: Vec<f64>,
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub pred: Vec<f64>,
    pub dmt: Vec<f64>,
    pub dy: Vec<Vec<f64>>,
    pub branch: Vec<usize>,
    pub drivers: Vec<[f64; DRIVERS]>,
    pub m_coeffs: Vec<[f64; DRIVERS]>,
    pub y_coeffs: Vec<Vec<[f64; DRIVERS]>>,
    pub rho: Vec<f64>,
    /// Smallest admissibility margin over all branches of each step.
    pub fan_margin: Vec<f64>,
}

impl DrivingPath {
    fn with_capacity(n: usize, m: usize) -> Self {
        let mut p = DrivingPath::default();
        p.pred.push(0.0);
        p.dmt.push(0.0);
        p.dy.push(vec![0.0; m]);
        p.branch.push(0);
        p.drivers.push([0.0; DRIVERS]);
        p.m_coeffs.push([0.0; DRIVERS]);
        p.y_coeffs.push(vec![[0.0; DRIVERS]; m]);
        p.rho.push(0.0);
        p.fan_margin.push(f64::INFINITY);
        p.z.reserve(n + 1);
        p
    }

    /// Starts an empty path at `z0` with the given time points.
    pub fn start(times: Vec<f64>, z0: f64, m: usize) -> Self {
        let mut p = Self::with_capacity(times.len(), m);
        p.times = times;
        p.z.push(z0);
        p.a.push(0.0);
        p
    }

    /// Appends the outcome `branch` of `fan`.
    pub fn push(&mut self, fan: &StepFan, branch: usize) {
        let k = self.z.len();
        self.z.push(fan.z[branch]);
        self.a.push(self.a[k - 1] + fan.delta_a);
        self.pred.push(fan.pred);
        self.dmt.push(fan.dmt[branch]);
        self.dy.push(fan.dy[branch].clone());
        self.branch.push(branch);
        self.drivers.push(fan.drivers[branch]);
        self.m_coeffs.push(fan.m_coeffs);
        self.y_coeffs.push(fan.y_coeffs.clone());
        self.rho.push(fan.rho);
        self.fan_margin.push(fan.min_margin());
    }

    pub fn steps(&self) -> usize {
        self.z.len() - 1
    }

    pub fn delta_a(&self, k: usize) -> f64 {
        self.a[k] - self.a[k - 1]
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::default_spec;
    use super::*;

    #[test]
    fn fans_are_consistent() {
        let model = NaturalModel::new(&default_spec()).unwrap();
        let fan = model.fan(3, 0.6);
        assert!(fan.min_margin() > 0.0);
        assert!(fan.expect(|i| fan.dmt[i]).abs() < 1e-15);
        for j in 0..2 {
            assert!(fan.expect(|i| fan.dy[i][j]).abs() < 1e-15);
        }
        let again = model
            .fan_from_children(model.law(), &model.tables_for(model.law()), 0.6, fan.z.clone())
            .unwrap();
        assert!((again.delta_a - fan.delta_a).abs() < 1e-15);
        for d in 0..DRIVERS {
            assert!((again.m_coeffs[d] - fan.m_coeffs[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn simulated_path_shapes() {
        let model = NaturalModel::new(&default_spec()).unwrap();
        let path = model.simulate(|k, _| k % 3);
        assert_eq!(path.steps(), 10);
        assert_eq!(path.dy.len(), 11);
        assert!(path.z.iter().all(|z| *z > 0.01 && *z < 0.99));
    }
}
