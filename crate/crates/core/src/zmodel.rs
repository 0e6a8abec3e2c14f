//! Supermartingales `Z = N e^{−Λ}` with closed-form Doob decomposition.
//!
//! `Λ_t = λt + δ·1{t ≥ t*}` is deterministic and `N` is a positive martingale
//! whose increments are `N_{k−1}(1 − Z_{k−1})η_k` with `η` a bounded mean-zero
//! combination of the step drivers. The factor `1 − Z` switches the noise off
//! near the upper boundary, and the envelope check at construction keeps every
//! reachable state strictly inside `(ε, 1 − ε)`.

use alloc::vec;
use alloc::vec::Vec;

use libm::exp;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::law::{DriverKind, StepLaw, DRIVERS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZGeneratorConfig {
    pub z0: f64,
    /// Continuous hazard rate `λ`.
    pub lambda: f64,
    /// Time of the predictable hazard jump; must be a grid point when `jump_size > 0`.
    pub jump_time: f64,
    pub jump_size: f64,
    /// Loading of `N` on the diffusion driver.
    pub sigma_n: f64,
    /// Loading of `N` on the jump driver.
    pub jump_scale: f64,
    pub epsilon: f64,
}

impl Default for ZGeneratorConfig {
    fn default() -> Self {
        ZGeneratorConfig {
            z0: 0.7,
            lambda: 0.3,
            jump_time: 0.5,
            jump_size: 0.2,
            sigma_n: 0.6,
            jump_scale: 0.3,
            epsilon: 0.01,
        }
    }
}

/// One transition of `Z` together with every derived quantity of that step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZStep {
    pub z: f64,
    pub delta_a: f64,
    pub delta_m: f64,
    /// Predictable projection `1 − Z_{k−1} + ΔA_k` of `1 − Z_k`.
    pub pred: f64,
    /// `Δm̃_k = −ΔM_k / pred`.
    pub dmt: f64,
}

/// Validated generator on a fixed grid and step law.
#[derive(Debug, Clone)]
pub struct ZModel {
    config: ZGeneratorConfig,
    grid: TimeGrid,
    jump_index: Option<usize>,
    hazard: Vec<f64>,
}

impl ZModel {
    /// Builds the generator after checking that no reachable state leaves `(ε, 1 − ε)`.
    pub fn new(config: ZGeneratorConfig, grid: TimeGrid, law: &StepLaw) -> Result<Self> {
        let c = &config;
        if !(c.epsilon > 0.0 && c.epsilon < 0.5) {
            return Err(Error::config("z.epsilon", "must lie in (0, 1/2)"));
        }
        if !(c.z0 > c.epsilon && c.z0 < 1.0 - c.epsilon) {
            return Err(Error::config("z.z0", "must lie in (epsilon, 1 - epsilon)"));
        }
        let model = Self::new_unchecked(config, grid, law)?;
        let (lo, hi) = model.eta_range(law);
        let (mut low, mut high) = (c.z0, c.z0);
        for k in 1..=grid.steps() {
            let decay = exp(-(model.hazard[k] - model.hazard[k - 1]));
            low = decay * low * (1.0 + (1.0 - low) * lo);
            high = decay * high * (1.0 + (1.0 - high) * hi);
            if low <= c.epsilon {
                return Err(Error::config(
                    "z",
                    alloc::format!("Z can fall to {low:.3e} <= epsilon by step {k}; lower lambda, jump_size or loadings"),
                ));
            }
            if high >= 1.0 - c.epsilon {
                return Err(Error::config(
                    "z",
                    alloc::format!("Z can reach {high:.3e} >= 1 - epsilon by step {k}; lower the loadings"),
                ));
            }
        }
        Ok(model)
    }

    /// Builds the generator checking only `0 < Z_0 ≤ 1` and `|η| < 1`; the
    /// `ε`-envelope is not enforced. Used for deterministic curves starting at 1.
    pub fn new_unchecked(config: ZGeneratorConfig, grid: TimeGrid, law: &StepLaw) -> Result<Self> {
        let c = &config;
        let finite = [c.z0, c.lambda, c.jump_time, c.jump_size, c.sigma_n, c.jump_scale, c.epsilon];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("z", "all parameters must be finite"));
        }
        if !(c.z0 > 0.0 && c.z0 <= 1.0) {
            return Err(Error::config("z.z0", "must lie in (0, 1]"));
        }
        if c.lambda < 0.0 {
            return Err(Error::config("z.lambda", "must be nonnegative"));
        }
        if c.jump_size < 0.0 {
            return Err(Error::config("z.jump_size", "must be nonnegative"));
        }
        let jump_index = if c.jump_size > 0.0 {
            match grid.index_of(c.jump_time, 1e-9 * grid.horizon()) {
                Some(k) if k >= 1 => Some(k),
                _ => {
                    return Err(Error::config(
                        "z.jump_time",
                        "must coincide with a grid point after 0",
                    ))
                }
            }
        } else {
            None
        };
        let hazard = (0..=grid.steps())
            .map(|k| {
                let jump = match jump_index {
                    Some(j) if k >= j => c.jump_size,
                    _ => 0.0,
                };
                c.lambda * grid.point(k) + jump
            })
            .collect();
        let model = ZModel {
            config,
            grid,
            jump_index,
            hazard,
        };
        let (lo, hi) = model.eta_range(law);
        if lo <= -1.0 || hi >= 1.0 {
            return Err(Error::config(
                "z",
                "martingale loadings let N's relative increment reach ±1",
            ));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ZGeneratorConfig {
        &self.config
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn jump_index(&self) -> Option<usize> {
        self.jump_index
    }

    pub fn is_deterministic(&self) -> bool {
        self.config.sigma_n == 0.0 && self.config.jump_scale == 0.0
    }

    /// `Λ` at grid index `k`.
    pub fn hazard(&self, k: usize) -> f64 {
        self.hazard[k]
    }

    /// `Λ` at an arbitrary time; the hazard jump is counted from `t*` on.
    pub fn hazard_at(&self, t: f64) -> f64 {
        let jump = match self.jump_index {
            Some(j) if t >= self.grid.point(j) - 1e-12 * self.grid.horizon() => self.config.jump_size,
            _ => 0.0,
        };
        self.config.lambda * t + jump
    }

    /// Loadings of `η` on the drivers.
    pub fn eta_loadings(&self) -> [f64; DRIVERS] {
        [self.config.sigma_n, self.config.jump_scale, 0.0]
    }

    pub fn eta(&self, drivers: &[f64; DRIVERS]) -> f64 {
        self.config.sigma_n * drivers[DriverKind::Diffusion.index()]
            + self.config.jump_scale * drivers[DriverKind::Jump.index()]
    }

    fn eta_range(&self, law: &StepLaw) -> (f64, f64) {
        (0..law.branches())
            .map(|i| self.eta(law.drivers(i)))
            .fold((0.0f64, 0.0f64), |(lo, hi), e| (lo.min(e), hi.max(e)))
    }

    /// Transition across an interval over which the hazard grows by `d_hazard`.
    pub fn transition(&self, z_prev: f64, d_hazard: f64, drivers: &[f64; DRIVERS]) -> ZStep {
        let decay = exp(-d_hazard);
        let z = decay * z_prev * (1.0 + (1.0 - z_prev) * self.eta(drivers));
        let delta_a = z_prev * (1.0 - decay);
        let delta_m = z - z_prev + delta_a;
        let pred = 1.0 - z_prev + delta_a;
        ZStep {
            z,
            delta_a,
            delta_m,
            pred,
            dmt: -delta_m / pred,
        }
    }

    /// Driver loadings of `ΔM` over an interval starting from `z_prev`.
    pub fn martingale_coeffs(&self, z_prev: f64, d_hazard: f64) -> [f64; DRIVERS] {
        let scale = exp(-d_hazard) * z_prev * (1.0 - z_prev);
        let l = self.eta_loadings();
        [scale * l[0], scale * l[1], scale * l[2]]
    }

    /// Step `k` (from `t_{k−1}` to `t_k`).
    pub fn step(&self, k: usize, z_prev: f64, drivers: &[f64; DRIVERS]) -> ZStep {
        self.transition(z_prev, self.hazard[k] - self.hazard[k - 1], drivers)
    }

    /// Full path from a sequence of branch choices (`branches[k−1]` for step `k`).
    pub fn generate(&self, law: &StepLaw, branches: &[usize]) -> Result<SupermartingaleModel> {
        if branches.len() != self.grid.steps() {
            return Err(Error::GridMismatch {
                expected: self.grid.steps(),
                got: branches.len(),
            });
        }
        let mut z = vec![self.config.z0];
        let mut a = vec![0.0];
        for (k, &b) in branches.iter().enumerate() {
            let s = self.step(k + 1, z[k], law.drivers(b));
            z.push(s.z);
            a.push(a[k] + s.delta_a);
        }
        SupermartingaleModel::from_decomposition(z, a)
    }
}

/// A path of `Z` with its Doob decomposition and derived predictable quantities.
/// Vectors of increments (`dmt`, `pred`) are indexed by step, with index 0 unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupermartingaleModel {
    pub z: Vec<f64>,
    pub m: Vec<f64>,
    pub a: Vec<f64>,
    pub dmt: Vec<f64>,
    pub pred: Vec<f64>,
}

impl SupermartingaleModel {
    /// Assembles the model from `Z` and its predictable increasing part `A`.
    pub fn from_decomposition(z: Vec<f64>, a: Vec<f64>) -> Result<Self> {
        if z.len() != a.len() {
            return Err(Error::GridMismatch {
                expected: z.len(),
                got: a.len(),
            });
        }
        let m: Vec<f64> = z.iter().zip(&a).map(|(z, a)| z + a).collect();
        let mut pred = vec![0.0; z.len()];
        for k in 1..z.len() {
            let da = a[k] - a[k - 1];
            if da < 0.0 {
                return Err(Error::NotSupermartingale { node: k, delta_a: da });
            }
            pred[k] = 1.0 - z[k - 1] + da;
        }
        let mut model = SupermartingaleModel {
            z,
            m,
            a,
            dmt: Vec::new(),
            pred,
        };
        model.dmt = tilde_m_increments(&model)?;
        Ok(model)
    }

    pub fn steps(&self) -> usize {
        self.z.len() - 1
    }

    pub fn delta_a(&self, k: usize) -> f64 {
        self.a[k] - self.a[k - 1]
    }

    pub fn delta_m(&self, k: usize) -> f64 {
        self.m[k] - self.m[k - 1]
    }

    /// Checks `0 < Z < 1`, `Hy(Z)`, `A_0 = 0` and `ΔA ≥ 0`.
    pub fn validate(&self) -> Result<()> {
        if self.a[0] != 0.0 {
            return Err(Error::SolverInconsistency("A_0 must vanish".into()));
        }
        for k in 0..self.z.len() {
            if !(self.z[k] > 0.0 && self.z[k] < 1.0) {
                return Err(Error::Domain {
                    step: k,
                    reason: "Z outside (0, 1)",
                });
            }
            if k > 0 && self.delta_a(k) < 0.0 {
                return Err(Error::NotSupermartingale {
                    node: k,
                    delta_a: self.delta_a(k),
                });
            }
        }
        Ok(())
    }
}

/// `Δ_k m̃ = −Δ_kM / ᵖ(1−Z)_k`, with index 0 unused.
pub fn tilde_m_increments(model: &SupermartingaleModel) -> Result<Vec<f64>> {
    let mut out = vec![0.0; model.z.len()];
    for k in 1..model.z.len() {
        let p = model.pred[k];
        if p <= 0.0 {
            return Err(Error::HyViolation { step: k, value: p });
        }
        out[k] = -model.delta_m(k) / p;
    }
    Ok(out)
}
