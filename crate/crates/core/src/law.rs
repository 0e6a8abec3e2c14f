//! One-step branching law shared by the tree and the Monte Carlo engine.
//!
//! The base factor has an "up", a "down" and (when the jump intensity is
//! positive) a "jump" branch. Two martingale drivers live on it: a symmetric
//! diffusion proxy and a compensated two-point jump. An optional auxiliary coin,
//! independent of the base factor, carries a third driver used for immersion
//! controls. Branch index is `base * 2 + coin` when the coin is present.

use alloc::vec::Vec;

use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DRIVERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    Diffusion,
    Jump,
    Aux,
}

impl DriverKind {
    pub const ALL: [DriverKind; DRIVERS] = [DriverKind::Diffusion, DriverKind::Jump, DriverKind::Aux];

    pub fn index(self) -> usize {
        match self {
            DriverKind::Diffusion => 0,
            DriverKind::Jump => 1,
            DriverKind::Aux => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawConfig {
    /// Jump branch probability per unit time.
    pub jump_intensity: f64,
    #[serde(default)]
    pub aux_driver: bool,
}

impl Default for LawConfig {
    fn default() -> Self {
        LawConfig {
            jump_intensity: 1.5,
            aux_driver: false,
        }
    }
}

/// Outcomes of one step of length `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLaw {
    dt: f64,
    jump_prob: f64,
    probs: Vec<f64>,
    drivers: Vec<[f64; DRIVERS]>,
    base_branches: usize,
    aux: bool,
}

impl StepLaw {
    pub fn new(dt: f64, config: &LawConfig) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::config("grid", "step length must be positive"));
        }
        if !(config.jump_intensity.is_finite() && config.jump_intensity >= 0.0) {
            return Err(Error::config("law.jump_intensity", "must be finite and nonnegative"));
        }
        let q = config.jump_intensity * dt;
        if q >= 1.0 {
            return Err(Error::config(
                "law.jump_intensity",
                "jump probability per step must be below 1",
            ));
        }
        let mut base: Vec<(f64, f64, f64)> = Vec::with_capacity(3);
        if q > 0.0 {
            let p = (1.0 - q) / 2.0;
            let a = sqrt(dt / (1.0 - q));
            base.push((p, a, -q));
            base.push((p, -a, -q));
            base.push((q, 0.0, 1.0 - q));
        } else {
            let a = sqrt(dt);
            base.push((0.5, a, 0.0));
            base.push((0.5, -a, 0.0));
        }
        let coin = sqrt(dt);
        let mut probs = Vec::new();
        let mut drivers = Vec::new();
        for &(p, d, j) in &base {
            if config.aux_driver {
                probs.push(0.5 * p);
                drivers.push([d, j, coin]);
                probs.push(0.5 * p);
                drivers.push([d, j, -coin]);
            } else {
                probs.push(p);
                drivers.push([d, j, 0.0]);
            }
        }
        Ok(StepLaw {
            dt,
            jump_prob: q,
            probs,
            drivers,
            base_branches: base.len(),
            aux: config.aux_driver,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn jump_prob(&self) -> f64 {
        self.jump_prob
    }

    pub fn branches(&self) -> usize {
        self.probs.len()
    }

    pub fn base_branches(&self) -> usize {
        self.base_branches
    }

    pub fn has_aux(&self) -> bool {
        self.aux
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn drivers(&self, branch: usize) -> &[f64; DRIVERS] {
        &self.drivers[branch]
    }

    pub fn driver(&self, branch: usize, kind: DriverKind) -> f64 {
        self.drivers[branch][kind.index()]
    }

    /// Largest absolute value any driver can take on this step.
    pub fn driver_bound(&self) -> f64 {
        self.drivers
            .iter()
            .flat_map(|d| d.iter())
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// `E[h(branch)]`, summed pairwise over the coin so symmetric terms cancel exactly.
    pub fn expect(&self, mut h: impl FnMut(usize) -> f64) -> f64 {
        let mut total = 0.0;
        if self.aux {
            for b in 0..self.base_branches {
                total += self.probs[2 * b] * h(2 * b) + self.probs[2 * b + 1] * h(2 * b + 1);
            }
        } else {
            for (i, p) in self.probs.iter().enumerate() {
                total += p * h(i);
            }
        }
        total
    }

    /// Closed-form conditional covariance of two drivers.
    pub fn covariance(&self, a: DriverKind, b: DriverKind) -> f64 {
        if a != b {
            return 0.0;
        }
        match a {
            DriverKind::Diffusion => self.dt,
            DriverKind::Jump => self.jump_prob * (1.0 - self.jump_prob),
            DriverKind::Aux => {
                if self.aux {
                    self.dt
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per-step increment coefficients on the drivers: `ΔX_k = Σ_d c_{k,d}·driver_d`.
/// Coefficients may depend on step-(k−1) state only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DriverLinear {
    pub coeffs: Vec<[f64; DRIVERS]>,
}

impl DriverLinear {
    /// Constant coefficients over `steps` steps.
    pub fn constant(steps: usize, c: [f64; DRIVERS]) -> Self {
        DriverLinear {
            coeffs: alloc::vec![c; steps],
        }
    }

    /// Recovers coefficients from per-branch increments (one row per step),
    /// failing when an increment is not a linear function of the drivers.
    pub fn from_branch_increments(increments: &[Vec<f64>], law: &StepLaw, tol: f64) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(increments.len());
        for (k, inc) in increments.iter().enumerate() {
            if inc.len() != law.branches() {
                return Err(Error::GridMismatch {
                    expected: law.branches(),
                    got: inc.len(),
                });
            }
            let mut c = [0.0; DRIVERS];
            for kind in DriverKind::ALL {
                let var = law.covariance(kind, kind);
                if var > 0.0 {
                    c[kind.index()] = law.expect(|i| inc[i] * law.driver(i, kind)) / var;
                }
            }
            for (i, &x) in inc.iter().enumerate() {
                let fit: f64 = (0..DRIVERS).map(|d| c[d] * law.drivers(i)[d]).sum();
                if (fit - x).abs() > tol * (1.0 + x.abs()) {
                    return Err(Error::UnsupportedProcess(alloc::format!(
                        "increment at step {} is not linear in the drivers",
                        k + 1
                    )));
                }
            }
            coeffs.push(c);
        }
        Ok(DriverLinear { coeffs })
    }

    pub fn steps(&self) -> usize {
        self.coeffs.len()
    }

    pub fn increment(&self, k: usize, drivers: &[f64; DRIVERS]) -> f64 {
        let c = &self.coeffs[k - 1];
        c[0] * drivers[0] + c[1] * drivers[1] + c[2] * drivers[2]
    }
}

/// `E[ΔX ΔY | step k−1]` for driver-linear increments with coefficients `x`, `y`.
pub fn step_covariance(x: &[f64; DRIVERS], y: &[f64; DRIVERS], law: &StepLaw) -> f64 {
    let mut total = 0.0;
    for a in DriverKind::ALL {
        for b in DriverKind::ALL {
            total += x[a.index()] * y[b.index()] * law.covariance(a, b);
        }
    }
    total
}

/// Cumulative predictable bracket `B_k = Σ_{j≤k} E[Δ_jX Δ_jY | j−1]`, `B_0 = 0`.
pub fn predictable_bracket(x: &DriverLinear, y: &DriverLinear, law: &StepLaw) -> Result<Vec<f64>> {
    if x.steps() != y.steps() {
        return Err(Error::GridMismatch {
            expected: x.steps(),
            got: y.steps(),
        });
    }
    let mut out = Vec::with_capacity(x.steps() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for (cx, cy) in x.coeffs.iter().zip(&y.coeffs) {
        acc += step_covariance(cx, cy, law);
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laws() -> Vec<StepLaw> {
        let mut v = Vec::new();
        for &(lam, aux) in &[(0.0, false), (1.5, false), (1.5, true), (0.0, true), (7.0, false)] {
            let cfg = LawConfig {
                jump_intensity: lam,
                aux_driver: aux,
            };
            v.push(StepLaw::new(0.1, &cfg).unwrap());
        }
        v
    }

    #[test]
    fn drivers_have_exact_zero_mean() {
        for law in laws() {
            let total: f64 = law.probs().iter().sum();
            assert!((total - 1.0).abs() < 1e-15);
            for kind in DriverKind::ALL {
                assert_eq!(law.expect(|i| law.driver(i, kind)), 0.0, "{kind:?}");
            }
        }
    }

    #[test]
    fn covariance_matches_enumeration() {
        for law in laws() {
            for a in DriverKind::ALL {
                for b in DriverKind::ALL {
                    let e = law.expect(|i| law.driver(i, a) * law.driver(i, b));
                    assert!((e - law.covariance(a, b)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn bracket_examples() {
        let law = &laws()[2];
        let x = DriverLinear::constant(5, [0.7, 0.0, 0.0]);
        let z = DriverLinear::constant(5, [0.0, 0.0, 1.3]);
        let b = predictable_bracket(&x, &z, law).unwrap();
        assert!(b.iter().all(|&v| v == 0.0));
        let b = predictable_bracket(&x, &x, law).unwrap();
        for (k, v) in b.iter().enumerate() {
            assert!((v - k as f64 * 0.49 * 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn recovers_linear_coefficients_and_rejects_nonlinear() {
        let law = &laws()[2];
        let inc: Vec<f64> = (0..law.branches())
            .map(|i| 0.3 * law.driver(i, DriverKind::Diffusion) - 1.1 * law.driver(i, DriverKind::Jump))
            .collect();
        let fitted = DriverLinear::from_branch_increments(std::slice::from_ref(&inc), law, 1e-12).unwrap();
        assert!((fitted.coeffs[0][0] - 0.3).abs() < 1e-12);
        assert!((fitted.coeffs[0][1] + 1.1).abs() < 1e-12);
        let product: Vec<f64> = (0..law.branches())
            .map(|i| law.driver(i, DriverKind::Diffusion) * law.driver(i, DriverKind::Aux))
            .collect();
        assert!(matches!(
            DriverLinear::from_branch_increments(&[product], law, 1e-12),
            Err(Error::UnsupportedProcess(_))
        ));
    }

    #[test]
    fn rejects_too_many_jumps() {
        let cfg = LawConfig {
            jump_intensity: 20.0,
            aux_driver: false,
        };
        assert!(StepLaw::new(0.1, &cfg).is_err());
    }
}
