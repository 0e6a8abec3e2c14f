//! Solutions of `ΔX_k = X_{k−1}Δm̃_k + f(X_{k−1})ᵀΔY_k` along a driving path,
//! the family `M^u` they generate, and the flow with its x-derivative.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::coefficient::CoefficientSpec;
use crate::path::DrivingPath;

/// One step of the equation from `x`.
#[inline]
pub fn natural_step(coefficient: &CoefficientSpec, pred: f64, dmt: f64, dy: &[f64], x: f64) -> f64 {
    x + x * dmt + coefficient.f_dot(x, pred, dy)
}

/// Derivative of [`natural_step`] with respect to `x`.
#[inline]
pub fn step_derivative(coefficient: &CoefficientSpec, pred: f64, dmt: f64, dy: &[f64], x: f64) -> f64 {
    1.0 + dmt + coefficient.df_dot(x, pred, dy)
}

/// Solution started at `X_u = x`; entry `k − u` holds `X_k`.
pub fn solve_natural(coefficient: &CoefficientSpec, path: &DrivingPath, u: usize, x: f64) -> Vec<f64> {
    let n = path.steps();
    let mut out = Vec::with_capacity(n + 1 - u);
    let mut v = x;
    out.push(v);
    for k in (u + 1)..=n {
        v = natural_step(coefficient, path.pred[k], path.dmt[k], &path.dy[k], v);
        out.push(v);
    }
    out
}

/// Flow `Ξ^u(x)` and its derivative; entry `k − u` refers to step `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub u: usize,
    pub x: f64,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

impl Flow {
    pub fn at(&self, k: usize) -> f64 {
        self.values[k - self.u]
    }

    pub fn deriv_at(&self, k: usize) -> f64 {
        self.derivs[k - self.u]
    }
}

pub fn flow_solve(coefficient: &CoefficientSpec, path: &DrivingPath, u: usize, x: f64) -> Flow {
    let n = path.steps();
    let mut values = Vec::with_capacity(n + 1 - u);
    let mut derivs = Vec::with_capacity(n + 1 - u);
    let (mut v, mut d) = (x, 1.0);
    values.push(v);
    derivs.push(d);
    for k in (u + 1)..=n {
        let (p, m, y) = (path.pred[k], path.dmt[k], &path.dy[k]);
        d *= step_derivative(coefficient, p, m, y, v);
        v = natural_step(coefficient, p, m, y, v);
        values.push(v);
        derivs.push(d);
    }
    Flow { u, x, values, derivs }
}

/// `M^u_k` for grid `u ≤ k`; `M^∞ ≡ 1` is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleFamily {
    rows: Vec<Vec<f64>>,
}

impl MartingaleFamily {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        MartingaleFamily { rows }
    }

    pub fn steps(&self) -> usize {
        self.rows.len() - 1
    }

    /// `M^u_k`; requires `u ≤ k`.
    pub fn get(&self, u: usize, k: usize) -> f64 {
        self.rows[u][k - u]
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.rows[u]
    }

    /// `M^u_N` for `u = 0..=N`: the conditional CDF of the random time at the horizon.
    pub fn terminal(&self) -> Vec<f64> {
        let n = self.steps();
        (0..=n).map(|u| self.get(u, n)).collect()
    }

    /// `M^u_k` for `u = 0..=k`.
    pub fn slice(&self, k: usize) -> Vec<f64> {
        (0..=k).map(|u| self.get(u, k)).collect()
    }
}

/// `M^u` solved from `1 − Z_u` for every grid `u`.
pub fn build_family(coefficient: &CoefficientSpec, path: &DrivingPath) -> MartingaleFamily {
    let rows = (0..=path.steps())
        .map(|u| solve_natural(coefficient, path, u, 1.0 - path.z[u]))
        .collect();
    MartingaleFamily { rows }
}

/// Largest violations of the pathwise family axioms (all zero when they hold).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FamilyReport {
    /// `|M^u_u − (1 − Z_u)|`.
    pub start: f64,
    /// `max(0, −M^u_k)`.
    pub below_zero: f64,
    /// `max(0, M^u_k − (1 − Z_k))`.
    pub above_bound: f64,
    /// `max(0, M^u_k − M^{u+1}_k)`.
    pub monotonicity: f64,
}

impl FamilyReport {
    pub fn worst(&self) -> f64 {
        self.start
            .max(self.below_zero)
            .max(self.above_bound)
            .max(self.monotonicity)
    }

    pub fn merge(&mut self, o: &FamilyReport) {
        self.start = self.start.max(o.start);
        self.below_zero = self.below_zero.max(o.below_zero);
        self.above_bound = self.above_bound.max(o.above_bound);
        self.monotonicity = self.monotonicity.max(o.monotonicity);
    }
}

pub fn check_family(family: &MartingaleFamily, z: &[f64]) -> FamilyReport {
    let n = family.steps();
    let mut r = FamilyReport::default();
    for u in 0..=n {
        r.start = r.start.max((family.get(u, u) - (1.0 - z[u])).abs());
        for k in u..=n {
            let v = family.get(u, k);
            r.below_zero = r.below_zero.max(-v);
            r.above_bound = r.above_bound.max(v - (1.0 - z[k]));
            if u < k {
                r.monotonicity = r.monotonicity.max(v - family.get(u + 1, k));
            }
        }
    }
    r
}

/// `inf_{u ≤ v ≤ k} max(M^v_k, 0) ∧ (1 − Z_k)`: the continuous-time
/// regularization restricted to the grid; equals `M^u_k` for a valid family.
pub fn regularized(family: &MartingaleFamily, z: &[f64], u: usize, k: usize) -> f64 {
    (u..=k)
        .map(|v| family.get(v, k).max(0.0))
        .fold(1.0 - z[k], f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{affine_solve, cumulate, doleans_exponential};
    use crate::path::fixtures::default_spec;
    use crate::path::NaturalModel;
    use crate::zmodel::ZGeneratorConfig;

    fn model() -> NaturalModel {
        NaturalModel::new(&default_spec()).unwrap()
    }

    #[test]
    fn zero_start_is_absorbing() {
        let m = model();
        let path = m.simulate(|k, _| (k * 7) % 3);
        assert!(solve_natural(m.coefficient(), &path, 2, 0.0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_coefficient_reduces_to_exponential() {
        let m = model().without_coefficient();
        let path = m.simulate(|k, _| (k * 5) % 3);
        let w = cumulate(0.0, &path.dmt[1..]);
        let e = doleans_exponential(&w, 3);
        let x = solve_natural(m.coefficient(), &path, 3, 0.4);
        for k in 3..=10 {
            assert!((x[k - 3] - 0.4 * e[k]).abs() < 1e-15);
        }
        let flow = flow_solve(m.coefficient(), &path, 3, 0.4);
        for k in 3..=10 {
            assert!((flow.deriv_at(k) - e[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_z_without_coefficient_is_flat() {
        let mut spec = default_spec();
        spec.z = ZGeneratorConfig {
            sigma_n: 0.0,
            jump_scale: 0.0,
            ..spec.z
        };
        let m = NaturalModel::new(&spec).unwrap().without_coefficient();
        let path = m.simulate(|_, _| 2);
        let fam = build_family(m.coefficient(), &path);
        for u in 0..=10 {
            for k in u..=10 {
                assert!((fam.get(u, k) - (1.0 - path.z[u])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn family_axioms_hold_on_paths() {
        let m = model();
        for seed in 0..30usize {
            let path = m.simulate(|k, _| (seed * 31 + k * k * 7 + seed / 3) % 3);
            let fam = build_family(m.coefficient(), &path);
            assert_eq!(check_family(&fam, &path.z).worst(), 0.0);
            for u in 0..=10 {
                for k in u..=10 {
                    assert_eq!(regularized(&fam, &path.z, u, k), fam.get(u, k));
                }
            }
        }
    }

    #[test]
    fn gap_to_bound_solves_affine_equation() {
        let m = model();
        let path = m.simulate(|k, _| (k * 2 + 1) % 3);
        let u = 2;
        let x = solve_natural(m.coefficient(), &path, u, 1.0 - path.z[u]);
        let mut w = alloc::vec![0.0; path.steps() + 1];
        for k in (u + 1)..=path.steps() {
            let xk = x[k - 1 - u];
            let f = m.coefficient().f_dot(xk, path.pred[k], &path.dy[k]);
            w[k] = w[k - 1] + path.dmt[k] - f / (path.pred[k] - xk);
        }
        let gap = affine_solve(u, 0.0, &w, &path.a).unwrap();
        for k in u..=path.steps() {
            assert!((gap[k] - (1.0 - path.z[k] - x[k - u])).abs() < 1e-14);
        }
    }

    #[test]
    fn flow_derivative_matches_finite_difference() {
        let m = model();
        let path = m.simulate(|k, _| (k * 4 + 2) % 3);
        let h = 1e-5;
        let f0 = flow_solve(m.coefficient(), &path, 1, 0.3);
        let fp = flow_solve(m.coefficient(), &path, 1, 0.3 + h);
        let fm = flow_solve(m.coefficient(), &path, 1, 0.3 - h);
        for k in 1..=10 {
            let fd = (fp.at(k) - fm.at(k)) / (2.0 * h);
            assert!((fd - f0.deriv_at(k)).abs() < 1e-8);
        }
    }
}
