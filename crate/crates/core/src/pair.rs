//! Construction of the driving martingale `Y` by a scaling ladder, and the
//! pointwise checks of the pair conditions.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::coefficient::{CoefficientSpec, DirectionTable, Margins};
use crate::error::{Error, Result};
use crate::law::{DriverKind, StepLaw, DRIVERS};

/// Component `Y_j` with candidate increment `scale · driver`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YComponentConfig {
    pub driver: DriverKind,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub components: Vec<YComponentConfig>,
    /// Ladder `{1, 1/2, …, 2^-depth, 0}`.
    #[serde(default = "default_depth")]
    pub ladder_depth: u32,
    /// Margins at or below this value count as inadmissible.
    #[serde(default = "default_min_margin")]
    pub min_margin: f64,
}

fn default_depth() -> u32 {
    10
}

fn default_min_margin() -> f64 {
    1e-9
}

/// Chosen scale for one step and the margins it leaves on every branch.
#[derive(Debug, Clone, PartialEq)]
pub struct YStep {
    pub rho: f64,
    pub margins: Vec<Margins>,
}

/// Direction tables of every branch of one step law.
#[derive(Debug, Clone)]
pub struct LawTables {
    pub tables: Vec<DirectionTable>,
}

#[derive(Debug, Clone)]
pub struct PairBuilder {
    config: PairConfig,
}

impl PairBuilder {
    pub fn new(config: PairConfig, coefficient: &CoefficientSpec) -> Result<Self> {
        if config.components.len() != coefficient.dim() {
            return Err(Error::config(
                "pair.components",
                alloc::format!(
                    "{} Y components for a coefficient of dimension {}",
                    config.components.len(),
                    coefficient.dim()
                ),
            ));
        }
        if config.components.iter().any(|c| !c.scale.is_finite()) {
            return Err(Error::config("pair.components.scale", "must be finite"));
        }
        if config.ladder_depth > 60 {
            return Err(Error::config("pair.ladder_depth", "must be at most 60"));
        }
        if !(config.min_margin >= 0.0 && config.min_margin < 0.5) {
            return Err(Error::config("pair.min_margin", "must lie in [0, 1/2)"));
        }
        Ok(PairBuilder { config })
    }

    pub fn config(&self) -> &PairConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.components.len()
    }

    /// Driver loadings of the unscaled candidate `Y_j` increment.
    pub fn candidate_coeffs(&self, j: usize) -> [f64; DRIVERS] {
        let c = self.config.components[j];
        let mut out = [0.0; DRIVERS];
        out[c.driver.index()] = c.scale;
        out
    }

    /// Unscaled candidate jump on a branch.
    pub fn candidate(&self, drivers: &[f64; DRIVERS]) -> Vec<f64> {
        self.config
            .components
            .iter()
            .map(|c| c.scale * drivers[c.driver.index()])
            .collect()
    }

    pub fn tables(&self, coefficient: &CoefficientSpec, law: &StepLaw) -> LawTables {
        LawTables {
            tables: (0..law.branches())
                .map(|i| coefficient.direction_table(&self.candidate(law.drivers(i))))
                .collect(),
        }
    }

    /// Largest ladder scale keeping every branch strictly inside the admissible set.
    /// `dmt[i]` is the `Δm̃` realized together with branch `i`.
    pub fn ladder(&self, coefficient: &CoefficientSpec, tables: &LawTables, pred: f64, dmt: &[f64]) -> YStep {
        let infs: Vec<f64> = tables
            .tables
            .iter()
            .map(|t| t.inf_df(coefficient, pred))
            .collect();
        let margins_at = |rho: f64| -> Vec<Margins> {
            tables
                .tables
                .iter()
                .zip(&infs)
                .zip(dmt)
                .map(|((t, inf), d)| Margins {
                    a: 1.0 + d - 2.0 * rho * t.sup_g,
                    b: 1.0 + d + rho * inf,
                })
                .collect()
        };
        let mut rho = 1.0;
        for _ in 0..=self.config.ladder_depth {
            let margins = margins_at(rho);
            if margins.iter().all(|m| m.min() > self.config.min_margin) {
                return YStep { rho, margins };
            }
            rho *= 0.5;
        }
        YStep {
            rho: 0.0,
            margins: margins_at(0.0),
        }
    }
}

/// Minimum over checked points of `lhs + 1` for each condition, and violation counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub checked: usize,
    pub min_i: f64,
    pub min_ii: f64,
    pub min_iii: f64,
    /// Points where some condition fails even weakly (`lhs < −1`).
    pub weak_violations: usize,
    /// Points where some condition holds only with equality or fails.
    pub strict_violations: usize,
    /// Points where (iii) and monotonicity of the one-step map disagree.
    pub form_disagreements: usize,
}

impl Default for ConditionReport {
    fn default() -> Self {
        ConditionReport {
            checked: 0,
            min_i: f64::INFINITY,
            min_ii: f64::INFINITY,
            min_iii: f64::INFINITY,
            weak_violations: 0,
            strict_violations: 0,
            form_disagreements: 0,
        }
    }
}

/// Inputs of one pointwise check: the step data and the two states before the step.
#[derive(Debug, Clone, Copy)]
pub struct ConditionPoint<'a> {
    pub pred: f64,
    pub dmt: f64,
    pub dy: &'a [f64],
    pub x: f64,
    pub x_other: Option<f64>,
}

impl ConditionReport {
    pub fn strict_ok(&self) -> bool {
        self.strict_violations == 0 && self.weak_violations == 0 && self.form_disagreements == 0
    }

    pub fn merge(&mut self, other: &ConditionReport) {
        self.checked += other.checked;
        self.min_i = self.min_i.min(other.min_i);
        self.min_ii = self.min_ii.min(other.min_ii);
        self.min_iii = self.min_iii.min(other.min_iii);
        self.weak_violations += other.weak_violations;
        self.strict_violations += other.strict_violations;
        self.form_disagreements += other.form_disagreements;
    }

    /// Evaluates (i), (ii) and, when a second state is given, (iii) together with
    /// its one-step-map form.
    pub fn record(&mut self, coefficient: &CoefficientSpec, p: ConditionPoint<'_>) {
        let fy = coefficient.f_dot(p.x, p.pred, p.dy);
        let other = p.x_other.map(|xo| (xo, coefficient.f_dot(xo, p.pred, p.dy)));
        self.record_values(p.pred, p.dmt, p.x, fy, other);
    }

    /// Checks every state of `xs` alone and every pair of distinct entries,
    /// evaluating `fᵀΔY` once per state.
    pub fn record_slice(&mut self, coefficient: &CoefficientSpec, pred: f64, dmt: f64, dy: &[f64], xs: &[f64]) {
        let fys: Vec<f64> = xs.iter().map(|&x| coefficient.f_dot(x, pred, dy)).collect();
        for (u, (&x, &fy)) in xs.iter().zip(&fys).enumerate() {
            self.record_values(pred, dmt, x, fy, None);
            for (&xo, &fo) in xs[..u].iter().zip(&fys[..u]) {
                self.record_values(pred, dmt, x, fy, Some((xo, fo)));
            }
        }
    }

    fn record_values(&mut self, pred: f64, dmt: f64, x: f64, fy: f64, other: Option<(f64, f64)>) {
        self.checked += 1;
        let mut weak = false;
        let mut strict = false;
        let mut note = |v: f64, slot: &mut f64| {
            *slot = slot.min(v);
            if v < 0.0 {
                weak = true;
            }
            if v <= 0.0 {
                strict = true;
            }
        };
        let gap = pred - x;
        if gap != 0.0 {
            note(1.0 + dmt - fy / gap, &mut self.min_i);
        }
        if x != 0.0 {
            note(1.0 + dmt + fy / x, &mut self.min_ii);
        }
        if let Some((xo, fo)) = other {
            let dx = x - xo;
            if dx != 0.0 {
                let v = 1.0 + dmt + (fy - fo) / dx;
                note(v, &mut self.min_iii);
                let step = |x: f64, fx: f64| x + x * dmt + fx;
                let map_diff = step(x, fy) - step(xo, fo);
                // The map is nondecreasing between the two points iff its increment
                // has the sign of `dx` (or vanishes).
                let monotone = map_diff * dx.signum() >= 0.0;
                let cond = v >= 0.0;
                // Rounding can flip the sign of either side when it is ~0.
                let near_zero = v.abs() < 1e-12 || map_diff.abs() < 1e-12 * dx.abs().max(1e-300);
                if monotone != cond && !near_zero {
                    self.form_disagreements += 1;
                }
            }
        }
        if weak {
            self.weak_violations += 1;
        }
        if strict {
            self.strict_violations += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{CoefficientConfig, Shape};
    use crate::law::LawConfig;
    use alloc::vec;

    fn spec() -> CoefficientSpec {
        CoefficientSpec::new(&CoefficientConfig {
            components: vec![vec![Shape::Bump {
                center: 0.5,
                half_width: 0.4,
                height: 2.0,
            }]],
            phi_width: 1.0,
            xgrid_resolution: 1024,
        })
        .unwrap()
    }

    fn builder(scale: f64, spec: &CoefficientSpec) -> PairBuilder {
        PairBuilder::new(
            PairConfig {
                components: vec![YComponentConfig {
                    driver: DriverKind::Jump,
                    scale,
                }],
                ladder_depth: 10,
                min_margin: 1e-9,
            },
            spec,
        )
        .unwrap()
    }

    #[test]
    fn zero_coefficient_keeps_full_scale() {
        let spec = CoefficientSpec::zero(1);
        let b = builder(5.0, &spec);
        let law = StepLaw::new(0.1, &LawConfig::default()).unwrap();
        let t = b.tables(&spec, &law);
        let y = b.ladder(&spec, &t, 0.4, &[0.0, 0.1, -0.2]);
        assert_eq!(y.rho, 1.0);
    }

    #[test]
    fn oversized_candidates_are_scaled_down() {
        let spec = spec();
        let b = builder(3.0, &spec);
        let law = StepLaw::new(0.1, &LawConfig::default()).unwrap();
        let t = b.tables(&spec, &law);
        let dmt = [0.05, 0.05, -0.3];
        let y = b.ladder(&spec, &t, 0.5, &dmt);
        assert!(y.rho < 1.0 && y.rho > 0.0);
        for i in 0..law.branches() {
            let z: Vec<f64> = b.candidate(law.drivers(i)).iter().map(|v| v * y.rho).collect();
            let m = spec.jump_set_margin(dmt[i], 0.5, &z);
            assert!(m.min() > 0.0);
            assert!((m.a - y.margins[i].a).abs() < 1e-12 && (m.b - y.margins[i].b).abs() < 1e-12);
        }
        // The next rung up must fail somewhere.
        let ok_up = (0..law.branches()).all(|i| {
            let z: Vec<f64> = b.candidate(law.drivers(i)).iter().map(|v| v * 2.0 * y.rho).collect();
            spec.jump_set_margin(dmt[i], 0.5, &z).min() > 1e-9
        });
        assert!(!ok_up);
    }

    #[test]
    fn slice_recording_matches_pointwise_recording() {
        let spec = spec();
        let xs = [0.0, 0.1, 0.25, 0.25, 0.4, 0.55];
        let (pred, dmt, dy) = (0.6, -0.2, [0.15]);
        let mut one = ConditionReport::default();
        for (u, &x) in xs.iter().enumerate() {
            let point = |x_other| ConditionPoint {
                pred,
                dmt,
                dy: &dy,
                x,
                x_other,
            };
            one.record(&spec, point(None));
            for &xo in &xs[..u] {
                one.record(&spec, point(Some(xo)));
            }
        }
        let mut all = ConditionReport::default();
        all.record_slice(&spec, pred, dmt, &dy, &xs);
        assert_eq!(one, all);
        assert_eq!(all.checked, 6 + 15);
    }

    #[test]
    fn zero_coefficient_conditions_reduce_to_hy() {
        let spec = CoefficientSpec::zero(1);
        let mut r = ConditionReport::default();
        r.record(
            &spec,
            ConditionPoint {
                pred: 0.5,
                dmt: -0.4,
                dy: &[10.0],
                x: 0.2,
                x_other: Some(0.1),
            },
        );
        assert!(r.strict_ok());
        assert!((r.min_i - 0.6).abs() < 1e-15 && (r.min_iii - 0.6).abs() < 1e-15);
    }

    #[test]
    fn oversized_jump_is_flagged() {
        let spec = spec();
        let mut r = ConditionReport::default();
        for i in 0..50 {
            let x = 0.1 + 0.3 * i as f64 / 50.0;
            r.record(
                &spec,
                ConditionPoint {
                    pred: 0.5,
                    dmt: 0.0,
                    dy: &[-40.0],
                    x,
                    x_other: Some(x + 0.01),
                },
            );
        }
        assert!(r.weak_violations > 0);
        assert_eq!(r.form_disagreements, 0);
    }
}
