//! The Markovian coefficient `f(x) = φ(P − x) φ(x) g(x)` and its jump-admissibility margins.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smooth::{bump, bump_deriv, smooth_step, smooth_step_deriv, Phi};

/// Building block of a component `g_j`, supported on a compact interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// `height · bump((x − center) / half_width)`.
    Bump {
        center: f64,
        half_width: f64,
        height: f64,
    },
    /// Equal to `height` on `[lo, hi]`, with smooth ramps of width `ramp` on each side.
    Plateau { lo: f64, hi: f64, ramp: f64, height: f64 },
}

impl Shape {
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Shape::Bump {
                center, half_width, ..
            } => (center - half_width, center + half_width),
            Shape::Plateau { lo, hi, ramp, .. } => (lo - ramp, hi + ramp),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Bump {
                center,
                half_width,
                height,
            } => center.is_finite() && height.is_finite() && half_width > 0.0 && half_width.is_finite(),
            Shape::Plateau { lo, hi, ramp, height } => {
                lo.is_finite() && hi >= lo && hi.is_finite() && ramp > 0.0 && ramp.is_finite() && height.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("pair.components.shapes", "shape parameters must be finite with positive widths"))
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Shape::Bump {
                center,
                half_width,
                height,
            } => height * bump((x - center) / half_width),
            Shape::Plateau { lo, hi, ramp, height } => {
                height * smooth_step((x - lo + ramp) / ramp) * smooth_step((hi + ramp - x) / ramp)
            }
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            Shape::Bump {
                center,
                half_width,
                height,
            } => height * bump_deriv((x - center) / half_width) / half_width,
            Shape::Plateau { lo, hi, ramp, height } => {
                let u = (x - lo + ramp) / ramp;
                let v = (hi + ramp - x) / ramp;
                height * (smooth_step_deriv(u) * smooth_step(v) - smooth_step(u) * smooth_step_deriv(v)) / ramp
            }
        }
    }

    /// Upper bounds on `sup|value|` and `sup|deriv|`.
    fn bounds(&self) -> (f64, f64) {
        match *self {
            Shape::Bump {
                half_width, height, ..
            } => (height.abs(), height.abs() * max_abs_sampled(bump_deriv, -1.0, 1.0) / half_width),
            Shape::Plateau { ramp, height, .. } => (
                height.abs(),
                2.0 * height.abs() * max_abs_sampled(smooth_step_deriv, 0.0, 1.0) / ramp,
            ),
        }
    }
}

fn max_abs_sampled(h: fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const N: usize = 20_000;
    let m = (0..=N)
        .map(|i| h(lo + (hi - lo) * i as f64 / N as f64).abs())
        .fold(0.0, f64::max);
    m * 1.001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    /// Shapes summed into each component `g_j`; the outer length is `m`.
    pub components: Vec<Vec<Shape>>,
    #[serde(default = "default_phi_width")]
    pub phi_width: f64,
    #[serde(default = "default_resolution")]
    pub xgrid_resolution: usize,
}

fn default_phi_width() -> f64 {
    1.0
}

fn default_resolution() -> usize {
    2048
}

/// Compiled coefficient with a cached table of `g`, `g'` on the dense x-grid.
#[derive(Debug, Clone)]
pub struct CoefficientSpec {
    phi: Phi,
    components: Vec<Vec<Shape>>,
    support: Option<(f64, f64)>,
    xs: Vec<f64>,
    // g[i * m + j], dg[i * m + j]
    g: Vec<f64>,
    dg: Vec<f64>,
}

/// Margins of conditions ◦ (`a`) and ◦◦ (`b`); a jump is admissible iff both are positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub a: f64,
    pub b: f64,
}

impl Margins {
    pub fn min(&self) -> f64 {
        self.a.min(self.b)
    }
}

impl CoefficientSpec {
    pub fn new(config: &CoefficientConfig) -> Result<Self> {
        if config.components.is_empty() {
            return Err(Error::config("pair.components", "at least one component is required"));
        }
        if !(config.phi_width > 0.0 && config.phi_width <= 2.0) {
            return Err(Error::config("pair.phi_width", "must lie in (0, 2]"));
        }
        if config.xgrid_resolution < 16 {
            return Err(Error::config("pair.xgrid_resolution", "must be at least 16"));
        }
        let mut support: Option<(f64, f64)> = None;
        for shape in config.components.iter().flatten() {
            shape.validate()?;
            let (lo, hi) = shape.support();
            support = Some(match support {
                None => (lo, hi),
                Some((a, b)) => (a.min(lo), b.max(hi)),
            });
        }
        let mut spec = CoefficientSpec {
            phi: Phi {
                width: config.phi_width,
            },
            components: config.components.clone(),
            support,
            xs: Vec::new(),
            g: Vec::new(),
            dg: Vec::new(),
        };
        if let Some((lo, hi)) = support {
            let n = config.xgrid_resolution;
            let m = spec.dim();
            spec.xs = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
            spec.g = vec![0.0; n * m];
            spec.dg = vec![0.0; n * m];
            for i in 0..n {
                let x = spec.xs[i];
                for j in 0..m {
                    spec.g[i * m + j] = spec.g_component(j, x);
                    spec.dg[i * m + j] = spec.dg_component(j, x);
                }
            }
        }
        Ok(spec)
    }

    /// Coefficient with `g ≡ 0` in dimension `m`.
    pub fn zero(m: usize) -> Self {
        CoefficientSpec {
            phi: Phi::default(),
            components: vec![Vec::new(); m],
            support: None,
            xs: Vec::new(),
            g: Vec::new(),
            dg: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn phi(&self) -> &Phi {
        &self.phi
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        self.support
    }

    pub fn is_zero(&self) -> bool {
        self.support.is_none()
    }

    pub fn g_component(&self, j: usize, x: f64) -> f64 {
        self.components[j].iter().map(|s| s.value(x)).sum()
    }

    pub fn dg_component(&self, j: usize, x: f64) -> f64 {
        self.components[j].iter().map(|s| s.deriv(x)).sum()
    }

    pub fn g(&self, x: f64) -> Vec<f64> {
        (0..self.dim()).map(|j| self.g_component(j, x)).collect()
    }

    pub fn g_dot(&self, x: f64, z: &[f64]) -> f64 {
        (0..self.dim()).map(|j| self.g_component(j, x) * z[j]).sum()
    }

    /// `f(x) = φ(P − x) φ(x) g(x)` with `P` the predictable projection of `1 − Z`.
    pub fn evaluate_f(&self, x: f64, pred: f64) -> Vec<f64> {
        let s = self.phi.value(pred - x) * self.phi.value(x);
        (0..self.dim()).map(|j| s * self.g_component(j, x)).collect()
    }

    pub fn f_dot(&self, x: f64, pred: f64, z: &[f64]) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        self.phi.value(pred - x) * self.phi.value(x) * self.g_dot(x, z)
    }

    /// `∂f/∂x` at `x`.
    pub fn df_dx(&self, x: f64, pred: f64) -> Vec<f64> {
        let (a, b, c) = self.df_factors(x, pred);
        (0..self.dim())
            .map(|j| (a + b) * self.g_component(j, x) + c * self.dg_component(j, x))
            .collect()
    }

    pub fn df_dot(&self, x: f64, pred: f64, z: &[f64]) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let (a, b, c) = self.df_factors(x, pred);
        (0..self.dim())
            .map(|j| ((a + b) * self.g_component(j, x) + c * self.dg_component(j, x)) * z[j])
            .sum()
    }

    fn df_factors(&self, x: f64, pred: f64) -> (f64, f64, f64) {
        let p = &self.phi;
        let (u, du) = (p.value(pred - x), p.deriv(pred - x));
        let (v, dv) = (p.value(x), p.deriv(x));
        (-du * v, u * dv, u * v)
    }

    fn table_dot(table: &[f64], m: usize, i: usize, z: &[f64]) -> f64 {
        let row = &table[i * m..(i + 1) * m];
        row.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    /// `sup_x |g(x)ᵀz|` over the dense grid (zero off the support).
    pub fn sup_abs_gz(&self, z: &[f64]) -> f64 {
        let m = self.dim();
        (0..self.xs.len())
            .map(|i| Self::table_dot(&self.g, m, i, z).abs())
            .fold(0.0, f64::max)
    }

    /// `min(0, inf_x ∂f(x)ᵀz)` over the dense grid.
    pub fn inf_dfz(&self, pred: f64, z: &[f64]) -> f64 {
        let m = self.dim();
        let mut best = 0.0f64;
        for (i, &x) in self.xs.iter().enumerate() {
            let (a, b, c) = self.df_factors(x, pred);
            let v = (a + b) * Self::table_dot(&self.g, m, i, z) + c * Self::table_dot(&self.dg, m, i, z);
            best = best.min(v);
        }
        best
    }

    /// Margins of ◦ and ◦◦ for a candidate jump `z` given the concurrent `Δm̃`.
    pub fn jump_set_margin(&self, dmt: f64, pred: f64, z: &[f64]) -> Margins {
        let base = 1.0 + dmt;
        Margins {
            a: base - 2.0 * self.sup_abs_gz(z),
            b: base + self.inf_dfz(pred, z),
        }
    }

    /// Per-component Lipschitz constants of `x ↦ f(x)`, valid for any `P`.
    pub fn lipschitz_bounds(&self) -> Vec<f64> {
        let b = self.phi.bound();
        self.components
            .iter()
            .map(|shapes| {
                let (g, dg) = shapes.iter().fold((0.0, 0.0), |(g, dg), s| {
                    let (a, c) = s.bounds();
                    (g + a, dg + c)
                });
                2.0 * b * g + b * b * dg
            })
            .collect()
    }

    /// Precomputes what the admissibility check needs for a fixed jump direction `w`.
    pub fn direction_table(&self, w: &[f64]) -> DirectionTable {
        let sup_g = self.sup_abs_gz(w);
        let linear = match self.support {
            Some((lo, hi)) if lo >= 0.0 && hi <= 1.0 => {
                let m = self.dim();
                let mut lines: Vec<(f64, f64)> = Vec::with_capacity(self.xs.len() + 1);
                lines.push((0.0, 0.0));
                for (i, &x) in self.xs.iter().enumerate() {
                    let gz = Self::table_dot(&self.g, m, i, w);
                    let dgz = Self::table_dot(&self.dg, m, i, w);
                    lines.push((gz + x * dgz, -2.0 * x * gz - x * x * dgz));
                }
                Some(LowerEnvelope::new(lines))
            }
            _ => None,
        };
        DirectionTable {
            w: w.to_vec(),
            sup_g,
            linear,
        }
    }
}

/// Admissibility data for the ray `{ρw : ρ ≥ 0}`.
///
/// When the support of `g` lies in `[0, 1]` and `P ∈ [0, 1]`, `φ` acts as the
/// identity wherever `g` is nonzero and `∂f(x)ᵀw = P·a(x) + b(x)`; the infimum
/// over the grid is then the lower envelope of those lines, evaluated at `P`.
#[derive(Debug, Clone)]
pub struct DirectionTable {
    pub w: Vec<f64>,
    pub sup_g: f64,
    linear: Option<LowerEnvelope>,
}

impl DirectionTable {
    /// `min(0, inf_x ∂f(x)ᵀw)`.
    pub fn inf_df(&self, spec: &CoefficientSpec, pred: f64) -> f64 {
        match &self.linear {
            Some(env) if (0.0..=1.0).contains(&pred) => env.query(pred).min(0.0),
            _ => spec.inf_dfz(pred, &self.w),
        }
    }
}

/// Minimum of a family of lines `y = a·p + b`, answered in `O(log n)`.
#[derive(Debug, Clone)]
pub struct LowerEnvelope {
    // Slopes strictly decreasing along the hull; `breaks[i]` is where line i+1 takes over.
    lines: Vec<(f64, f64)>,
    breaks: Vec<f64>,
}

impl LowerEnvelope {
    pub fn new(mut lines: Vec<(f64, f64)>) -> Self {
        lines.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.total_cmp(&y.1)));
        lines.dedup_by(|later, earlier| later.0 == earlier.0);
        let mut hull: Vec<(f64, f64)> = Vec::with_capacity(lines.len());
        for line in lines {
            while hull.len() >= 2 {
                let l1 = hull[hull.len() - 2];
                let l2 = hull[hull.len() - 1];
                // l2 is useless if l1 and `line` meet at or below it.
                let lhs = (line.1 - l1.1) * (l1.0 - l2.0);
                let rhs = (l2.1 - l1.1) * (l1.0 - line.0);
                if lhs <= rhs {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(line);
        }
        let breaks = hull
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[0].0 - w[1].0))
            .collect();
        LowerEnvelope { lines: hull, breaks }
    }

    pub fn query(&self, p: f64) -> f64 {
        let idx = self.breaks.partition_point(|&b| b < p);
        let (a, b) = self.lines[idx];
        let mut v = a * p + b;
        // Guard against rounding at the breakpoints.
        if idx > 0 {
            let (a, b) = self.lines[idx - 1];
            v = v.min(a * p + b);
        }
        if idx + 1 < self.lines.len() {
            let (a, b) = self.lines[idx + 1];
            v = v.min(a * p + b);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn two_bumps() -> CoefficientSpec {
        CoefficientSpec::new(&CoefficientConfig {
            components: vec![
                vec![Shape::Bump {
                    center: 0.45,
                    half_width: 0.35,
                    height: 1.2,
                }],
                vec![Shape::Bump {
                    center: 0.55,
                    half_width: 0.4,
                    height: -0.9,
                }],
            ],
            phi_width: 1.0,
            xgrid_resolution: 2048,
        })
        .unwrap()
    }

    fn unit_plateau() -> CoefficientSpec {
        CoefficientSpec::new(&CoefficientConfig {
            components: vec![vec![Shape::Plateau {
                lo: 0.0,
                hi: 1.0,
                ramp: 0.25,
                height: 1.0,
            }]],
            phi_width: 1.0,
            xgrid_resolution: 2048,
        })
        .unwrap()
    }

    #[test]
    fn f_examples() {
        let spec = two_bumps();
        assert_eq!(spec.evaluate_f(0.0, 0.6), vec![0.0, 0.0]);
        assert!(spec.evaluate_f(0.6, 0.6).iter().all(|v| *v == 0.0));
        let f = unit_plateau().evaluate_f(0.3, 0.7);
        assert!((f[0] - 0.12).abs() < 1e-15);
    }

    #[test]
    fn zero_jump_is_admissible() {
        let spec = two_bumps();
        let m = spec.jump_set_margin(-0.2, 0.5, &[0.0, 0.0]);
        assert_eq!(m, Margins { a: 0.8, b: 0.8 });
    }

    #[test]
    fn margin_agrees_with_dense_sampling() {
        let spec = CoefficientSpec::new(&CoefficientConfig {
            components: vec![vec![Shape::Bump {
                center: 0.5,
                half_width: 0.3,
                height: 1.0,
            }]],
            phi_width: 1.0,
            xgrid_resolution: 2048,
        })
        .unwrap();
        let (z, dmt, pred) = ([0.7], 0.1, 0.65);
        let m = spec.jump_set_margin(dmt, pred, &z);
        let mut sup = 0.0f64;
        let mut inf = 0.0f64;
        for i in 0..=10_000 {
            let x = 0.2 + 0.6 * i as f64 / 10_000.0;
            sup = sup.max((spec.g(x)[0] * z[0]).abs());
            inf = inf.min(spec.df_dx(x, pred)[0] * z[0]);
        }
        assert!((m.a - (1.0 + dmt - 2.0 * sup)).abs() < 1e-6);
        assert!((m.b - (1.0 + dmt + inf)).abs() < 1e-6);
    }

    #[test]
    fn derivative_matches_central_difference() {
        for spec in [two_bumps(), unit_plateau()] {
            for i in 0..200 {
                let x = -0.5 + 2.0 * i as f64 / 200.0;
                for &pred in &[0.2, 0.9, 1.0] {
                    let h = 1e-6;
                    let d = spec.df_dx(x, pred);
                    let fp = spec.evaluate_f(x + h, pred);
                    let fm = spec.evaluate_f(x - h, pred);
                    for j in 0..spec.dim() {
                        assert!(((fp[j] - fm[j]) / (2.0 * h) - d[j]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn envelope_matches_direct_infimum() {
        let spec = two_bumps();
        let w = [0.3, -0.25];
        let table = spec.direction_table(&w);
        for i in 0..=50 {
            let p = i as f64 / 50.0;
            let direct = spec.inf_dfz(p, &w);
            assert!((table.inf_df(&spec, p) - direct).abs() < 1e-13, "p={p}");
        }
    }

    #[test]
    fn zero_coefficient_admits_everything() {
        let spec = CoefficientSpec::zero(2);
        let m = spec.jump_set_margin(0.0, 0.5, &[50.0, -50.0]);
        assert_eq!(m.min(), 1.0);
    }

    proptest! {
        #[test]
        fn admissibility_is_star_shaped(
            z0 in -2.0f64..2.0, z1 in -2.0f64..2.0, rho in 0.0f64..=1.0,
            dmt in -0.5f64..0.5, pred in 0.05f64..1.0,
        ) {
            let spec = two_bumps();
            let m = spec.jump_set_margin(dmt, pred, &[z0, z1]);
            if m.min() > 0.0 {
                let scaled = spec.jump_set_margin(dmt, pred, &[rho * z0, rho * z1]);
                prop_assert!(scaled.min() > 0.0);
                prop_assert!(scaled.a >= m.a - 1e-12 && scaled.b >= m.b - 1e-12);
            }
        }

        #[test]
        fn difference_quotients_respect_lipschitz_bound(
            x in -1.0f64..2.0, y in -1.0f64..2.0, pred in 0.0f64..1.0,
        ) {
            prop_assume!((x - y).abs() > 1e-9);
            for spec in [two_bumps(), unit_plateau()] {
                let bounds = spec.lipschitz_bounds();
                let fx = spec.evaluate_f(x, pred);
                let fy = spec.evaluate_f(y, pred);
                for j in 0..spec.dim() {
                    prop_assert!(((fx[j] - fy[j]) / (x - y)).abs() <= bounds[j] + 1e-9);
                }
            }
        }
    }
}
