//! The law of the random time: sampling from the terminal family slice, the
//! one-step atom, the post-default kernel and the drift that martingales of the
//! small filtration acquire in the enlarged one.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::coefficient::CoefficientSpec;
use crate::error::{Error, Result};
use crate::law::{step_covariance, StepLaw, DRIVERS};

/// Grid index of the random time, or "after the horizon".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefaultTime {
    Grid(usize),
    BeyondHorizon,
}

impl DefaultTime {
    /// Whether the time is at or before grid index `k`.
    pub fn by(&self, k: usize) -> bool {
        matches!(*self, DefaultTime::Grid(v) if v <= k)
    }

    pub fn index(&self) -> Option<usize> {
        match *self {
            DefaultTime::Grid(v) => Some(v),
            DefaultTime::BeyondHorizon => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultSample {
    pub path: u64,
    pub tau: DefaultTime,
    pub uniform: f64,
}

/// Inverts the conditional CDF `u ↦ M^u_N`; mass `1 − M^N_N = Z_N` lies beyond the horizon.
pub fn sample_tau(terminal: &[f64], uniform: f64) -> Result<DefaultTime> {
    for w in terminal.windows(2) {
        if w[1] < w[0] - 1e-12 {
            return Err(Error::InvalidFamily(alloc::format!(
                "terminal CDF decreases from {} to {}",
                w[0],
                w[1]
            )));
        }
    }
    Ok(terminal
        .iter()
        .position(|&m| uniform < m)
        .map_or(DefaultTime::BeyondHorizon, DefaultTime::Grid))
}

/// `κ = 1 + Δm̃ − (1 − Z_{k−1}) g(1 − Z_{k−1})ᵀΔY`; the atom at `k` is `κ ΔA_k`.
pub fn kappa(coefficient: &CoefficientSpec, z_prev: f64, dmt: f64, dy: &[f64]) -> f64 {
    let x = 1.0 - z_prev;
    1.0 + dmt - x * coefficient.g_dot(x, dy)
}

/// Slope of `f` between the predictable CDF values `a = M^{v−1}_{k−1}` and
/// `b = M^v_{k−1}`: the derivative at `b` when the gap is below `atom_tol`.
pub fn p_kernel(coefficient: &CoefficientSpec, pred: f64, a: f64, b: f64, atom_tol: f64) -> Vec<f64> {
    if b - a <= atom_tol {
        coefficient.df_dx(b, pred)
    } else {
        let fb = coefficient.evaluate_f(b, pred);
        let fa = coefficient.evaluate_f(a, pred);
        fb.iter().zip(&fa).map(|(fb, fa)| (fb - fa) / (b - a)).collect()
    }
}

/// Closed-form one-step brackets of a test martingale with `M` and each `Y_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBrackets {
    pub mx: f64,
    pub yx: Vec<f64>,
}

impl StepBrackets {
    pub fn new(
        law: &StepLaw,
        m_coeffs: &[f64; DRIVERS],
        y_coeffs: &[[f64; DRIVERS]],
        x_coeffs: &[f64; DRIVERS],
    ) -> Self {
        StepBrackets {
            mx: step_covariance(m_coeffs, x_coeffs, law),
            yx: y_coeffs.iter().map(|y| step_covariance(y, x_coeffs, law)).collect(),
        }
    }
}

/// Martingale of the small filtration whose increments are linear in the drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestMartingale {
    /// `ΔX = cᵀ(drivers)` with constant loadings.
    Linear { name: alloc::string::String, coeffs: [f64; DRIVERS] },
    /// The martingale part `M` of `Z`.
    ZMartingale { name: alloc::string::String },
}

impl TestMartingale {
    pub fn name(&self) -> &str {
        match self {
            TestMartingale::Linear { name, .. } | TestMartingale::ZMartingale { name } => name,
        }
    }

    /// Loadings on step `k`, given the loadings of `ΔM` on that step.
    pub fn coeffs(&self, m_coeffs: &[f64; DRIVERS]) -> [f64; DRIVERS] {
        match self {
            TestMartingale::Linear { coeffs, .. } => *coeffs,
            TestMartingale::ZMartingale { .. } => *m_coeffs,
        }
    }

    pub fn increment(&self, m_coeffs: &[f64; DRIVERS], drivers: &[f64; DRIVERS]) -> f64 {
        let c = self.coeffs(m_coeffs);
        c[0] * drivers[0] + c[1] * drivers[1] + c[2] * drivers[2]
    }
}

/// Predictable data of step `k` needed by the compensator.
#[derive(Debug, Clone, Copy)]
pub struct CompensatorStep<'a> {
    pub z_prev: f64,
    pub delta_a: f64,
    pub pred: f64,
    pub brackets: &'a StepBrackets,
    /// `M^u_{k−1}` for `u = 0..=k−1`.
    pub slice_prev: &'a [f64],
}

/// `ΔB^X = ΔA · E[ΔX κ | F_{k−1}]`, the compensator of the jump of `X` at the random time.
pub fn jump_compensator(coefficient: &CoefficientSpec, s: &CompensatorStep<'_>) -> f64 {
    let x = 1.0 - s.z_prev;
    let gy: f64 = coefficient
        .g(x)
        .iter()
        .zip(&s.brackets.yx)
        .map(|(g, b)| g * b)
        .sum();
    s.delta_a * (-s.brackets.mx / s.pred - x * gy)
}

/// Drift increment of `X` on step `k` in the enlarged filtration, given the
/// random time's state at `k − 1`.
pub fn compensator_increment(
    coefficient: &CoefficientSpec,
    s: &CompensatorStep<'_>,
    k: usize,
    tau: DefaultTime,
    atom_tol: f64,
) -> f64 {
    match tau {
        DefaultTime::Grid(v) if v < k => {
            let b = s.slice_prev[v];
            let a = if v == 0 { 0.0 } else { s.slice_prev[v - 1] };
            let p = p_kernel(coefficient, s.pred, a, b, atom_tol);
            let py: f64 = p.iter().zip(&s.brackets.yx).map(|(p, b)| p * b).sum();
            -s.brackets.mx / s.pred + py
        }
        _ => (s.brackets.mx + jump_compensator(coefficient, s)) / s.z_prev,
    }
}

/// Ratios of `d_uM^u_t` to `dA` over consecutive grid cells `(v−1, v]`, `v = 1..=t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Largest `|M^v_t − M^{v−1}_t|` over cells with `ΔA_v = 0`.
    pub zero_drift_mass: f64,
}

impl Default for ContinuityReport {
    fn default() -> Self {
        ContinuityReport {
            min_ratio: f64::INFINITY,
            max_ratio: f64::NEG_INFINITY,
            zero_drift_mass: 0.0,
        }
    }
}

impl ContinuityReport {
    pub fn merge(&mut self, o: &ContinuityReport) {
        self.min_ratio = self.min_ratio.min(o.min_ratio);
        self.max_ratio = self.max_ratio.max(o.max_ratio);
        self.zero_drift_mass = self.zero_drift_mass.max(o.zero_drift_mass);
    }
}

/// `slice[u] = M^u_t`, `a[v] = A_v`.
pub fn absolute_continuity_check(slice: &[f64], a: &[f64]) -> ContinuityReport {
    let mut r = ContinuityReport::default();
    for v in 1..slice.len() {
        let mass = slice[v] - slice[v - 1];
        let da = a[v] - a[v - 1];
        if da == 0.0 {
            r.zero_drift_mass = r.zero_drift_mass.max(mass.abs());
        } else {
            let q = mass / da;
            r.min_ratio = r.min_ratio.min(q);
            r.max_ratio = r.max_ratio.max(q);
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{CoefficientConfig, Shape};
    use alloc::vec;

    #[test]
    fn sampling_inverts_the_cdf() {
        let cdf = [0.1, 0.1, 0.4, 0.7];
        assert_eq!(sample_tau(&cdf, 0.05).unwrap(), DefaultTime::Grid(0));
        assert_eq!(sample_tau(&cdf, 0.1).unwrap(), DefaultTime::Grid(2));
        assert_eq!(sample_tau(&cdf, 0.69).unwrap(), DefaultTime::Grid(3));
        assert_eq!(sample_tau(&cdf, 0.7).unwrap(), DefaultTime::BeyondHorizon);
        assert!(sample_tau(&[0.3, 0.2], 0.5).is_err());
    }

    #[test]
    fn kernel_branches() {
        let plateau = CoefficientSpec::new(&CoefficientConfig {
            components: vec![vec![Shape::Plateau {
                lo: 0.0,
                hi: 1.0,
                ramp: 0.2,
                height: 1.0,
            }]],
            phi_width: 1.0,
            xgrid_resolution: 256,
        })
        .unwrap();
        // f(x) = (P − x)x on [0, 1]: the chord slope is P − a − b, the derivative P − 2b.
        let p = p_kernel(&plateau, 0.8, 0.2, 0.5, 1e-12);
        assert!((p[0] - (0.8 - 0.7)).abs() < 1e-14);
        let p = p_kernel(&plateau, 0.8, 0.5, 0.5, 1e-12);
        assert!((p[0] - (0.8 - 1.0)).abs() < 1e-14);
        // Chord between symmetric points of the parabola is flat.
        let p = p_kernel(&plateau, 0.8, 0.3, 0.5, 1e-12);
        assert!(p[0].abs() < 1e-14);
    }

    #[test]
    fn continuity_ratios() {
        let r = absolute_continuity_check(&[0.3, 0.35, 0.35, 0.5], &[0.0, 0.05, 0.05, 0.2]);
        assert_eq!(r.zero_drift_mass, 0.0);
        assert!((r.min_ratio - 1.0).abs() < 1e-12 && (r.max_ratio - 1.0).abs() < 1e-12);
    }
}
