//! Local behaviour of `u ↦ M^u_t`: the jump identity at atoms of `A`,
//! one-sided difference quotients under local grid refinement, finite-difference
//! checks of the flow derivative, and cell masses on nested u-grids.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::StepLaw;
use crate::measure::kappa;
use crate::path::{DrivingPath, NaturalModel};
use crate::solver::{flow_solve, solve_natural, MartingaleFamily};

/// `max_t |(M^v_t − M^{v−1}_t) − (Ξ^v_t(1−Z_v) − Ξ^v_t(1−Z_v−κ_vΔ_vA))|` along one path.
pub fn jump_identity_residual(model: &NaturalModel, path: &DrivingPath, family: &MartingaleFamily, v: usize) -> f64 {
    let coef = model.coefficient();
    let top = 1.0 - path.z[v];
    let k = kappa(coef, path.z[v - 1], path.dmt[v], &path.dy[v]);
    let bottom = top - k * path.delta_a(v);
    let hi = solve_natural(coef, path, v, top);
    let lo = solve_natural(coef, path, v, bottom);
    (v..=path.steps())
        .map(|t| ((family.get(v, t) - family.get(v - 1, t)) - (hi[t - v] - lo[t - v])).abs())
        .fold(0.0, f64::max)
}

/// Outcome placed on inserted sub-steps that have no coarse counterpart.
pub const FILL_BRANCH: usize = 0;

/// A coarse path with the points `t_v − h` and `t_v + h` inserted.
///
/// The coarse outcome of step `v` is moved onto the short sub-step ending at
/// `t_v`; the long sub-step before it and the short one after `t_v` take
/// [`FILL_BRANCH`]; the long sub-step ending at `t_{v+1}` keeps the coarse
/// outcome of step `v + 1`. Returns the path and the index of `t_v` on it.
pub fn refined_path(model: &NaturalModel, coarse: &[usize], v: usize, h: f64) -> Result<(DrivingPath, usize)> {
    let grid = model.grid();
    let n = grid.steps();
    if coarse.len() != n {
        return Err(Error::GridMismatch {
            expected: n,
            got: coarse.len(),
        });
    }
    if v == 0 || v >= n || !(h > 0.0 && h <= 0.5 * grid.dt()) {
        return Err(Error::config("regularity", "refinement point must be interior and h at most dt/2"));
    }
    let tv = grid.point(v);
    let mut times = Vec::with_capacity(n + 3);
    let mut outcomes = Vec::with_capacity(n + 2);
    times.push(0.0);
    for k in 1..=n {
        if k == v {
            times.push(tv - h);
            outcomes.push(FILL_BRANCH);
            times.push(tv);
            outcomes.push(coarse[k - 1]);
        } else if k == v + 1 {
            times.push(tv + h);
            outcomes.push(FILL_BRANCH);
            times.push(grid.point(k));
            outcomes.push(coarse[k - 1]);
        } else {
            times.push(grid.point(k));
            outcomes.push(coarse[k - 1]);
        }
    }
    let z0 = model.zmodel().config().z0;
    let mut path = DrivingPath::start(times.clone(), z0, model.pair().dim());
    let law_config = crate::law::LawConfig {
        jump_intensity: model.law().jump_prob() / model.law().dt(),
        aux_driver: model.law().has_aux(),
    };
    for (s, &b) in outcomes.iter().enumerate() {
        let (t0, t1) = (times[s], times[s + 1]);
        let law = StepLaw::new(t1 - t0, &law_config)?;
        let tables = model.tables_for(&law);
        let dh = model.zmodel().hazard_at(t1) - model.zmodel().hazard_at(t0);
        let fan = model.fan_with(&law, &tables, dh, path.z[s]);
        path.push(&fan, b);
    }
    Ok((path, v + 1))
}

/// One-sided difference quotients at `t_v` for one refinement step `h`, with
/// the predicted limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotientSample {
    pub h: f64,
    pub left: f64,
    pub left_limit: f64,
    pub right: f64,
    pub right_limit: f64,
}

impl QuotientSample {
    pub fn left_residual(&self) -> f64 {
        (self.left - self.left_limit).abs()
    }

    pub fn right_residual(&self) -> f64 {
        (self.right - self.right_limit).abs()
    }
}

/// Quotients `(M^v_T − M^{v−h}_T)/(A_v − A_{v−h})` and
/// `(M^{v+h}_T − M^v_T)/(A_{v+h} − A_v)` at the horizon `T`, against
/// `dΞ^v_T/dx(1−Z_v)·κ_v` and `dΞ^v_T/dx(1−Z_v)`.
pub fn derivative_quotients(model: &NaturalModel, coarse: &[usize], v: usize, h: f64) -> Result<QuotientSample> {
    let (path, iv) = refined_path(model, coarse, v, h)?;
    let coef = model.coefficient();
    let last = path.steps();
    let m_at = |u: usize| *solve_natural(coef, &path, u, 1.0 - path.z[u]).last().unwrap_or(&0.0);
    let (m_before, m_v, m_after) = (m_at(iv - 1), m_at(iv), m_at(iv + 1));
    let flow = flow_solve(coef, &path, iv, 1.0 - path.z[iv]);
    let d = flow.deriv_at(last);
    let k = kappa(coef, path.z[iv - 1], path.dmt[iv], &path.dy[iv]);
    Ok(QuotientSample {
        h,
        left: (m_v - m_before) / (path.a[iv] - path.a[iv - 1]),
        left_limit: d * k,
        right: (m_after - m_v) / (path.a[iv + 1] - path.a[iv]),
        right_limit: d,
    })
}

/// `(M^{u+h}_T − M^u_T)/(A_{u+h} − A_{u−})` at an atom `u` of `A`; tends to 0.
pub fn right_quotient_at_atom(model: &NaturalModel, coarse: &[usize], u: usize, h: f64) -> Result<f64> {
    let (path, iu) = refined_path(model, coarse, u, h)?;
    let coef = model.coefficient();
    let m_at = |s: usize| *solve_natural(coef, &path, s, 1.0 - path.z[s]).last().unwrap_or(&0.0);
    // `A_{u−}` is the value before the (shortened) step that carries the atom.
    Ok((m_at(iu + 1) - m_at(iu)) / (path.a[iu + 1] - path.a[iu - 1]))
}

/// `|central difference − dΞ/dx|` at the horizon for each step in `hs`.
pub fn flow_fd_errors(model: &NaturalModel, path: &DrivingPath, u: usize, x: f64, hs: &[f64]) -> Vec<f64> {
    let coef = model.coefficient();
    let n = path.steps();
    let d = flow_solve(coef, path, u, x).deriv_at(n);
    hs.iter()
        .map(|&h| {
            let up = flow_solve(coef, path, u, x + h).at(n);
            let dn = flow_solve(coef, path, u, x - h).at(n);
            ((up - dn) / (2.0 * h) - d).abs()
        })
        .collect()
}

/// Masses `M^{u_i}_t − M^{u_{i−1}}_t` over the u-grid `0, s, 2s, …` up to `t`
/// (the first cell is `[0, 0]` with mass `M^0_t`). Returns `(end index, mass)`.
pub fn cell_masses(family: &MartingaleFamily, t: usize, stride: usize) -> Vec<(usize, f64)> {
    let mut out = vec![(0, family.get(0, t))];
    let mut prev = 0;
    let mut u = stride;
    while u <= t {
        out.push((u, family.get(u, t) - family.get(prev, t)));
        prev = u;
        u += stride;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::fixtures::default_spec;
    use crate::solver::build_family;

    #[test]
    fn jump_identity_holds_on_paths() {
        let model = NaturalModel::new(&default_spec()).unwrap();
        for s in 0..10usize {
            let path = model.simulate(|k, _| (k * 3 + s) % 3);
            let fam = build_family(model.coefficient(), &path);
            assert!(jump_identity_residual(&model, &path, &fam, 5) < 1e-14);
        }
    }

    #[test]
    fn refinement_preserves_coarse_structure() {
        let model = NaturalModel::new(&default_spec()).unwrap();
        let coarse = [0, 1, 2, 0, 1, 0, 2, 1, 0, 1];
        let (path, iv) = refined_path(&model, &coarse, 3, 0.01).unwrap();
        assert_eq!(path.steps(), 12);
        assert_eq!(iv, 4);
        assert!((path.times[iv] - 0.3).abs() < 1e-15);
        assert_eq!(path.branch[iv], coarse[2]);
        // The hazard jump stays on the coarse step ending at t*.
        let jump_step = 7;
        assert!((path.times[jump_step] - 0.5).abs() < 1e-15);
        assert!(path.delta_a(jump_step) > path.z[jump_step - 1] * (1.0 - libm::exp(-0.2)));
    }

    #[test]
    fn quotients_approach_their_limits() {
        let model = NaturalModel::new(&default_spec()).unwrap();
        let coarse = [0, 1, 2, 0, 1, 0, 2, 1, 0, 1];
        let dt = model.grid().dt();
        let res: Vec<QuotientSample> = (1..=5)
            .map(|l| derivative_quotients(&model, &coarse, 3, dt / (1u32 << l) as f64).unwrap())
            .collect();
        assert!(res[4].left_residual() < res[0].left_residual());
        assert!(res[4].right_residual() < res[0].right_residual());
        let atom: Vec<f64> = (1..=5)
            .map(|l| right_quotient_at_atom(&model, &coarse, 5, dt / (1u32 << l) as f64).unwrap().abs())
            .collect();
        assert!(atom.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn nested_cells_partition_the_mass() {
        let model = NaturalModel::new(&default_spec()).unwrap();
        let path = model.simulate(|k, _| k % 3);
        let fam = build_family(model.coefficient(), &path);
        for stride in [1, 2, 5] {
            let total: f64 = cell_masses(&fam, 10, stride).iter().map(|c| c.1).sum();
            assert!((total - fam.get(10, 10)).abs() < 1e-15);
        }
    }
}
