//! Local behaviour of `u ↦ M^u_T`: the jump identity at the hazard jump,
//! one-sided derivative quotients under local refinement, finite-difference
//! checks of the flow derivative, and cell masses on nested u-grids.

use natural_core::oracle::{TreeModel, TreeZSource};
use natural_core::path::NaturalModel;
use natural_core::regularity::{
    cell_masses, derivative_quotients, flow_fd_errors, jump_identity_residual, right_quotient_at_atom,
};
use natural_core::solver::build_family;
use serde::Serialize;

use crate::config::RunConfig;
use crate::mc::{build_model, run_batches, simulate_path, Merge};
use crate::report::{Check, SuiteReport};
use crate::{LabError, Result};

/// Below this size a finite-difference error is rounding noise, not truncation.
pub const FD_NOISE_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuotientRow {
    pub path: u64,
    pub level: u32,
    pub h: f64,
    pub left: f64,
    pub left_limit: f64,
    pub right: f64,
    pub right_limit: f64,
    pub atom_right: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdRow {
    pub path: u64,
    pub h: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRow {
    pub path: u64,
    pub variant: &'static str,
    pub stride: usize,
    pub max_jump: f64,
    pub atom_cell_mass: Option<f64>,
}

pub struct RegularityOutput {
    pub report: SuiteReport,
    pub quotients: Vec<QuotientRow>,
    pub fd: Vec<FdRow>,
    pub cells: Vec<CellRow>,
}

fn config_error(field: &str, message: impl Into<String>) -> LabError {
    LabError::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// Number of consecutive pairs in `xs` that strictly decrease.
pub fn decreasing_steps(xs: &[f64]) -> usize {
    xs.windows(2).filter(|w| w[1] < w[0]).count()
}

/// Empirical orders `log(e_i / e_{i+1}) / log(h_i / h_{i+1})`; pairs whose
/// finer error sits at the rounding floor count as converged.
pub fn observed_orders(hs: &[f64], errs: &[f64]) -> Vec<f64> {
    hs.windows(2)
        .zip(errs.windows(2))
        .map(|(h, e)| {
            if e[1] <= FD_NOISE_FLOOR {
                f64::INFINITY
            } else {
                (e[0] / e[1]).ln() / (h[0] / h[1]).ln()
            }
        })
        .collect()
}

struct Max(f64);

impl Merge for Max {
    fn merge(&mut self, o: Self) {
        self.0 = self.0.max(o.0);
    }
}

pub fn regularity(cfg: &RunConfig) -> Result<RegularityOutput> {
    let model = build_model(cfg)?;
    let grid = *model.grid();
    let n = grid.steps();
    let rc = &cfg.regularity;
    let tol = &cfg.tolerances;
    let seed = cfg.mc.seed;
    let mut r = SuiteReport::new("regularity", seed, cfg.hash());
    let v = grid
        .index_of(rc.v_time, 1e-9)
        .filter(|&v| v > 0 && v < n)
        .ok_or_else(|| config_error("regularity.v_time", "must be an interior grid time"))?;
    let jump = model.zmodel().jump_index();
    if jump == Some(v) {
        return Err(config_error("regularity.v_time", "must not be the hazard jump time"));
    }

    // Jump identity at the hazard jump, pathwise and on the tree.
    if let Some(j) = jump {
        let worst = run_batches(rc.identity_paths, cfg.mc.batch, || Max(0.0), |acc, p| {
            let (path, _) = simulate_path(&model, seed, p);
            let fam = build_family(model.coefficient(), &path);
            acc.0 = acc.0.max(jump_identity_residual(&model, &path, &fam, j));
            Ok(())
        })?;
        r.push(
            Check::at_most("jump_identity.paths", worst.0, tol.identity)
                .with_detail(format!("{} paths", rc.identity_paths)),
        );
        if j <= cfg.tree.depth {
            let tm = TreeModel::build(&model, cfg.tree.depth, &TreeZSource::Forward)?;
            r.push(Check::at_most("jump_identity.tree", tm.jump_identity_residual(&model, j), tol.identity));
        }
    } else {
        r.note("jump_identity.skipped", 1.0);
    }

    // Derivative quotients at a point where A is continuous.
    let mut quotients = Vec::new();
    let mut left_dec = usize::MAX;
    let mut right_dec = usize::MAX;
    let mut atom_dec = usize::MAX;
    let mut worst_final = 0.0f64;
    for p in 0..rc.paths as u64 {
        let (path, _) = simulate_path(&model, seed, p);
        let coarse = &path.branch[1..];
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut atom = Vec::new();
        for level in 1..=rc.levels {
            let h = grid.dt() / f64::from(1u32 << level);
            let q = derivative_quotients(&model, coarse, v, h)?;
            let a = match jump {
                Some(j) if j < n => Some(right_quotient_at_atom(&model, coarse, j, h)?),
                _ => None,
            };
            left.push(q.left_residual());
            right.push(q.right_residual());
            if let Some(a) = a {
                atom.push(a.abs());
            }
            quotients.push(QuotientRow {
                path: p,
                level,
                h,
                left: q.left,
                left_limit: q.left_limit,
                right: q.right,
                right_limit: q.right_limit,
                atom_right: a,
            });
        }
        left_dec = left_dec.min(decreasing_steps(&left));
        right_dec = right_dec.min(decreasing_steps(&right));
        if !atom.is_empty() {
            atom_dec = atom_dec.min(decreasing_steps(&atom));
        }
        worst_final = worst_final.max(left[left.len() - 1]).max(right[right.len() - 1]);
    }
    let halvings = (rc.levels - 1) as usize;
    let need = halvings.saturating_sub(1) as f64;
    r.push(
        Check::at_least("quotients.left.decreasing_refinements", left_dec as f64, need)
            .with_detail(format!("of {halvings}, worst path")),
    );
    r.push(
        Check::at_least("quotients.right.decreasing_refinements", right_dec as f64, need)
            .with_detail(format!("of {halvings}, worst path")),
    );
    r.note("quotients.final_residual", worst_final);
    if atom_dec != usize::MAX {
        r.push(
            Check::at_least("quotients.atom_right.decreasing_refinements", atom_dec as f64, need)
                .with_detail(format!("of {halvings}, worst path")),
        );
    }

    // Flow derivative against central differences.
    let u = grid
        .index_of(rc.fd_start, 1e-9)
        .filter(|&u| u < n)
        .ok_or_else(|| config_error("regularity.fd_start", "must be a grid time before the horizon"))?;
    let mut fd = Vec::new();
    let mut min_order = f64::INFINITY;
    for p in 0..rc.paths as u64 {
        let (path, _) = simulate_path(&model, seed, p);
        let x = 1.0 - path.z[u];
        let errs = flow_fd_errors(&model, &path, u, x, &rc.fd_steps);
        for o in observed_orders(&rc.fd_steps, &errs) {
            min_order = min_order.min(o);
        }
        for (&h, &e) in rc.fd_steps.iter().zip(&errs) {
            fd.push(FdRow { path: p, h, error: e });
        }
    }
    r.push(Check::at_least("flow_fd.order", min_order, 1.5).with_detail("second order expected"));

    let cells = refinement_sweep(cfg, &mut r)?;
    Ok(RegularityOutput {
        report: r,
        quotients,
        fd,
        cells,
    })
}

/// The configured model on the fine grid. Over many short steps the
/// worst-case envelope of `Z` (every step taking the extreme branch) can leave
/// `(ε, 1 − ε)` although `0 < Z < 1` still holds on every path, so only the
/// structural checks are applied.
fn fine_model(cfg: &RunConfig, lambda: f64, jump_size: f64) -> Result<NaturalModel> {
    let mut c = cfg.clone();
    c.grid.steps = cfg.regularity.fine_steps;
    c.z.lambda = lambda;
    c.z.jump_size = jump_size;
    NaturalModel::new_unchecked(&c.model_spec()).map_err(LabError::invalid_model("regularity.fine_steps"))
}

/// Largest cell mass of `u ↦ M^u_N` after the initial atom at `u = 0`.
fn max_jump(cells: &[(usize, f64)]) -> f64 {
    cells[1..].iter().map(|c| c.1.abs()).fold(0.0, f64::max)
}

/// Cell masses under u-grid refinement: with a continuous `A` the largest
/// jump shrinks with the cell width; with a flat `A` and one hazard jump the
/// only jump is the atom, whatever the grid.
fn refinement_sweep(cfg: &RunConfig, r: &mut SuiteReport) -> Result<Vec<CellRow>> {
    let rc = &cfg.regularity;
    let seed = cfg.mc.seed;
    let coarsest = rc.strides[0];
    let finest = *rc.strides.last().expect("validated non-empty");
    let mut rows = Vec::new();

    let smooth = fine_model(cfg, cfg.z.lambda, 0.0)?;
    let mut min_factor = f64::INFINITY;
    for p in 0..rc.ugrid_paths as u64 {
        let (path, _) = simulate_path(&smooth, seed, p);
        let fam = build_family(smooth.coefficient(), &path);
        let n = path.steps();
        let mut by_stride = Vec::new();
        for &s in &rc.strides {
            let m = max_jump(&cell_masses(&fam, n, s));
            if p < cfg.outputs.max_export_paths as u64 {
                rows.push(CellRow {
                    path: p,
                    variant: "continuous_hazard",
                    stride: s,
                    max_jump: m,
                    atom_cell_mass: None,
                });
            }
            by_stride.push(m);
        }
        min_factor = min_factor.min(by_stride[0] / by_stride[by_stride.len() - 1]);
    }
    r.push(
        Check::at_least("continuity.refinement_factor", min_factor, 2.0)
            .with_detail(format!("stride {coarsest} to {finest}, worst path")),
    );

    if cfg.z.jump_size > 0.0 {
        let atomic = fine_model(cfg, 0.0, cfg.z.jump_size)?;
        let j = atomic.zmodel().jump_index().expect("positive jump size");
        if rc.strides.iter().any(|s| j % s != 0) {
            return Err(config_error(
                "regularity.strides",
                "every stride must divide the fine-grid index of the hazard jump",
            ));
        }
        let mut spread = 0.0f64;
        let mut min_atom = f64::INFINITY;
        let mut atom_is_max = true;
        for p in 0..rc.ugrid_paths as u64 {
            let (path, _) = simulate_path(&atomic, seed, p);
            let fam = build_family(atomic.coefficient(), &path);
            let n = path.steps();
            let mut atoms = Vec::new();
            for &s in &rc.strides {
                let cells = cell_masses(&fam, n, s);
                let atom = cells.iter().find(|c| c.0 == j).map_or(0.0, |c| c.1);
                atom_is_max &= max_jump(&cells) <= atom;
                if p < cfg.outputs.max_export_paths as u64 {
                    rows.push(CellRow {
                        path: p,
                        variant: "hazard_jump_only",
                        stride: s,
                        max_jump: max_jump(&cells),
                        atom_cell_mass: Some(atom),
                    });
                }
                atoms.push(atom);
            }
            let hi = atoms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = atoms.iter().cloned().fold(f64::INFINITY, f64::min);
            spread = spread.max(hi - lo);
            min_atom = min_atom.min(lo);
        }
        r.push(Check::at_most("continuity.atom_stability", spread, cfg.tolerances.stability));
        r.push(Check::above("continuity.atom_persists", min_atom, 0.0));
        r.push(Check::count_zero("continuity.atom_is_largest_jump", usize::from(!atom_is_max)));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_and_counts() {
        assert_eq!(decreasing_steps(&[4.0, 3.0, 3.5, 1.0, 0.5]), 3);
        let o = observed_orders(&[1e-3, 1e-4, 1e-5], &[2e-5, 2e-7, 1e-12]);
        assert!((o[0] - 2.0).abs() < 1e-12);
        assert!(o[1].is_infinite());
    }

    #[test]
    fn default_suite_passes() {
        let mut cfg = RunConfig::default();
        cfg.regularity.identity_paths = 50;
        cfg.regularity.ugrid_paths = 20;
        let out = regularity(&cfg).unwrap();
        assert!(out.report.pass, "{}", out.report);
        assert_eq!(out.quotients.len(), 4 * 5);
    }

    #[test]
    fn refinement_point_must_avoid_the_atom() {
        let mut cfg = RunConfig::default();
        cfg.regularity.v_time = cfg.z.jump_time;
        assert_eq!(regularity(&cfg).err().unwrap().exit_code(), 2);
    }
}
