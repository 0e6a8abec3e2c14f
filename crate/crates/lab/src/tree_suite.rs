//! The exact suite: the full model laid out on a scenario tree and every
//! identity checked by enumeration.

use natural_core::oracle::{TreeModel, TreeZSource};
use natural_core::pair::ConditionReport;
use natural_core::path::NaturalModel;
use natural_core::tree::ScenarioTree;
use rand::Rng;

use crate::config::{RunConfig, ZSourceKind};
use crate::mc::build_model;
use crate::report::{Check, SuiteReport};
use crate::rng::path_rng;
use crate::{LabError, Result};

pub struct TreeOutput {
    pub report: SuiteReport,
    pub tree: ScenarioTree,
}

/// Leaf values of `Z` for a backward-built tree, uniform on `[lo, hi]`.
fn leaf_values(cfg: &RunConfig, count: usize) -> Vec<f64> {
    let lo = 0.2f64.max(cfg.z.epsilon);
    let hi = 0.8f64.min(1.0 - cfg.z.epsilon);
    let mut rng = path_rng(cfg.tree.leaf_seed, 0);
    (0..count).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

pub fn build_tree(cfg: &RunConfig, model: &NaturalModel) -> Result<TreeModel> {
    let law = model.law();
    if let Some(b) = cfg.tree.branching {
        if b != law.branches() {
            return Err(LabError::Config {
                field: "tree.branching".into(),
                message: format!("the step law has {} branches, not {b}", law.branches()),
            });
        }
    }
    let depth = cfg.tree.depth;
    let source = match cfg.tree.z_source {
        ZSourceKind::Forward => TreeZSource::Forward,
        ZSourceKind::Backward => TreeZSource::Backward {
            leaf_values: leaf_values(cfg, law.branches().pow(depth as u32)),
            drift: cfg.tree.delta_profile.clone(),
        },
    };
    TreeModel::build(model, depth, &source).map_err(LabError::invalid_model("tree"))
}

fn push_conditions(r: &mut SuiteReport, prefix: &str, c: &ConditionReport) {
    r.push(Check::count_zero(format!("{prefix}.weak_violations"), c.weak_violations));
    r.push(Check::count_zero(format!("{prefix}.strict_violations"), c.strict_violations));
    r.push(Check::count_zero(format!("{prefix}.form_disagreements"), c.form_disagreements));
    r.push(Check::above(format!("{prefix}.min_i"), c.min_i, 0.0));
    r.push(Check::above(format!("{prefix}.min_ii"), c.min_ii, 0.0));
    r.push(Check::above(format!("{prefix}.min_iii"), c.min_iii, 0.0));
    r.note(format!("{prefix}.checked"), c.checked as f64);
}

pub fn verify_tree(cfg: &RunConfig) -> Result<TreeOutput> {
    let model = build_model(cfg)?;
    let tm = build_tree(cfg, &model)?;
    let tol = &cfg.tolerances;
    let exact = tol.exact;
    let mut r = SuiteReport::new("verify-tree", cfg.mc.seed, cfg.hash());
    r.note("nodes", tm.tree.node_count() as f64);
    r.note("branching", tm.tree.branching() as f64);
    r.note("depth", tm.depth() as f64);

    let d = tm.check_decomposition(exact)?;
    r.push(Check::at_most("decomposition.martingale", d.martingale, exact));
    r.push(Check::at_most("decomposition.recompose", d.recompose, exact));
    r.push(Check::at_most("decomposition.drift_mismatch", d.drift_mismatch, exact));
    r.push(Check::at_most("decomposition.martingale_coeffs", d.martingale_coeffs, exact));
    r.push(Check::at_most("decomposition.tilde_m_mean", d.tilde_m, exact));
    r.push(Check::at_most("decomposition.tilde_m_identity", d.tilde_m_identity, exact));
    r.push(Check::at_most("decomposition.affine_equation", d.affine, exact));
    r.push(Check::above("decomposition.hy", d.hy, 0.0));

    let f = tm.check_family()?;
    r.push(Check::at_most("family.start", f.start, exact));
    r.push(Check::at_most("family.below_zero", f.below_zero, exact));
    r.push(Check::at_most("family.above_bound", f.above_bound, exact));
    r.push(Check::at_most("family.monotonicity", f.monotonicity, exact));
    r.push(Check::at_most("family.martingale", f.martingale, exact));
    r.push(Check::at_most("family.terminal_martingale", f.terminal_martingale, exact));
    r.push(Check::at_most("family.regularization", f.regularization, exact));

    let p = tm.check_product_measure()?;
    r.push(Check::at_most("product.total", p.total, exact));
    r.push(Check::at_least("product.min_weight", p.min_weight, 0.0));
    r.push(Check::at_most("product.marginal", p.marginal, exact));
    r.push(Check::at_most("product.survival", p.survival, exact));
    r.push(Check::at_most("product.conditional_cdf", p.conditional_cdf, exact));

    let (c, margin) = tm.check_pair(&model);
    push_conditions(&mut r, "conditions", &c);
    r.push(Check::above("margins.dense_min", margin, 0.0));
    let ladder = tm.fans.iter().map(|f| f.min_margin()).fold(f64::INFINITY, f64::min);
    r.push(Check::above("margins.ladder_min", ladder, 0.0));
    r.push(Check::at_most("atom_identity", tm.atom_residual(&model), exact));

    for x in &cfg.test_martingales {
        let e = tm.check_enlargement(&model, x, tol.atom_tol)?;
        r.push(Check::at_most(
            format!("enlargement.{}.conditional_mean", x.name()),
            e.conditional_mean,
            tol.enlargement,
        ));
        r.push(Check::at_most(format!("enlargement.{}.bracket", x.name()), e.bracket, exact));
        r.note(format!("enlargement.{}.cells", x.name()), e.cells as f64);
        r.note(format!("enlargement.{}.negligible_cells", x.name()), e.negligible_cells as f64);
    }

    match model.zmodel().jump_index() {
        Some(v) if v <= tm.depth() => {
            r.push(Check::at_most("jump_identity", tm.jump_identity_residual(&model, v), tol.identity));
        }
        _ => r.note("jump_identity.skipped", 1.0),
    }
    let cont = tm.continuity();
    r.push(Check::at_most("continuity.zero_drift_mass", cont.zero_drift_mass, exact));

    zero_mass_variant(cfg, &mut r)?;
    negative_controls(&model, &tm, &mut r);
    Ok(TreeOutput {
        report: r,
        tree: tm.tree,
    })
}

/// With no continuous hazard, `A` is flat except at the hazard jump, and the
/// family must put no mass on the flat cells.
fn zero_mass_variant(cfg: &RunConfig, r: &mut SuiteReport) -> Result<()> {
    let mut variant = cfg.clone();
    variant.z.lambda = 0.0;
    let model = build_model(&variant)?;
    let tm = TreeModel::build(&model, cfg.tree.depth, &TreeZSource::Forward)?;
    let flat = tm.fans.iter().filter(|f| f.delta_a == 0.0).count();
    r.push(Check::above("zero_mass.flat_steps", flat as f64, 0.0));
    r.push(Check::at_most("zero_mass.mass", tm.continuity().zero_drift_mass, cfg.tolerances.exact));
    Ok(())
}

/// Inputs the checks must reject.
fn negative_controls(model: &NaturalModel, tm: &TreeModel, r: &mut SuiteReport) {
    // Swap the first strictly increasing pair of values at a leaf.
    let mut broken = tm.clone();
    let target = broken.tree.level(broken.depth()).find_map(|node| {
        let xs = &broken.family[node];
        (0..xs.len().saturating_sub(1)).find(|&u| xs[u] < xs[u + 1]).map(|u| (node, u))
    });
    if let Some((node, u)) = target {
        broken.family[node].swap(u, u + 1);
        let flagged = broken.check_family().map(|f| f.monotonicity).unwrap_or(0.0);
        r.push(Check::above("negative_control.monotonicity_flagged", flagged, 0.0));
    }
    // Jumps forty times the candidate size bypass the ladder.
    let coef = model.coefficient();
    let mut c = ConditionReport::default();
    for (node, fan) in tm.fans.iter().enumerate() {
        for i in 0..fan.branches() {
            let dy: Vec<f64> = model.pair().candidate(&fan.drivers[i]).iter().map(|v| 40.0 * v).collect();
            c.record_slice(coef, fan.pred, fan.dmt[i], &dy, &tm.family[node]);
        }
    }
    r.push(Check::above(
        "negative_control.oversized_jumps_flagged",
        c.strict_violations as f64,
        0.0,
    ));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tree_passes() {
        let out = verify_tree(&RunConfig::default()).unwrap();
        assert!(out.report.pass, "{}", out.report);
        assert_eq!(out.tree.node_count(), (3usize.pow(7) - 1) / 2);
    }

    #[test]
    fn backward_tree_passes() {
        let mut cfg = RunConfig::default();
        cfg.tree.z_source = ZSourceKind::Backward;
        cfg.tree.depth = 4;
        cfg.tree.delta_profile = vec![0.01, 0.0, 0.02, 0.005];
        let out = verify_tree(&cfg).unwrap();
        let failures: Vec<String> = out.report.failures().map(|c| c.to_string()).collect();
        assert!(failures.is_empty(), "{failures:#?}");
    }

    #[test]
    fn branching_mismatch_is_a_config_error() {
        let mut cfg = RunConfig::default();
        cfg.tree.branching = Some(2);
        let err = verify_tree(&cfg).err().unwrap();
        assert_eq!(err.exit_code(), 2);
    }
}
