//! The full model on a scenario tree, and exhaustive checks of every identity
//! the construction promises. All expectations here are exact enumerations.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::calculus::affine_solve;
use crate::coefficient::Margins;
use crate::error::{Error, Result};
use crate::law::{step_covariance, StepLaw, DRIVERS};
use crate::measure::{
    absolute_continuity_check, compensator_increment, kappa, CompensatorStep, ContinuityReport, DefaultTime,
    StepBrackets, TestMartingale,
};
use crate::pair::ConditionReport;
use crate::path::{NaturalModel, StepFan};
use crate::solver::natural_step;
use crate::tree::ScenarioTree;

/// How `Z` is placed on the tree.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeZSource {
    /// The generator's own transition from the root value.
    Forward,
    /// Leaf values given; inner nodes are `E[Z_next | node] + drift[level]`.
    Backward { leaf_values: Vec<f64>, drift: Vec<f64> },
}

/// Model laid out on the tree: per internal node the step fan, per node `Z`,
/// `A` and the family slice `M^u` (for `u` up to the node's level).
#[derive(Debug, Clone)]
pub struct TreeModel {
    pub tree: ScenarioTree,
    pub fans: Vec<StepFan>,
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub family: Vec<Vec<f64>>,
    law: StepLaw,
}

impl TreeModel {
    pub fn build(model: &NaturalModel, depth: usize, source: &TreeZSource) -> Result<Self> {
        if depth == 0 || depth > model.grid().steps() {
            return Err(Error::config("tree.depth", "must lie between 1 and grid.steps"));
        }
        let law = model.law().clone();
        let tree = ScenarioTree::uniform(depth, law.probs())?;
        let internal = tree.level_start(depth);
        let mut z = vec![0.0; tree.node_count()];
        let mut fans = Vec::with_capacity(internal);
        match source {
            TreeZSource::Forward => {
                z[0] = model.zmodel().config().z0;
                for node in 0..internal {
                    let k = tree.level_of(node) + 1;
                    let fan = model.fan(k, z[node]);
                    for i in 0..tree.branching() {
                        z[tree.child(node, i)] = fan.z[i];
                    }
                    fans.push(fan);
                }
            }
            TreeZSource::Backward { leaf_values, drift } => {
                let leaves = tree.level(depth);
                if leaf_values.len() != leaves.len() {
                    return Err(Error::GridMismatch {
                        expected: leaves.len(),
                        got: leaf_values.len(),
                    });
                }
                if drift.len() != depth || drift.iter().any(|d| !(*d >= 0.0)) {
                    return Err(Error::config("tree.delta_profile", "need one nonnegative drift per level"));
                }
                z[leaves].copy_from_slice(leaf_values);
                for node in (0..internal).rev() {
                    z[node] = tree.one_step_mean(&z, node) + drift[tree.level_of(node)];
                    if !(z[node] > 0.0 && z[node] < 1.0) {
                        return Err(Error::Domain {
                            step: tree.level_of(node),
                            reason: "backward Z leaves (0, 1)",
                        });
                    }
                }
                let tables = model.tables_for(&law);
                for node in 0..internal {
                    let children = (0..tree.branching()).map(|i| z[tree.child(node, i)]).collect();
                    fans.push(model.fan_from_children(&law, &tables, z[node], children)?);
                }
            }
        }
        let mut a = vec![0.0; tree.node_count()];
        let mut family = vec![Vec::new(); tree.node_count()];
        family[0] = vec![1.0 - z[0]];
        let coef = model.coefficient();
        for node in 0..internal {
            let fan = &fans[node];
            for i in 0..tree.branching() {
                let c = tree.child(node, i);
                a[c] = a[node] + fan.delta_a;
                let mut slice: Vec<f64> = family[node]
                    .iter()
                    .map(|&x| natural_step(coef, fan.pred, fan.dmt[i], &fan.dy[i], x))
                    .collect();
                slice.push(1.0 - z[c]);
                family[c] = slice;
            }
        }
        let mut tm = TreeModel {
            tree,
            fans,
            z,
            a,
            family,
            law,
        };
        let m: Vec<f64> = tm.z.iter().zip(&tm.a).map(|(z, a)| z + a).collect();
        tm.tree.insert("z", tm.z.clone())?;
        tm.tree.insert("a", tm.a.clone())?;
        tm.tree.insert("m", m)?;
        Ok(tm)
    }

    pub fn depth(&self) -> usize {
        self.tree.depth()
    }

    pub fn law(&self) -> &StepLaw {
        &self.law
    }

    /// Fan of the step leading into `node` and the branch taken.
    fn incoming(&self, node: usize) -> (&StepFan, usize) {
        let p = self.tree.parent(node).expect("root has no incoming step");
        (&self.fans[p], self.tree.branch_of(node))
    }

    /// Ancestors of `node` from the root down to `node` itself.
    pub fn lineage(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut n = node;
        while let Some(p) = self.tree.parent(n) {
            out.push(p);
            n = p;
        }
        out.reverse();
        out
    }

    /// `M^u_N` for `u = 0..=N`, one row per leaf.
    pub fn terminal_cdfs(&self) -> Vec<&[f64]> {
        self.tree
            .level(self.depth())
            .map(|n| self.family[n].as_slice())
            .collect()
    }

    /// Exact Doob decomposition of the node values of `Z` against the fans' drift.
    pub fn check_decomposition(&self, tol: f64) -> Result<DecompositionReport> {
        let (m, a) = self.tree.doob_decompose_exact(&self.z, tol)?;
        let mut r = DecompositionReport {
            hy: f64::INFINITY,
            ..Default::default()
        };
        for node in 0..self.fans.len() {
            let fan = &self.fans[node];
            let dm = self.tree.one_step_mean(&m, node) - m[node];
            r.martingale = r.martingale.max(dm.abs());
            r.tilde_m = r.tilde_m.max(fan.expect(|i| fan.dmt[i]).abs());
            let c = self.tree.child(node, 0);
            r.drift_mismatch = r.drift_mismatch.max(((a[c] - a[node]) - fan.delta_a).abs());
            for i in 0..fan.branches() {
                let zc = fan.z[i];
                r.hy = r.hy.min(fan.pred).min(1.0 - zc).min(1.0 - fan.z_prev);
                r.tilde_m_identity = r
                    .tilde_m_identity
                    .max((fan.pred * (1.0 + fan.dmt[i]) - (1.0 - zc)).abs());
                let lin: f64 = (0..DRIVERS).map(|d| fan.m_coeffs[d] * fan.drivers[i][d]).sum();
                let dm = zc - fan.z_prev + fan.delta_a;
                r.martingale_coeffs = r.martingale_coeffs.max((lin - dm).abs());
            }
        }
        r.recompose = m
            .iter()
            .zip(&a)
            .zip(&self.z)
            .map(|((m, a), z)| (m - a - z).abs())
            .fold(0.0, f64::max);
        // 1 − Z along every root-to-leaf path solves the affine equation driven by (m̃, A).
        for leaf in self.tree.level(self.depth()) {
            let line = self.lineage(leaf);
            let mut w = vec![0.0; line.len()];
            let mut av = vec![0.0; line.len()];
            for k in 1..line.len() {
                let (fan, i) = self.incoming(line[k]);
                w[k] = w[k - 1] + fan.dmt[i];
                av[k] = self.a[line[k]];
            }
            let x = affine_solve(0, 1.0 - self.z[0], &w, &av)?;
            for k in 0..line.len() {
                r.affine = r.affine.max((x[k] - (1.0 - self.z[line[k]])).abs());
            }
        }
        Ok(r)
    }

    /// Family axioms at every node, including the martingale property in both
    /// one-step and terminal-conditioning forms.
    pub fn check_family(&self) -> Result<TreeFamilyReport> {
        let mut r = TreeFamilyReport::default();
        let n = self.depth();
        for node in 0..self.tree.node_count() {
            let k = self.tree.level_of(node);
            let slice = &self.family[node];
            r.start = r.start.max((slice[k] - (1.0 - self.z[node])).abs());
            for u in 0..=k {
                r.below_zero = r.below_zero.max(-slice[u]);
                r.above_bound = r.above_bound.max(slice[u] - (1.0 - self.z[node]));
                if u < k {
                    r.monotonicity = r.monotonicity.max(slice[u] - slice[u + 1]);
                }
                let reg = (u..=k).map(|v| slice[v].max(0.0)).fold(1.0 - self.z[node], f64::min);
                r.regularization = r.regularization.max((reg - slice[u]).abs());
            }
            if k < n {
                for u in 0..=k {
                    let mean: f64 = (0..self.tree.branching())
                        .map(|i| self.tree.transition(node)[i] * self.family[self.tree.child(node, i)][u])
                        .sum();
                    r.martingale = r.martingale.max((mean - slice[u]).abs());
                }
            }
        }
        let leaves: Vec<usize> = self.tree.level(n).collect();
        for u in 0..=n {
            let terminal: Vec<f64> = leaves.iter().map(|&l| self.family[l][u]).collect();
            for t in u..=n {
                let ce = self.tree.conditional_expectation(&terminal, t)?;
                for (idx, node) in self.tree.level(t).enumerate() {
                    r.terminal_martingale = r.terminal_martingale.max((ce[idx] - self.family[node][u]).abs());
                }
            }
        }
        Ok(r)
    }

    /// Pair conditions at every internal node, every branch, every solution
    /// value and every ordered pair of solution values, plus a dense-grid
    /// recheck of the admissibility margins of each realized jump.
    pub fn check_pair(&self, model: &NaturalModel) -> (ConditionReport, f64) {
        let coef = model.coefficient();
        let mut report = ConditionReport::default();
        let mut min_margin = f64::INFINITY;
        for (node, fan) in self.fans.iter().enumerate() {
            let slice = &self.family[node];
            for i in 0..fan.branches() {
                let m: Margins = coef.jump_set_margin(fan.dmt[i], fan.pred, &fan.dy[i]);
                min_margin = min_margin.min(m.min());
                report.record_slice(coef, fan.pred, fan.dmt[i], &fan.dy[i], slice);
            }
        }
        (report, min_margin)
    }

    /// `max |(M^k_k − M^{k−1}_k) − κ_k ΔA_k|` over non-root nodes.
    pub fn atom_residual(&self, model: &NaturalModel) -> f64 {
        let mut worst = 0.0f64;
        for node in 1..self.tree.node_count() {
            let (fan, i) = self.incoming(node);
            let k = self.tree.level_of(node);
            let atom = self.family[node][k] - self.family[node][k - 1];
            let kap = kappa(model.coefficient(), fan.z_prev, fan.dmt[i], &fan.dy[i]);
            worst = worst.max((atom - kap * fan.delta_a).abs());
        }
        worst
    }

    /// Joint weights of (leaf, cell): cells `0..=N` are grid times, cell `N+1` is beyond the horizon.
    pub fn product_measure(&self) -> Result<ProductMeasure> {
        let n = self.depth();
        let probs = self.tree.node_probs();
        let mut weights = Vec::with_capacity(self.tree.level_len(n));
        for leaf in self.tree.level(n) {
            let cdf = &self.family[leaf];
            let mut row = Vec::with_capacity(n + 2);
            for u in 0..=n {
                let prev = if u == 0 { 0.0 } else { cdf[u - 1] };
                let mass = cdf[u] - prev;
                if mass < -1e-12 {
                    return Err(Error::InvalidFamily(alloc::format!(
                        "negative mass {mass:e} in cell {u} at leaf {leaf}"
                    )));
                }
                row.push(probs[leaf] * mass);
            }
            row.push(probs[leaf] * self.z[leaf]);
            weights.push(row);
        }
        Ok(ProductMeasure { weights })
    }

    /// Checks the product measure against `P` and the family.
    pub fn check_product_measure(&self) -> Result<ProductMeasureReport> {
        let n = self.depth();
        let pm = self.product_measure()?;
        let probs = self.tree.node_probs();
        let first_leaf = self.tree.level_start(n);
        let mut r = ProductMeasureReport {
            min_weight: f64::INFINITY,
            ..Default::default()
        };
        let mut total = 0.0;
        for (idx, row) in pm.weights.iter().enumerate() {
            let leaf = first_leaf + idx;
            let s: f64 = row.iter().sum();
            total += s;
            r.marginal = r.marginal.max((s - probs[leaf]).abs());
            r.min_weight = r.min_weight.min(row.iter().cloned().fold(f64::INFINITY, f64::min));
            r.survival = r.survival.max((row[n + 1] / probs[leaf] - self.z[leaf]).abs());
        }
        r.total = (total - 1.0).abs();
        for t in 0..=n {
            for node in self.tree.level(t) {
                let leaves = self.tree.leaves_below(node);
                for u in 0..=t {
                    let mut num = 0.0;
                    for leaf in leaves.clone() {
                        num += pm.weights[leaf - first_leaf][..=u].iter().sum::<f64>();
                    }
                    let q = num / probs[node];
                    r.conditional_cdf = r.conditional_cdf.max((q - self.family[node][u]).abs());
                }
            }
        }
        Ok(r)
    }

    /// Conditional means of compensated increments given every node and every
    /// default cell, computed by enumeration of the product measure.
    pub fn check_enlargement(
        &self,
        model: &NaturalModel,
        x: &TestMartingale,
        atom_tol: f64,
    ) -> Result<EnlargementTreeReport> {
        let n = self.depth();
        let coef = model.coefficient();
        let pm = self.product_measure()?;
        let probs = self.tree.node_probs();
        let first_leaf = self.tree.level_start(n);
        let mut r = EnlargementTreeReport::default();
        for k in 1..=n {
            for node in self.tree.level(k - 1) {
                let fan = &self.fans[node];
                let xc = x.coeffs(&fan.m_coeffs);
                let brackets = StepBrackets::new(&self.law, &fan.m_coeffs, &fan.y_coeffs, &xc);
                // Brackets in closed form must agree with enumeration over the branches.
                let dx: Vec<f64> = (0..fan.branches()).map(|i| x.increment(&fan.m_coeffs, &fan.drivers[i])).collect();
                let mx = fan.expect(|i| dx[i] * (fan.z[i] - fan.z_prev + fan.delta_a));
                r.bracket = r.bracket.max((mx - brackets.mx).abs());
                for j in 0..brackets.yx.len() {
                    let yx = fan.expect(|i| dx[i] * fan.dy[i][j]);
                    r.bracket = r.bracket.max((yx - brackets.yx[j]).abs());
                    let direct = step_covariance(&fan.y_coeffs[j], &xc, &self.law);
                    r.bracket = r.bracket.max((direct - brackets.yx[j]).abs());
                }
                let step = CompensatorStep {
                    z_prev: fan.z_prev,
                    delta_a: fan.delta_a,
                    pred: fan.pred,
                    brackets: &brackets,
                    slice_prev: &self.family[node],
                };
                // Classes: τ = v for v < k, and τ ≥ k (including beyond the horizon).
                let classes: Vec<DefaultTime> = (0..k).map(DefaultTime::Grid).chain([DefaultTime::Grid(k)]).collect();
                for &class in &classes {
                    let dc = compensator_increment(coef, &step, k, class, atom_tol);
                    let (mut num, mut den) = (0.0, 0.0);
                    for leaf in self.tree.leaves_below(node) {
                        let row = &pm.weights[leaf - first_leaf];
                        let mass = match class {
                            DefaultTime::Grid(v) if v < k => row[v],
                            _ => row[k..].iter().sum(),
                        };
                        let child = self.lineage(leaf)[k];
                        let i = self.tree.branch_of(child);
                        num += mass * (dx[i] - dc);
                        den += mass;
                    }
                    let (num, den) = (num / probs[node], den / probs[node]);
                    r.cells += 1;
                    if den > 1e-12 {
                        r.conditional_mean = r.conditional_mean.max((num / den).abs());
                    } else {
                        r.negligible_cells += 1;
                        r.conditional_mean = r.conditional_mean.max(num.abs());
                    }
                }
            }
        }
        Ok(r)
    }

    /// Jump identity at grid index `v`: `M^v_t − M^{v−1}_t` against the flow from
    /// `v` evaluated at `1 − Z_v` and `1 − Z_v − κ_v ΔA_v`.
    pub fn jump_identity_residual(&self, model: &NaturalModel, v: usize) -> f64 {
        let coef = model.coefficient();
        let mut worst = 0.0f64;
        if v == 0 || v > self.depth() {
            return worst;
        }
        for t in v..=self.depth() {
            for node in self.tree.level(t) {
                let line = self.lineage(node);
                let (fan, i) = self.incoming(line[v]);
                let top = 1.0 - self.z[line[v]];
                let bottom = top - kappa(coef, fan.z_prev, fan.dmt[i], &fan.dy[i]) * fan.delta_a;
                let (mut hi, mut lo) = (top, bottom);
                for &c in &line[v + 1..] {
                    let (f, b) = self.incoming(c);
                    hi = natural_step(coef, f.pred, f.dmt[b], &f.dy[b], hi);
                    lo = natural_step(coef, f.pred, f.dmt[b], &f.dy[b], lo);
                }
                let lhs = self.family[node][v] - self.family[node][v - 1];
                worst = worst.max((lhs - (hi - lo)).abs());
            }
        }
        worst
    }

    /// Ratio report of `d_uM^u_t` against `dA` at every node.
    pub fn continuity(&self) -> ContinuityReport {
        let mut r = ContinuityReport::default();
        for node in 1..self.tree.node_count() {
            let line = self.lineage(node);
            let a: Vec<f64> = line.iter().map(|&n| self.a[n]).collect();
            r.merge(&absolute_continuity_check(&self.family[node], &a));
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub martingale: f64,
    pub tilde_m: f64,
    pub drift_mismatch: f64,
    pub recompose: f64,
    pub tilde_m_identity: f64,
    pub martingale_coeffs: f64,
    pub affine: f64,
    /// Smallest of `ᵖ(1−Z)`, `1 − Z_{k−1}`, `1 − Z_k` over the tree.
    pub hy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TreeFamilyReport {
    pub start: f64,
    pub below_zero: f64,
    pub above_bound: f64,
    pub monotonicity: f64,
    pub martingale: f64,
    pub terminal_martingale: f64,
    pub regularization: f64,
}

impl TreeFamilyReport {
    pub fn worst(&self) -> f64 {
        [
            self.start,
            self.below_zero,
            self.above_bound,
            self.monotonicity,
            self.martingale,
            self.terminal_martingale,
            self.regularization,
        ]
        .iter()
        .cloned()
        .fold(0.0, f64::max)
    }
}

/// Joint weights `w[leaf][cell]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductMeasure {
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProductMeasureReport {
    pub total: f64,
    pub min_weight: f64,
    pub marginal: f64,
    pub survival: f64,
    pub conditional_cdf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnlargementTreeReport {
    pub cells: usize,
    pub negligible_cells: usize,
    pub conditional_mean: f64,
    pub bracket: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::fixtures::default_spec;

    fn tree_model(spec: &crate::path::ModelSpec, depth: usize) -> (NaturalModel, TreeModel) {
        let model = NaturalModel::new(spec).unwrap();
        let tm = TreeModel::build(&model, depth, &TreeZSource::Forward).unwrap();
        (model, tm)
    }

    #[test]
    fn forward_tree_passes_exact_checks() {
        let (model, tm) = tree_model(&default_spec(), 5);
        let d = tm.check_decomposition(1e-13).unwrap();
        assert!(d.martingale < 1e-15 && d.tilde_m < 1e-15 && d.affine < 1e-14, "{d:?}");
        let f = tm.check_family().unwrap();
        assert!(f.worst() < 1e-12, "{f:?}");
        let p = tm.check_product_measure().unwrap();
        assert!(p.total < 1e-12 && p.conditional_cdf < 1e-12 && p.min_weight >= 0.0, "{p:?}");
        let (c, margin) = tm.check_pair(&model);
        assert!(c.strict_ok() && margin > 0.0, "{c:?}");
        assert!(tm.atom_residual(&model) < 1e-14);
        let x = TestMartingale::Linear {
            name: "jump".into(),
            coeffs: [0.0, 1.0, 0.0],
        };
        let e = tm.check_enlargement(&model, &x, 1e-12).unwrap();
        assert!(e.conditional_mean < 1e-12 && e.bracket < 1e-15, "{e:?}");
        assert!(tm.jump_identity_residual(&model, 5) < 1e-14);
    }

    #[test]
    fn backward_tree_matches_its_drift() {
        let spec = default_spec();
        let model = NaturalModel::new(&spec).unwrap();
        let depth = 4;
        let leaves: Vec<f64> = (0..81).map(|i| 0.2 + 0.5 * ((i * 37 % 81) as f64 / 81.0)).collect();
        let drift = vec![0.01, 0.0, 0.02, 0.005];
        let tm = TreeModel::build(
            &model,
            depth,
            &TreeZSource::Backward {
                leaf_values: leaves,
                drift: drift.clone(),
            },
        )
        .unwrap();
        let d = tm.check_decomposition(0.0).unwrap();
        assert!(d.drift_mismatch < 1e-15 && d.martingale_coeffs < 1e-12, "{d:?}");
        for node in tm.tree.level(2) {
            assert!((tm.a[node] - 0.01).abs() < 1e-15);
        }
        assert!(tm.check_family().unwrap().worst() < 1e-12);
        // Zero drift at level 1 means no default mass in cell 2.
        assert_eq!(tm.family[tm.tree.level_start(2)][2] - tm.family[tm.tree.level_start(2)][1], 0.0);
    }

    #[test]
    fn violated_monotonicity_is_reported() {
        let (_, mut tm) = tree_model(&default_spec(), 3);
        let leaf = tm.tree.level_start(3);
        tm.family[leaf].swap(1, 2);
        assert!(tm.check_family().unwrap().monotonicity > 0.0);
    }
}
