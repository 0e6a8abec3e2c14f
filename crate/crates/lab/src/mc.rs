//! Monte Carlo engine and the statistical suite.
//!
//! Paths are processed in fixed batches; each batch folds into its own
//! accumulator and the accumulators are merged in batch order, so results do
//! not depend on the number of worker threads.

use natural_core::law::DRIVERS;
use natural_core::measure::{
    absolute_continuity_check, compensator_increment, kappa, sample_tau, CompensatorStep, ContinuityReport,
    DefaultSample, DefaultTime, StepBrackets,
};
use natural_core::pair::ConditionReport;
use natural_core::path::{DrivingPath, NaturalModel};
use natural_core::solver::{build_family, check_family, FamilyReport, MartingaleFamily};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{Check, SuiteReport};
use crate::rng::{choose_branch, path_rng};
use crate::stats::Moments;
use crate::{LabError, Result};

pub fn build_model(cfg: &RunConfig) -> Result<NaturalModel> {
    NaturalModel::new(&cfg.model_spec()).map_err(LabError::invalid_model("model"))
}

/// Simulates path `path` of the run and draws the uniform that places the
/// random time on it.
pub fn simulate_path(model: &NaturalModel, seed: u64, path: u64) -> (DrivingPath, f64) {
    let mut rng = path_rng(seed, path);
    let p = model.simulate(|_, probs| choose_branch(&mut rng, probs));
    let u: f64 = rng.random();
    (p, u)
}

pub trait Merge {
    fn merge(&mut self, other: Self);
}

impl<T> Merge for Vec<T> {
    fn merge(&mut self, other: Self) {
        self.extend(other);
    }
}

/// Runs `work` on paths `0..paths` in batches of `batch`, merging the batch
/// accumulators in batch order.
pub fn run_batches<A, I, W>(paths: usize, batch: usize, init: I, work: W) -> Result<A>
where
    A: Merge + Send,
    I: Fn() -> A + Sync,
    W: Fn(&mut A, u64) -> Result<()> + Sync,
{
    let batches = paths.div_ceil(batch);
    let parts = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            let end = ((b + 1) * batch).min(paths);
            for p in b * batch..end {
                work(&mut acc, p as u64)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<A>>>()?;
    let mut parts = parts.into_iter();
    let mut total = parts.next().unwrap_or_else(&init);
    for p in parts {
        total.merge(p);
    }
    Ok(total)
}

/// Names of the bounded functionals of the enlarged filtration at time `k − 1`
/// that compensated increments of step `k` are tested against.
pub const FUNCTIONALS: [&str; 24] = [
    "one",
    "defaulted",
    "alive",
    "defaulted_two_steps_back",
    "just_defaulted",
    "last_diffusion_sign",
    "last_was_jump",
    "defaulted_x_last_sign",
    "alive_x_last_sign",
    "alive_x_last_jump",
    "z_prev",
    "defaulted_x_z_prev",
    "alive_x_z_prev",
    "first_half",
    "second_half_defaulted",
    "defaulted_x_cdf_at_tau",
    "defaulted_after_hazard_jump",
    "cumulative_diffusion_sign",
    "defaulted_x_cumulative_sign",
    "any_jump_so_far",
    "alive_after_hazard_jump",
    "jump_parity",
    "defaulted_at_zero",
    "defaulted_x_tau_time",
];

const NF: usize = FUNCTIONALS.len();

/// Running path summaries needed by the functionals.
#[derive(Debug, Clone, Copy, Default)]
struct History {
    diffusion_sum: f64,
    jumps: u32,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn functionals(
    k: usize,
    path: &DrivingPath,
    family: &MartingaleFamily,
    tau: DefaultTime,
    hist: &History,
    jump_index: Option<usize>,
) -> [f64; NF] {
    let n = path.steps();
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let defaulted = tau.by(k - 1);
    let alive = !defaulted;
    let (last_sign, last_jump) = if k >= 2 {
        (sign(path.drivers[k - 1][0]), ind(path.drivers[k - 1][1] > 0.0))
    } else {
        (0.0, 0.0)
    };
    let z_prev = path.z[k - 1];
    let after_jump = jump_index.is_some_and(|j| k > j);
    let cdf_at_tau = match tau {
        DefaultTime::Grid(v) if v < k => family.get(v, k - 1),
        _ => 0.0,
    };
    let tau_time = match tau {
        DefaultTime::Grid(v) if v < k => path.times[v] / path.times[n],
        _ => 0.0,
    };
    let cum = sign(hist.diffusion_sum);
    [
        1.0,
        ind(defaulted),
        ind(alive),
        ind(k >= 2 && tau.by(k - 2)),
        ind(tau == DefaultTime::Grid(k - 1)),
        last_sign,
        last_jump,
        ind(defaulted) * last_sign,
        ind(alive) * last_sign,
        ind(alive) * last_jump,
        z_prev,
        ind(defaulted) * z_prev,
        ind(alive) * z_prev,
        ind(2 * k <= n),
        ind(2 * k > n && defaulted),
        cdf_at_tau,
        ind(defaulted && jump_index.is_some_and(|j| tau.index().is_some_and(|v| v >= j))),
        cum,
        ind(defaulted) * cum,
        ind(hist.jumps > 0),
        ind(alive && after_jump),
        if hist.jumps.is_multiple_of(2) { 1.0 } else { -1.0 },
        ind(tau == DefaultTime::Grid(0)),
        tau_time,
    ]
}

#[derive(Debug, Clone, Default)]
struct StepAcc {
    dx: Moments,
    compensator: Moments,
    alive: Moments,
    defaulted: Moments,
    residual: Moments,
}

impl StepAcc {
    fn merge(&mut self, o: &StepAcc) {
        self.dx.merge(&o.dx);
        self.compensator.merge(&o.compensator);
        self.alive.merge(&o.alive);
        self.defaulted.merge(&o.defaulted);
        self.residual.merge(&o.residual);
    }
}

#[derive(Debug, Clone)]
struct XAcc {
    panel: Vec<Moments>,
    naive: Vec<Moments>,
    steps: Vec<StepAcc>,
}

#[derive(Debug, Clone)]
struct McAcc {
    family: FamilyReport,
    conditions: ConditionReport,
    ladder_margin: f64,
    dense_margin: f64,
    atom: f64,
    continuity: ContinuityReport,
    cdf: Vec<Moments>,
    survival: Moments,
    m_mean: Vec<Moments>,
    family_mean: Vec<Moments>,
    tau_counts: Vec<u64>,
    xs: Vec<XAcc>,
}

impl McAcc {
    fn new(n: usize, nx: usize) -> Self {
        McAcc {
            family: FamilyReport::default(),
            conditions: ConditionReport::default(),
            ladder_margin: f64::INFINITY,
            dense_margin: f64::INFINITY,
            atom: 0.0,
            continuity: ContinuityReport::default(),
            cdf: vec![Moments::default(); n + 1],
            survival: Moments::default(),
            m_mean: vec![Moments::default(); n],
            family_mean: vec![Moments::default(); n],
            tau_counts: vec![0; n + 2],
            xs: (0..nx)
                .map(|_| XAcc {
                    panel: vec![Moments::default(); NF],
                    naive: vec![Moments::default(); NF],
                    steps: vec![StepAcc::default(); n],
                })
                .collect(),
        }
    }
}

fn merge_all(a: &mut [Moments], b: &[Moments]) {
    a.iter_mut().zip(b).for_each(|(a, b)| a.merge(b));
}

impl Merge for McAcc {
    fn merge(&mut self, o: Self) {
        self.family.merge(&o.family);
        self.conditions.merge(&o.conditions);
        self.ladder_margin = self.ladder_margin.min(o.ladder_margin);
        self.dense_margin = self.dense_margin.min(o.dense_margin);
        self.atom = self.atom.max(o.atom);
        self.continuity.merge(&o.continuity);
        merge_all(&mut self.cdf, &o.cdf);
        self.survival.merge(&o.survival);
        merge_all(&mut self.m_mean, &o.m_mean);
        merge_all(&mut self.family_mean, &o.family_mean);
        self.tau_counts.iter_mut().zip(&o.tau_counts).for_each(|(a, b)| *a += b);
        for (a, b) in self.xs.iter_mut().zip(&o.xs) {
            merge_all(&mut a.panel, &b.panel);
            merge_all(&mut a.naive, &b.naive);
            a.steps.iter_mut().zip(&b.steps).for_each(|(a, b)| a.merge(b));
        }
    }
}

/// Per-step means of the compensator terms for one test martingale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnlargementRow {
    pub test_martingale: String,
    pub step: usize,
    pub time: f64,
    pub mean_dx: f64,
    pub mean_compensator: f64,
    pub mean_compensator_alive: f64,
    pub mean_compensator_defaulted: f64,
    pub mean_residual: f64,
    pub se_residual: f64,
}

/// Mean of `Σ_k H_{k−1}(X_k − X_{k−1} − ΔC_k)` over paths, for one functional `H`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelRow {
    pub test_martingale: String,
    pub functional: String,
    pub mean: f64,
    pub se: f64,
    pub z: f64,
    /// Same statistic without the compensator.
    pub uncompensated_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOutput {
    pub report: SuiteReport,
    pub enlargement: Vec<EnlargementRow>,
    pub panel: Vec<PanelRow>,
}

/// Sums `Σ_k H_{k−1} ξ_k` along one path, per test martingale and functional.
struct PathSums {
    compensated: Vec<[f64; NF]>,
    naive: Vec<[f64; NF]>,
}

fn one_path(cfg: &RunConfig, model: &NaturalModel, acc: &mut McAcc, p: u64) -> Result<()> {
    let coef = model.coefficient();
    let law = model.law();
    let (path, uniform) = simulate_path(model, cfg.mc.seed, p);
    let n = path.steps();
    let family = build_family(coef, &path);
    acc.family.merge(&check_family(&family, &path.z));
    let terminal = family.terminal();
    let tau = sample_tau(&terminal, uniform)?;
    acc.tau_counts[tau.index().unwrap_or(n + 1)] += 1;
    for (u, m) in terminal.iter().enumerate() {
        acc.cdf[u].push(if tau.by(u) { 1.0 } else { 0.0 } - m);
    }
    acc.survival
        .push(if tau == DefaultTime::BeyondHorizon { 1.0 } else { 0.0 } - path.z[n]);
    acc.continuity.merge(&absolute_continuity_check(&terminal, &path.a));

    let nx = cfg.test_martingales.len();
    let mut sums = PathSums {
        compensated: vec![[0.0; NF]; nx],
        naive: vec![[0.0; NF]; nx],
    };
    let jump_index = model.zmodel().jump_index();
    let mut hist = History::default();
    let mut slice = family.slice(0);
    for k in 1..=n {
        acc.m_mean[k - 1].push(path.z[k] + path.a[k] - path.z[0]);
        acc.family_mean[k - 1].push(family.get(k - 1, n) - family.get(k - 1, k - 1));
        acc.ladder_margin = acc.ladder_margin.min(path.fan_margin[k]);
        if (p as usize) < cfg.mc.margin_recheck_paths {
            let m = coef.jump_set_margin(path.dmt[k], path.pred[k], &path.dy[k]);
            acc.dense_margin = acc.dense_margin.min(m.min());
        }
        acc.conditions
            .record_slice(coef, path.pred[k], path.dmt[k], &path.dy[k], &slice);
        let atom = family.get(k, k) - family.get(k - 1, k);
        let kap = kappa(coef, path.z[k - 1], path.dmt[k], &path.dy[k]);
        acc.atom = acc.atom.max((atom - kap * path.delta_a(k)).abs());

        let h = functionals(k, &path, &family, tau, &hist, jump_index);
        let defaulted = tau.by(k - 1);
        let m_coeffs: &[f64; DRIVERS] = &path.m_coeffs[k];
        for (j, x) in cfg.test_martingales.iter().enumerate() {
            let xc = x.coeffs(m_coeffs);
            let brackets = StepBrackets::new(law, m_coeffs, &path.y_coeffs[k], &xc);
            let step = CompensatorStep {
                z_prev: path.z[k - 1],
                delta_a: path.delta_a(k),
                pred: path.pred[k],
                brackets: &brackets,
                slice_prev: &slice,
            };
            let dc = compensator_increment(coef, &step, k, tau, cfg.tolerances.atom_tol);
            let dx = x.increment(m_coeffs, &path.drivers[k]);
            let xi = dx - dc;
            let s = &mut acc.xs[j].steps[k - 1];
            s.dx.push(dx);
            s.compensator.push(dc);
            s.residual.push(xi);
            if defaulted {
                s.defaulted.push(dc);
            } else {
                s.alive.push(dc);
            }
            for f in 0..NF {
                sums.compensated[j][f] += h[f] * xi;
                sums.naive[j][f] += h[f] * dx;
            }
        }
        hist.diffusion_sum += path.drivers[k][0];
        if path.drivers[k][1] > 0.0 {
            hist.jumps += 1;
        }
        slice = family.slice(k);
    }
    for (j, xa) in acc.xs.iter_mut().enumerate() {
        for f in 0..NF {
            xa.panel[f].push(sums.compensated[j][f]);
            xa.naive[f].push(sums.naive[j][f]);
        }
    }
    Ok(())
}

/// The statistical suite: hard pathwise assertions on every path plus
/// z-tests of every quantity whose mean is known.
pub fn verify_mc(cfg: &RunConfig) -> Result<McOutput> {
    let model = build_model(cfg)?;
    let n = model.grid().steps();
    let nx = cfg.test_martingales.len();
    let acc = run_batches(
        cfg.mc.paths,
        cfg.mc.batch,
        || McAcc::new(n, nx),
        |acc, p| one_path(cfg, &model, acc, p),
    )?;
    let tol = &cfg.tolerances;
    let sigma = tol.sigma_multiplier;
    let mut r = SuiteReport::new("verify-mc", cfg.mc.seed, cfg.hash());
    r.note("paths", cfg.mc.paths as f64);

    let f = &acc.family;
    r.push(Check::at_most("family.start", f.start, tol.exact));
    r.push(Check::at_most("family.below_zero", f.below_zero, tol.exact));
    r.push(Check::at_most("family.above_bound", f.above_bound, tol.exact));
    r.push(Check::at_most("family.monotonicity", f.monotonicity, tol.exact));
    let c = &acc.conditions;
    r.push(Check::count_zero("conditions.weak_violations", c.weak_violations));
    r.push(Check::count_zero("conditions.strict_violations", c.strict_violations));
    r.push(Check::count_zero("conditions.form_disagreements", c.form_disagreements));
    r.push(Check::above("conditions.min_i", c.min_i, 0.0));
    r.push(Check::above("conditions.min_ii", c.min_ii, 0.0));
    r.push(Check::above("conditions.min_iii", c.min_iii, 0.0));
    r.note("conditions.checked", c.checked as f64);
    r.push(Check::above("margins.ladder_min", acc.ladder_margin, 0.0));
    r.push(
        Check::above("margins.dense_min", acc.dense_margin, 0.0)
            .with_detail(format!("first {} paths", cfg.mc.margin_recheck_paths.min(cfg.mc.paths))),
    );
    r.push(Check::at_most("atom_identity", acc.atom, tol.exact));
    r.note("continuity.min_ratio", acc.continuity.min_ratio);
    r.note("continuity.max_ratio", acc.continuity.max_ratio);
    r.note("continuity.zero_drift_mass", acc.continuity.zero_drift_mass);

    for (u, m) in acc.cdf.iter().enumerate() {
        r.push(Check::at_most(format!("cdf.u{u}"), m.z(), sigma));
    }
    r.push(Check::at_most("survival", acc.survival.z(), sigma));
    for (k, m) in acc.m_mean.iter().enumerate() {
        r.push(Check::at_most(format!("z_martingale_mean.k{}", k + 1), m.z(), sigma));
    }
    for (u, m) in acc.family_mean.iter().enumerate() {
        r.push(Check::at_most(format!("family_martingale.u{u}"), m.z(), sigma));
    }
    for (i, count) in acc.tau_counts.iter().enumerate() {
        let key = if i == n + 1 { "tau_frequency.beyond".to_string() } else { format!("tau_frequency.u{i}") };
        r.note(key, *count as f64 / cfg.mc.paths as f64);
    }

    let times = model.grid().points();
    let mut enlargement = Vec::new();
    let mut panel = Vec::new();
    let mut naive_max = 0.0f64;
    for (x, xa) in cfg.test_martingales.iter().zip(&acc.xs) {
        for (f, name) in FUNCTIONALS.iter().enumerate() {
            let m = &xa.panel[f];
            r.push(Check::at_most(format!("enlargement.{}.{name}", x.name()), m.z(), sigma));
            naive_max = naive_max.max(xa.naive[f].z());
            panel.push(PanelRow {
                test_martingale: x.name().into(),
                functional: (*name).into(),
                mean: m.mean,
                se: m.se(),
                z: m.z(),
                uncompensated_z: xa.naive[f].z(),
            });
        }
        for (k, s) in xa.steps.iter().enumerate() {
            enlargement.push(EnlargementRow {
                test_martingale: x.name().into(),
                step: k + 1,
                time: times[k + 1],
                mean_dx: s.dx.mean,
                mean_compensator: s.compensator.mean,
                mean_compensator_alive: s.alive.mean,
                mean_compensator_defaulted: s.defaulted.mean,
                mean_residual: s.residual.mean,
                se_residual: s.residual.se(),
            });
        }
    }
    r.push(Check::at_least("enlargement.functionals", FUNCTIONALS.len() as f64, 20.0));
    r.push(Check::at_least("enlargement.test_martingales", nx as f64, 2.0));
    // Negative control: without the compensator the drift must be visible.
    r.push(Check::above("enlargement.uncompensated_max_z", naive_max, sigma));
    Ok(McOutput {
        report: r,
        enlargement,
        panel,
    })
}

/// One row per path: the sampled random time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauRow {
    pub path: u64,
    pub tau_index: Option<usize>,
    pub tau_time: Option<f64>,
    pub uniform: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct TauAcc {
    rows: Vec<TauRow>,
    cdf: Vec<Moments>,
    survival: Moments,
}

impl Merge for TauAcc {
    fn merge(&mut self, o: Self) {
        self.rows.extend(o.rows);
        merge_all(&mut self.cdf, &o.cdf);
        self.survival.merge(&o.survival);
    }
}

pub struct TauOutput {
    pub report: SuiteReport,
    pub samples: Vec<TauRow>,
}

/// Samples the random time on every path and compares the empirical law with
/// the family.
pub fn sample_taus(cfg: &RunConfig) -> Result<TauOutput> {
    let model = build_model(cfg)?;
    let n = model.grid().steps();
    let times = model.grid().points();
    let acc = run_batches(
        cfg.mc.paths,
        cfg.mc.batch,
        || TauAcc {
            rows: Vec::new(),
            cdf: vec![Moments::default(); n + 1],
            survival: Moments::default(),
        },
        |acc, p| {
            let (path, uniform) = simulate_path(&model, cfg.mc.seed, p);
            let terminal = build_family(model.coefficient(), &path).terminal();
            let tau = sample_tau(&terminal, uniform)?;
            let sample = DefaultSample { path: p, tau, uniform };
            for (u, m) in terminal.iter().enumerate() {
                acc.cdf[u].push(if tau.by(u) { 1.0 } else { 0.0 } - m);
            }
            acc.survival
                .push(if tau == DefaultTime::BeyondHorizon { 1.0 } else { 0.0 } - path.z[n]);
            acc.rows.push(TauRow {
                path: sample.path,
                tau_index: sample.tau.index(),
                tau_time: sample.tau.index().map(|v| times[v]),
                uniform: sample.uniform,
            });
            Ok(())
        },
    )?;
    let sigma = cfg.tolerances.sigma_multiplier;
    let mut r = SuiteReport::new("sample-tau", cfg.mc.seed, cfg.hash());
    for (u, m) in acc.cdf.iter().enumerate() {
        r.push(Check::at_most(format!("cdf.u{u}"), m.z(), sigma));
    }
    r.push(Check::at_most("survival", acc.survival.z(), sigma));
    let beyond = acc.rows.iter().filter(|t| t.tau_index.is_none()).count();
    r.note("survival_frequency", beyond as f64 / cfg.mc.paths as f64);
    Ok(TauOutput {
        report: r,
        samples: acc.rows,
    })
}

/// One value `M^u_t` of the family on one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyRow {
    pub path: u64,
    pub u_index: usize,
    pub u: f64,
    pub t_index: usize,
    pub t: f64,
    pub value: f64,
}

pub struct FamilyOutput {
    pub report: SuiteReport,
    pub rows: Vec<FamilyRow>,
}

#[derive(Debug, Clone)]
struct FamilyAcc {
    rows: Vec<FamilyRow>,
    report: FamilyReport,
}

impl Merge for FamilyAcc {
    fn merge(&mut self, o: Self) {
        self.rows.extend(o.rows);
        self.report.merge(&o.report);
    }
}

/// Builds the family on every path, checks its axioms, and keeps the values
/// of the first `outputs.max_export_paths` paths.
pub fn build_families(cfg: &RunConfig) -> Result<FamilyOutput> {
    let model = build_model(cfg)?;
    let times = model.grid().points();
    let keep = cfg.outputs.max_export_paths as u64;
    let acc = run_batches(
        cfg.mc.paths,
        cfg.mc.batch,
        || FamilyAcc {
            rows: Vec::new(),
            report: FamilyReport::default(),
        },
        |acc, p| {
            let (path, _) = simulate_path(&model, cfg.mc.seed, p);
            let family = build_family(model.coefficient(), &path);
            acc.report.merge(&check_family(&family, &path.z));
            if p < keep {
                let n = path.steps();
                for u in 0..=n {
                    for t in u..=n {
                        acc.rows.push(FamilyRow {
                            path: p,
                            u_index: u,
                            u: times[u],
                            t_index: t,
                            t: times[t],
                            value: family.get(u, t),
                        });
                    }
                }
            }
            Ok(())
        },
    )?;
    let tol = cfg.tolerances.exact;
    let f = &acc.report;
    let mut r = SuiteReport::new("build-family", cfg.mc.seed, cfg.hash());
    r.push(Check::at_most("family.start", f.start, tol));
    r.push(Check::at_most("family.below_zero", f.below_zero, tol));
    r.push(Check::at_most("family.above_bound", f.above_bound, tol));
    r.push(Check::at_most("family.monotonicity", f.monotonicity, tol));
    Ok(FamilyOutput {
        report: r,
        rows: acc.rows,
    })
}
