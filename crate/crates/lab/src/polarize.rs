//! Long-horizon experiment: with `Z_t = e^{−t}` and a coefficient of the form
//! `x(1 − e^{−t} − x)` driven by a symmetric coin, the values `M^u_T` drift to
//! the ends of `[0, 1 − Z_T]` as `T` grows.

use natural_core::coefficient::{CoefficientConfig, Shape};
use natural_core::law::{DriverKind, LawConfig};
use natural_core::pair::{PairConfig, YComponentConfig};
use natural_core::path::{ModelSpec, NaturalModel, StepFan};
use natural_core::solver::natural_step;
use natural_core::zmodel::ZGeneratorConfig;
use serde::Serialize;

use crate::config::{PolarizationConfig, RunConfig};
use crate::mc::{run_batches, Merge};
use crate::report::{Check, SuiteReport};
use crate::rng::{choose_branch, path_rng};
use crate::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramRow {
    pub horizon: f64,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionRow {
    pub horizon: f64,
    pub interior_fraction: f64,
    pub mean_value: f64,
}

pub struct PolarizationOutput {
    pub report: SuiteReport,
    pub fractions: Vec<FractionRow>,
    pub histogram: Vec<HistogramRow>,
}

pub fn model_spec(p: &PolarizationConfig) -> ModelSpec {
    let t_max = p.horizons.iter().cloned().fold(0.0, f64::max);
    ModelSpec {
        horizon: t_max,
        steps: (t_max / p.dt).round() as usize,
        law: LawConfig {
            jump_intensity: 0.0,
            aux_driver: false,
        },
        z: ZGeneratorConfig {
            z0: 1.0,
            lambda: 1.0,
            jump_time: 0.0,
            jump_size: 0.0,
            sigma_n: 0.0,
            jump_scale: 0.0,
            epsilon: 0.01,
        },
        coefficient: CoefficientConfig {
            components: vec![vec![Shape::Plateau {
                lo: 0.0,
                hi: 1.0,
                ramp: p.ramp,
                height: 1.0,
            }]],
            phi_width: 1.0,
            xgrid_resolution: 2048,
        },
        pair: PairConfig {
            components: vec![YComponentConfig {
                driver: DriverKind::Diffusion,
                scale: 1.0,
            }],
            ladder_depth: 10,
            min_margin: 1e-9,
        },
    }
}

struct Acc {
    /// `hist[h][bin]`
    hist: Vec<Vec<u64>>,
    interior: Vec<u64>,
    sum: Vec<f64>,
    bound_violation: f64,
    monotonicity: f64,
}

impl Merge for Acc {
    fn merge(&mut self, o: Self) {
        for (a, b) in self.hist.iter_mut().zip(&o.hist) {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
        self.interior.iter_mut().zip(&o.interior).for_each(|(a, b)| *a += b);
        self.sum.iter_mut().zip(&o.sum).for_each(|(a, b)| *a += b);
        self.bound_violation = self.bound_violation.max(o.bound_violation);
        self.monotonicity = self.monotonicity.max(o.monotonicity);
    }
}

pub fn polarize(cfg: &RunConfig) -> Result<PolarizationOutput> {
    let p = &cfg.polarization;
    let spec = model_spec(p);
    // `Z_0 = 1` sits outside any ε-envelope, so the envelope check is skipped.
    let model = NaturalModel::new_unchecked(&spec).map_err(LabError::invalid_model("polarization"))?;
    let grid = *model.grid();
    let n = grid.steps();
    let index = |t: f64, field: &str| {
        grid.index_of(t, 1e-9).ok_or_else(|| LabError::Config {
            field: field.into(),
            message: format!("{t} is not a multiple of dt"),
        })
    };
    let horizon_idx = p
        .horizons
        .iter()
        .map(|&t| index(t, "polarization.horizons"))
        .collect::<Result<Vec<_>>>()?;
    let stride = (p.u_spacing / p.dt).round() as usize;
    let u_last = index(p.u_max, "polarization.u_max")?;
    let us: Vec<usize> = (0..=u_last).step_by(stride).collect();

    // `Z` is deterministic, so every step's fan is the same on all paths.
    let mut z = vec![model.zmodel().config().z0];
    let mut fans: Vec<StepFan> = vec![];
    for k in 1..=n {
        let fan = model.fan(k, z[k - 1]);
        z.push(fan.z[0]);
        fans.push(fan);
    }
    let min_margin = fans.iter().map(StepFan::min_margin).fold(f64::INFINITY, f64::min);
    let min_rho = fans.iter().map(|f| f.rho).fold(f64::INFINITY, f64::min);
    let coef = model.coefficient();
    let bins = p.bins.max(1);
    let nh = horizon_idx.len();

    let acc = run_batches(
        p.paths,
        cfg.mc.batch,
        || Acc {
            hist: vec![vec![0; bins]; nh],
            interior: vec![0; nh],
            sum: vec![0.0; nh],
            bound_violation: 0.0,
            monotonicity: 0.0,
        },
        |acc, path| {
            let mut rng = path_rng(cfg.mc.seed, path);
            let branch: Vec<usize> = fans.iter().map(|f| choose_branch(&mut rng, &f.probs)).collect();
            let mut prev_at: Vec<f64> = vec![f64::NEG_INFINITY; nh];
            for &u in &us {
                let mut x = 1.0 - z[u];
                let mut h = horizon_idx.iter().take_while(|&&t| t < u).count();
                let mut k = u;
                loop {
                    while h < nh && horizon_idx[h] == k {
                        record(acc, h, x, 1.0 - z[k], &mut prev_at, bins, p.band);
                        h += 1;
                    }
                    if h == nh || k == n {
                        break;
                    }
                    let (f, b) = (&fans[k], branch[k]);
                    x = natural_step(coef, f.pred, f.dmt[b], &f.dy[b], x);
                    k += 1;
                }
            }
            Ok(())
        },
    )?;

    let mut r = SuiteReport::new("polarize", cfg.mc.seed, cfg.hash());
    let cells = (p.paths * us.len()) as f64;
    let mut fractions = Vec::new();
    let mut histogram = Vec::new();
    for (h, &t) in p.horizons.iter().enumerate() {
        let frac = acc.interior[h] as f64 / cells;
        r.note(format!("interior_fraction.T{t}"), frac);
        fractions.push(FractionRow {
            horizon: t,
            interior_fraction: frac,
            mean_value: acc.sum[h] / cells,
        });
        for (b, &count) in acc.hist[h].iter().enumerate() {
            histogram.push(HistogramRow {
                horizon: t,
                bin_lo: b as f64 / bins as f64,
                bin_hi: (b + 1) as f64 / bins as f64,
                count,
                fraction: count as f64 / cells,
            });
        }
    }
    let mut order: Vec<usize> = (0..nh).collect();
    order.sort_by(|&a, &b| p.horizons[a].total_cmp(&p.horizons[b]));
    let increases = order
        .windows(2)
        .filter(|w| fractions[w[1]].interior_fraction >= fractions[w[0]].interior_fraction)
        .count();
    r.push(
        Check::count_zero("interior_fraction.non_decreasing_steps", increases)
            .with_detail(format!("band [{}, {}]", p.band, 1.0 - p.band)),
    );
    r.push(Check::at_most("bounds", acc.bound_violation, cfg.tolerances.exact));
    r.push(Check::at_most("monotonicity_in_u", acc.monotonicity, cfg.tolerances.exact));
    let mass = (0..nh)
        .map(|h| ((1.0 - z[horizon_idx[h]]) + z[horizon_idx[h]] - 1.0).abs())
        .fold(0.0, f64::max);
    r.push(Check::at_most("total_mass", mass, cfg.tolerances.exact));
    r.push(Check::above("margins.min", min_margin, 0.0));
    r.note("rho.min", min_rho);
    r.note("u_points", us.len() as f64);
    Ok(PolarizationOutput {
        report: r,
        fractions,
        histogram,
    })
}

/// Adds `M^u_T = x` to horizon `h`; `prev_at[h]` holds the value for the
/// previous `u` on the same path.
fn record(acc: &mut Acc, h: usize, x: f64, bound: f64, prev_at: &mut [f64], bins: usize, band: f64) {
    acc.bound_violation = acc.bound_violation.max(-x).max(x - bound);
    acc.monotonicity = acc.monotonicity.max(prev_at[h] - x);
    prev_at[h] = x;
    if x >= band && x <= 1.0 - band {
        acc.interior[h] += 1;
    }
    acc.sum[h] += x;
    let b = ((x.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
    acc.hist[h][b] += 1;
}
