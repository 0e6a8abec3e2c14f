//! End-to-end gate: one line per criterion, nonzero exit if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use natural_core::calculus::{affine_solve, cumulate};
use natural_lab::rng::path_rng;
use natural_lab::{mc, polarize, regularity_suite, tree_suite, Check, RunConfig, SuiteReport};
use rand::Rng;

struct Gate {
    failed: usize,
}

impl Gate {
    fn line(&mut self, id: u32, title: &str, problems: Vec<String>, elapsed: Duration) {
        let verdict = if problems.is_empty() { "PASS" } else { "FAIL" };
        println!("[{verdict}] {id}. {title} ({:.2}s)", elapsed.as_secs_f64());
        for p in &problems {
            println!("       {p}");
        }
        if !problems.is_empty() {
            self.failed += 1;
        }
    }
}

/// Failed checks among those whose names start with any of `prefixes`;
/// a prefix matching nothing is itself a problem.
fn failed_checks(report: &SuiteReport, prefixes: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    for prefix in prefixes {
        let checks: Vec<&Check> = report.checks_with_prefix(prefix).collect();
        if checks.is_empty() {
            out.push(format!("{}: no check named {prefix}*", report.suite));
        }
        out.extend(checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {c}", report.suite)));
    }
    out
}

fn within(limit: Duration, elapsed: Duration) -> Vec<String> {
    if elapsed < limit {
        vec![]
    } else {
        vec![format!("took {:.2}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64())]
    }
}

fn affine_identity() -> (Vec<String>, Duration) {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for instance in 0..1000 {
        let mut rng = path_rng(2024, instance);
        let dw: Vec<f64> = (0..1000).map(|_| rng.random_range(-0.03..0.03)).collect();
        let dv: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..1e-3)).collect();
        let a = rng.random_range(0.0..1.0);
        let (w, v) = (cumulate(0.0, &dw), cumulate(0.0, &dv));
        let explicit = affine_solve(0, a, &w, &v).expect("increments are admissible");
        let mut x = a;
        for k in 1..=1000 {
            x += (x + dv[k - 1]) * dw[k - 1] + dv[k - 1];
            worst = worst.max((explicit[k] - x).abs());
        }
    }
    let elapsed = start.elapsed();
    let mut problems = within(Duration::from_secs(5), elapsed);
    if worst > 1e-12 {
        problems.push(format!("max error {worst:e} > 1e-12"));
    }
    (problems, elapsed)
}

fn run_binary_twice(cfg_dir: &Path) -> Vec<String> {
    let run = |dir: &Path| {
        Command::new(env!("CARGO_BIN_EXE_natural-lab"))
            .arg("verify-mc")
            .arg("--out")
            .arg(dir)
            .output()
            .expect("binary runs")
    };
    let (a, b) = (cfg_dir.join("a"), cfg_dir.join("b"));
    let (ra, rb) = (run(&a), run(&b));
    let mut problems = Vec::new();
    if ra.stdout != rb.stdout {
        problems.push("stdout differs".into());
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .map(|d| d.filter_map(|e| e.ok()).map(|e| e.file_name()).collect())
        .unwrap_or_default();
    names.sort();
    if names.is_empty() {
        problems.push("no outputs written".into());
    }
    for name in names {
        if fs::read(a.join(&name)).ok() != fs::read(b.join(&name)).ok() {
            problems.push(format!("{} differs", name.to_string_lossy()));
        }
    }
    problems
}

fn main() -> ExitCode {
    // Accept and ignore libtest arguments such as `--nocapture`.
    let cfg = RunConfig::default();
    let mut gate = Gate { failed: 0 };

    let (p, t) = affine_identity();
    gate.line(1, "affine identity, 1000 instances x 1000 steps", p, t);

    let start = Instant::now();
    let tree = tree_suite::verify_tree(&cfg).expect("tree suite runs").report;
    let tree_time = start.elapsed();
    let mut p = failed_checks(&tree, &["family.", "product.", "decomposition."]);
    p.extend(within(Duration::from_secs(10), tree_time));
    gate.line(2, "tree oracle, b = 3, depth 6", p, tree_time);

    let start = Instant::now();
    let mc_out = mc::verify_mc(&cfg).expect("mc suite runs");
    let mc_time = start.elapsed();
    let mcr = &mc_out.report;
    let mut p = failed_checks(&tree, &["conditions.", "margins."]);
    p.extend(failed_checks(mcr, &["conditions.", "margins."]));
    gate.line(3, "strict pair conditions, tree and 1e5 paths", p, tree_time + mc_time);

    let mut p = failed_checks(&tree, &["atom_identity"]);
    p.extend(failed_checks(mcr, &["atom_identity"]));
    gate.line(4, "one-step atom identity, tree and paths", p, tree_time + mc_time);

    let mut p = failed_checks(&tree, &["enlargement."]);
    p.extend(failed_checks(mcr, &["enlargement."]));
    gate.line(5, "compensated increments, tree and 1e5 paths", p, tree_time + mc_time);

    let start = Instant::now();
    let reg = regularity_suite::regularity(&cfg).expect("regularity suite runs").report;
    let reg_time = start.elapsed();
    let p = failed_checks(&reg, &["jump_identity.", "quotients.", "flow_fd."]);
    gate.line(6, "jump identity, derivative quotients, flow derivative", p, reg_time);

    let mut p = failed_checks(&reg, &["continuity."]);
    p.extend(failed_checks(&tree, &["zero_mass."]));
    gate.line(7, "u-grid refinement and zero-mass cells", p, reg_time + tree_time);

    let start = Instant::now();
    let pol = polarize::polarize(&cfg).expect("polarization runs").report;
    let pol_time = start.elapsed();
    let mut p = failed_checks(&pol, &["interior_fraction.", "bounds", "monotonicity_in_u"]);
    p.extend(within(Duration::from_secs(120), pol_time));
    gate.line(8, "polarization over T in {5, 10, 20, 40}, 1e4 paths", p, pol_time);

    let start = Instant::now();
    let dir = tempfile::TempDir::new().expect("temporary directory");
    let p = run_binary_twice(dir.path());
    gate.line(9, "verify-mc outputs byte-identical across runs", p, start.elapsed());

    println!("{} of 9 criteria passed", 9 - gate.failed);
    if gate.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
