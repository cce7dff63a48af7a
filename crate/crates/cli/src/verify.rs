//! The bundled verification suite: one entry per acceptance criterion.

use std::time::Instant;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reduite::envelope::{harmonic_extension, potential_on, reduite, ReduiteOptions};
use reduite::geometry::{Domain, Grid, GridField};
use reduite::kernels::{assemble, OperatorSpec};
use reduite::reconstruct::{sigma, sigma_identity_lhs, theta_n};
use serde::Serialize;
use serde_json::json;

use crate::commands::{Check, Outcome};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::Table;
use crate::{csv_bytes_with_threads, presets, run, RunOptions, Source};

pub const TITLES: [&str; 14] = [
    "discrete Green function accuracy",
    "tail vanishes for diffuse data",
    "tail of a disk Dirac approaches the Green mass",
    "tail of mixed data sheds the diffuse part",
    "local gradient-energy reconstruction",
    "nonlocal jump-energy reconstruction",
    "sigma identity",
    "window weight theta_n",
    "Dynkin and tower identities on the grid",
    "reduite oracle on a path graph",
    "reducing-sequence expectation",
    "class-D verdicts",
    "maximal inequality",
    "determinism across runs and thread counts",
];

#[derive(Clone, Debug, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub title: &'static str,
    pub pass: bool,
    pub seconds: f64,
    pub detail: String,
}

pub fn run_criterion(id: u32, opts: &RunOptions) -> CriterionResult {
    let t0 = Instant::now();
    info!("criterion {id}: {}", TITLES[(id - 1) as usize]);
    let r = match id {
        7 => sigma_identity(),
        8 => theta_window(),
        9 => dynkin_tower(),
        10 => path_graph_oracle(),
        14 => determinism(opts),
        _ => presets_pass(id, opts),
    };
    let (pass, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult {
        id,
        title: TITLES[(id - 1) as usize],
        pass,
        seconds: t0.elapsed().as_secs_f64(),
        detail,
    }
}

pub fn run_suite(cfg: &ExperimentConfig, opts: &RunOptions) -> CliResult<Outcome> {
    let ids = &cfg.verify.criteria;
    for (i, id) in ids.iter().enumerate() {
        if !(1..=14).contains(id) {
            return Err(CliError::Config {
                path: format!("verify.criteria[{i}]"),
                message: format!("no criterion {id}; criteria are numbered 1 to 14"),
            });
        }
    }
    let mut table = Table::new("criteria", &["criterion", "title", "pass", "detail"]);
    let mut checks = Vec::new();
    let mut results = Vec::new();
    for &id in ids {
        let r = run_criterion(id, opts);
        let line = format!(
            "{} criterion {id:>2}: {} ({:.1} s)",
            if r.pass { "PASS" } else { "FAIL" },
            r.title,
            r.seconds
        );
        eprintln!("{line}");
        table.push(vec![
            (id as usize).into(),
            r.title.into(),
            r.pass.into(),
            r.detail.clone().into(),
        ]);
        checks.push(Check {
            name: format!("criterion {id}"),
            pass: r.pass,
            detail: r.detail.clone(),
        });
        results.push(r);
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(Outcome {
        tables: vec![table],
        results: json!({ "criteria": results }),
        checks,
        verdict: Some(if pass { "pass" } else { "fail" }.into()),
    })
}

fn presets_pass(id: u32, opts: &RunOptions) -> CliResult<(bool, String)> {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in presets::for_criterion(id) {
        let rep = run(None, &Source::preset(name)?, opts)?;
        pass &= rep.pass;
        let failed: Vec<String> = rep
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect();
        let verdict = rep
            .verdict
            .as_deref()
            .map(|v| format!(", verdict {v}"))
            .unwrap_or_default();
        if failed.is_empty() {
            let n = rep.checks.len();
            parts.push(format!(
                "{name}: {n} check{} pass{verdict}",
                if n == 1 { "" } else { "s" }
            ));
        } else {
            parts.push(format!("{name}: {}", failed.join("; ")));
        }
    }
    Ok((pass, parts.join(" | ")))
}

/// C¹ bump equal to 1 on [n, 2n], zero outside [n - e, 2n + e].
fn smooth_indicator(n: f64, e: f64) -> impl Fn(f64) -> f64 {
    move |a: f64| {
        let step = |t: f64| {
            let t = t.clamp(0.0, 1.0);
            t * t * (3.0 - 2.0 * t)
        };
        step((a - (n - e)) / e) * step(((2.0 * n + e) - a) / e)
    }
}

fn sigma_identity() -> CliResult<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, e) = (1.0, 0.25);
    let kinks = [n - e, n, 2.0 * n, 2.0 * n + e];
    let one = |_: f64| 1.0;
    let lin = |a: f64| a;
    let ind = smooth_indicator(n, e);
    type Case<'a> = (&'a dyn Fn(f64) -> f64, &'a [f64]);
    let fs: [Case; 3] = [(&one, &[]), (&lin, &[]), (&ind, &kinks)];
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = rng.random_range(0.0..4.0);
        let y = rng.random_range(0.0..4.0);
        for (f, k) in fs {
            let lhs = sigma_identity_lhs(f, k, x, y);
            let rhs = (x - y) * (x - y) * sigma(f, k, x, y);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok((
        worst <= 1e-8,
        format!("max |lhs - rhs| = {worst:.3e} over 100 pairs x 3 functions"),
    ))
}

fn theta_window() -> CliResult<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bad = 0usize;
    for _ in 0..1000 {
        let n = rng.random_range(0.1..10.0);
        let (x, y) = (rng.random_range(n..2.0 * n), rng.random_range(n..2.0 * n));
        bad += (theta_n(x, y, n) != 2.0 * (x - y) * (x - y)) as usize;
        let (x, y) = (rng.random_range(0.0..n), rng.random_range(0.0..n));
        bad += (theta_n(x, y, n) != 0.0) as usize;
        let (x, y) = (
            rng.random_range(2.0 * n..5.0 * n),
            rng.random_range(2.0 * n..5.0 * n),
        );
        bad += (theta_n(x, y, n) != 0.0) as usize;
    }
    Ok((
        bad == 0,
        format!("{bad} of 3000 evaluations differ from the exact window values"),
    ))
}

fn dynkin_tower() -> CliResult<(bool, String)> {
    let grid = Grid::build(&Domain::unit_ball(2), 1.0 / 32.0)?;
    let dop = assemble(&OperatorSpec::Laplacian, &grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = GridField::from_fn(&grid, |x| 1.0 + x.coords()[0] * x.coords()[1]);
    let g = GridField::from_fn(&grid, |x| (2.0 * x.coords()[0]).cos() + x.norm());
    let (mut tower, mut dynkin) = (0.0f64, 0.0f64);
    for _ in 0..5 {
        let w: Vec<bool> = (0..grid.len()).map(|_| rng.random_bool(0.8)).collect();
        let v: Vec<bool> = w.iter().map(|&in_w| in_w && rng.random_bool(0.7)).collect();
        // P_V P_W g = P_W g for V ⊂ W
        let pw = harmonic_extension(&dop, &w, &g)?;
        let pvpw = harmonic_extension(&dop, &v, &pw)?;
        for (a, b) in pvpw.values().iter().zip(pw.values()) {
            tower = tower.max((a - b).abs());
        }
        // R^W f = R^V f + P_V R^W f for f supported in V
        let fv = GridField::new(
            grid.clone(),
            f.values()
                .iter()
                .zip(&v)
                .map(|(x, &inv)| if inv { *x } else { 0.0 })
                .collect(),
        );
        let rw = potential_on(&dop, &w, &fv)?;
        let rv = potential_on(&dop, &v, &fv)?;
        let hv = harmonic_extension(&dop, &v, &rw)?;
        for i in 0..grid.len() {
            dynkin = dynkin.max((rw.values()[i] - rv.values()[i] - hv.values()[i]).abs());
        }
    }
    Ok((
        tower <= 1e-9 && dynkin <= 1e-9,
        format!(
            "{} nodes, 5 pairs: tower residual {tower:.3e}, Dynkin residual {dynkin:.3e}",
            grid.len()
        ),
    ))
}

fn path_graph_oracle() -> CliResult<(bool, String)> {
    let mut worst = 0.0f64;
    let mut worst_res = 0.0f64;
    let mut solves = 0;
    for n in [4usize, 10, 37, 64] {
        for j in [1, n / 3, n / 2, n - 1] {
            let grid = Grid::build(&Domain::interval(0.0, n as f64)?, 1.0)?;
            let dop = assemble(&OperatorSpec::Laplacian, &grid)?;
            let g = GridField::from_fn(&grid, |x| if x.x() == j as f64 { 1.0 } else { 0.0 });
            let r = reduite(&dop, &g, &ReduiteOptions::default())?;
            for k in 0..grid.len() {
                let i = grid.point(k).x();
                let exact = (i / j as f64).min((n as f64 - i) / (n - j) as f64);
                worst = worst.max((r.envelope.values()[k] - exact).abs());
            }
            worst_res = worst_res.max(r.residual);
            solves += 1;
        }
    }
    Ok((
        worst <= 1e-10 && worst_res <= 1e-10,
        format!(
            "{solves} solves: max error {worst:.3e}, max complementarity residual {worst_res:.3e}"
        ),
    ))
}

fn determinism(opts: &RunOptions) -> CliResult<(bool, String)> {
    let mut bad = Vec::new();
    for name in presets::STOCHASTIC {
        let src = Source::preset(name)?;
        let a = csv_bytes_with_threads(&src, opts.seed, 1)?;
        let b = csv_bytes_with_threads(&src, opts.seed, 3)?;
        if a != b {
            bad.push(*name);
        }
    }
    Ok((
        bad.is_empty(),
        if bad.is_empty() {
            format!(
                "{} stochastic presets: CSV identical with 1 and 3 threads",
                presets::STOCHASTIC.len()
            )
        } else {
            format!("CSV differs between thread counts for {}", bad.join(", "))
        },
    ))
}
