//! Subcommand implementations. Each one maps a config onto library calls
//! and returns result tables, a JSON summary and the expectation checks.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use reduite::envelope::{anchored_envelope, fvp_diagnostic, tail_curve, LevelMap};
use reduite::geometry::{Domain, GridField, Point};
use reduite::kernels::{assemble, diagonal_is_singular, fractional_constant, OperatorSpec};
use reduite::reconstruct::{local_energy, nonlocal_energy};
use reduite::solve::{integral_solution, integral_solution_at, Solution};
use reduite::stochastic::{
    class_d_diagnostic, maximal_inequality_check, reducing_expectation, Start,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Expect, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Reduite,
    Tail,
    /// Functional chosen from the operator.
    Reconstruct,
    ReconstructLocal,
    ReconstructNonlocal,
    McClassD,
    McReducing,
    McMaximal,
    Verify,
    Constants,
}

impl Command {
    pub const ALL: [Command; 11] = [
        Command::Solve,
        Command::Reduite,
        Command::Tail,
        Command::Reconstruct,
        Command::ReconstructLocal,
        Command::ReconstructNonlocal,
        Command::McClassD,
        Command::McReducing,
        Command::McMaximal,
        Command::Verify,
        Command::Constants,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Reduite => "reduite",
            Command::Tail => "tail",
            Command::Reconstruct => "reconstruct",
            Command::ReconstructLocal => "reconstruct local",
            Command::ReconstructNonlocal => "reconstruct nonlocal",
            Command::McClassD => "mc classd",
            Command::McReducing => "mc reducing",
            Command::McMaximal => "mc maximal",
            Command::Verify => "verify",
            Command::Constants => "constants",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(
            self,
            Command::McClassD | Command::McReducing | Command::McMaximal
        )
    }

    /// Whether a config written for `other` may be run as `self`.
    pub fn accepts(self, other: Command) -> bool {
        self == other
            || (self == Command::Reconstruct
                && matches!(
                    other,
                    Command::ReconstructLocal | Command::ReconstructNonlocal
                ))
            || (other == Command::Reconstruct
                && matches!(
                    self,
                    Command::ReconstructLocal | Command::ReconstructNonlocal
                ))
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Command> {
        let norm = s.split_whitespace().collect::<Vec<_>>().join(" ");
        Command::ALL
            .into_iter()
            .find(|c| c.name() == norm)
            .ok_or_else(|| CliError::Config {
                path: "command".into(),
                message: format!("unknown command `{s}`"),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub results: Value,
    pub checks: Vec<Check>,
    pub verdict: Option<String>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

struct Checks<'a> {
    expect: Option<&'a Expect>,
    list: Vec<Check>,
}

impl<'a> Checks<'a> {
    fn new(cfg: &'a ExperimentConfig, cmd: Command, allowed: &[&str]) -> CliResult<Self> {
        if let Some(e) = &cfg.expect {
            for f in e.set_fields() {
                if f != "max_seconds" && !allowed.contains(&f) {
                    return Err(CliError::Config {
                        path: format!("expect.{f}"),
                        message: format!("not checked by `{cmd}`"),
                    });
                }
            }
        }
        Ok(Checks {
            expect: cfg.expect.as_ref(),
            list: Vec::new(),
        })
    }

    fn add(&mut self, name: &str, pass: bool, detail: String) {
        if !pass {
            warn!("check `{name}` failed: {detail}");
        }
        self.list.push(Check {
            name: name.into(),
            pass,
            detail,
        });
    }

    fn verdict(&mut self, got: Option<&str>) {
        if let Some(want) = self.expect.and_then(|e| e.verdict.clone()) {
            let got = got.unwrap_or("none");
            self.add(
                "verdict",
                got == want,
                format!("got {got}, expected {want}"),
            );
        }
    }

    /// Tolerance checks of `value` against `target`.
    fn close(&mut self, what: &str, value: f64, target: f64) {
        let Some(e) = self.expect else { return };
        let err = (value - target).abs();
        if let Some(t) = e.rel_tol {
            let rel = err / target.abs();
            self.add(
                &format!("rel_tol {what}"),
                rel <= t,
                format!("|{value:.6e} - {target:.6e}| / |target| = {rel:.3e} (limit {t:e})"),
            );
        }
        if let Some(t) = e.abs_tol {
            self.add(
                &format!("abs_tol {what}"),
                err <= t,
                format!("|{value:.6e} - {target:.6e}| = {err:.3e} (limit {t:e})"),
            );
        }
    }

    fn target_or(&self, computed: f64) -> f64 {
        self.expect.and_then(|e| e.target).unwrap_or(computed)
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn coord_columns(dim: usize) -> Vec<&'static str> {
    ["x0", "x1", "x2"][..dim].to_vec()
}

fn point_cells(p: &Point) -> Vec<Cell> {
    p.coords().iter().map(|&c| Cell::Num(c)).collect()
}

fn fmt_point(p: &Point) -> String {
    let c: Vec<String> = p.coords().iter().map(|v| v.to_string()).collect();
    format!("({})", c.join(", "))
}

fn field_table(u: &GridField, extra: Option<(&str, &GridField)>) -> Table {
    let grid = u.grid();
    let mut cols = coord_columns(grid.dim());
    cols.push("u");
    if let Some((name, _)) = extra {
        cols.push(name);
    }
    let mut t = Table::new("field", &cols).note(format!("nodal values at h = {}", grid.h()));
    for i in 0..grid.len() {
        let mut row = point_cells(&grid.point(i));
        row.push(u.values()[i].into());
        if let Some((_, f)) = extra {
            row.push(f.values()[i].into());
        }
        t.push(row);
    }
    t
}

/// Setting up a grid solution shared by several commands.
struct Setup {
    dom: Domain,
    op: OperatorSpec,
    dop: reduite::DiscreteOperator,
    sol: Solution,
}

fn setup(cfg: &ExperimentConfig, cmd: Command, h: f64) -> CliResult<Setup> {
    let name = cmd.name();
    let dom = cfg.domain(name)?;
    let op = cfg.operator(name)?;
    let mu = cfg.measure(name)?;
    let grid = cfg.build_grid(&dom, h)?;
    info!("{name}: {} nodes at h = {h}", grid.len());
    let dop = assemble(&op, &grid)?;
    let sol = integral_solution(&dop, &mu, cfg.method())?;
    Ok(Setup { dom, op, dop, sol })
}

pub fn compute(cmd: Command, cfg: &ExperimentConfig, seed: Option<u64>) -> CliResult<Outcome> {
    match cmd {
        Command::Solve => solve(cfg),
        Command::Reduite => reduite_cmd(cfg),
        Command::Tail => tail(cfg),
        Command::Reconstruct | Command::ReconstructLocal | Command::ReconstructNonlocal => {
            reconstruct(cfg, cmd)
        }
        Command::McReducing => mc_reducing(cfg, need_seed(cfg, cmd, seed)?),
        Command::McClassD => mc_classd(cfg, need_seed(cfg, cmd, seed)?),
        Command::McMaximal => mc_maximal(cfg, need_seed(cfg, cmd, seed)?),
        Command::Constants => constants(cfg),
        Command::Verify => Err(CliError::Unsupported(
            "`verify` runs through the verification suite".into(),
        )),
    }
}

fn need_seed(cfg: &ExperimentConfig, cmd: Command, seed: Option<u64>) -> CliResult<u64> {
    match seed {
        Some(s) => Ok(s),
        None => cfg.seed(cmd.name()),
    }
}

fn solve(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let cmd = Command::Solve;
    let mut checks = Checks::new(cfg, cmd, &["max_error", "min_order"])?;
    let dom = cfg.domain(cmd.name())?;
    let op = cfg.operator(cmd.name())?;
    let mu = cfg.measure(cmd.name())?;
    let hs = cfg.spacings(cmd.name())?;
    if cfg.probes.is_empty() {
        return Err(CliError::Config {
            path: "probes".into(),
            message: "`solve` needs at least one probe point".into(),
        });
    }
    for (i, p) in cfg.probes.iter().enumerate() {
        if !dom.contains(p).map_err(|e| CliError::Config {
            path: format!("probes[{i}]"),
            message: e.to_string(),
        })? {
            return Err(CliError::Config {
                path: format!("probes[{i}]"),
                message: "probe lies outside the domain".into(),
            });
        }
    }
    let exact = integral_solution_at(&op, &dom, &mu, &cfg.probes)?;
    let mut table = Table::new("solve", &["h", "probe", "value", "exact", "error", "order"])
        .note("grid solution interpolated at each probe against the closed form");
    for (i, p) in cfg.probes.iter().enumerate() {
        table = table.note(format!("probe {i} = {}", fmt_point(p)));
    }
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); cfg.probes.len()];
    for (k, &h) in hs.iter().enumerate() {
        let grid = cfg.build_grid(&dom, h)?;
        let dop = assemble(&op, &grid)?;
        let u = integral_solution(&dop, &mu, cfg.method())?.field();
        for (i, p) in cfg.probes.iter().enumerate() {
            let v = u.interpolate(p);
            let e = (v - exact[i]).abs();
            let order = if k > 0 {
                (errors[i][k - 1] / e).ln() / (hs[k - 1] / h).ln()
            } else {
                f64::NAN
            };
            errors[i].push(e);
            table.push(vec![
                h.into(),
                i.into(),
                v.into(),
                exact[i].into(),
                e.into(),
                order.into(),
            ]);
        }
    }
    let mut per_probe = Vec::new();
    for (i, errs) in errors.iter().enumerate() {
        // rounding of the solve grows like the condition number (diam/h)²
        let scale = exact[i].abs().max(1.0);
        let at_rounding = errs
            .iter()
            .zip(&hs)
            .all(|(e, h)| *e <= 16.0 * f64::EPSILON * (dom.diameter() / h).powi(2) * scale);
        let orders: Vec<f64> = errs
            .windows(2)
            .zip(hs.windows(2))
            .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
            .collect();
        let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
        let finest = *errs.last().unwrap();
        if let Some(max) = checks.expect.and_then(|e| e.max_error) {
            checks.add(
                &format!("max_error probe {i}"),
                finest <= max,
                format!(
                    "error {finest:.3e} at h = {} (limit {max:e})",
                    hs.last().unwrap()
                ),
            );
        }
        if let Some(want) = checks.expect.and_then(|e| e.min_order) {
            if hs.len() < 2 {
                checks.add(
                    &format!("min_order probe {i}"),
                    false,
                    "needs at least two spacings".into(),
                );
            } else if at_rounding {
                checks.add(
                    &format!("min_order probe {i}"),
                    true,
                    format!("errors {} are rounding of the solve (below 16 eps (diam/h)^2); the discrete values are exact and no order is measurable", sci(errs)),
                );
            } else {
                checks.add(
                    &format!("min_order probe {i}"),
                    min_order >= want,
                    format!("observed orders {} (need ≥ {want})", sci(&orders)),
                );
            }
        }
        per_probe.push(json!({
            "probe": p_json(&cfg.probes[i]),
            "exact": exact[i],
            "errors": errs,
            "orders": orders,
            "exact_to_rounding": at_rounding,
        }));
    }
    Ok(Outcome {
        tables: vec![table],
        results: json!({ "hs": hs, "probes": per_probe }),
        checks: checks.list,
        verdict: None,
    })
}

fn p_json(p: &Point) -> Value {
    json!(p.coords())
}

fn reduite_cmd(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let cmd = Command::Reduite;
    let mut checks = Checks::new(
        cfg,
        cmd,
        &[
            "verdict",
            "target",
            "rel_tol",
            "abs_tol",
            "monotone_refinement",
            "max_residual",
        ],
    )?;
    let hs = cfg.spacings(cmd.name())?;
    let mut table = Table::new(
        "reduite",
        &["h", "nodes", "d1_norm", "l1_norm", "residual", "iterations"],
    )
    .note("d1_norm = integral of the smallest excessive majorant of |u| against rho");
    let mut d1s = Vec::new();
    let mut residuals = Vec::new();
    let mut last = None;
    for &h in &hs {
        let s = setup(cfg, cmd, h)?;
        let rho = cfg.weight.field(s.dop.grid())?;
        let env = anchored_envelope(&s.dop, &s.sol, LevelMap::Abs, &cfg.reduite)?;
        let d1 = env.envelope.integrate_against(&rho);
        let u = s.sol.field();
        let l1 = u.map(f64::abs).integrate_against(&rho);
        let (res, it) = env
            .reduite
            .as_ref()
            .map_or((0.0, 0), |r| (r.residual, r.iterations));
        table.push(vec![
            h.into(),
            s.dop.len().into(),
            d1.into(),
            l1.into(),
            res.into(),
            it.into(),
        ]);
        d1s.push(d1);
        residuals.push(res);
        last = Some((s, rho, env.envelope));
    }
    let (s, rho, envelope) = last.expect("at least one spacing");
    let mut tables = vec![table];
    let mut results = json!({ "hs": hs, "d1_norms": d1s, "residuals": residuals });
    let mut verdict = None;
    if let Some(f) = &cfg.fvp {
        let rep = fvp_diagnostic(&s.dop, &s.sol, &rho, f.phi, &f.caps, &cfg.reduite)?;
        let mut t = Table::new("fvp", &["cap", "value", "normalized"])
            .note(format!("phi = {}, capped at k", rep.phi.name()));
        for ((k, v), nv) in rep.caps.iter().zip(&rep.values).zip(&rep.normalized) {
            t.push(vec![(*k).into(), (*v).into(), (*nv).into()]);
        }
        tables.push(t);
        verdict = Some(
            if rep.divergent {
                "fvp-divergent"
            } else {
                "fvp-bounded"
            }
            .to_string(),
        );
        results["fvp"] = serde_json::to_value(&rep)?;
    }
    if cfg.output.fields {
        tables.push(field_table(&s.sol.field(), Some(("envelope", &envelope))));
    }
    let finest = *d1s.last().unwrap();
    if let Some(target) = checks.expect.and_then(|e| e.target) {
        checks.close("d1_norm", finest, target);
        if checks.expect.is_some_and(|e| e.monotone_refinement) {
            let errs: Vec<f64> = d1s.iter().map(|d| (d - target).abs()).collect();
            let ok = errs.windows(2).all(|w| w[1] <= w[0]);
            checks.add("monotone_refinement", ok, format!("errors {}", sci(&errs)));
        }
    } else if checks
        .expect
        .is_some_and(|e| e.rel_tol.is_some() || e.abs_tol.is_some() || e.monotone_refinement)
    {
        return Err(CliError::Config {
            path: "expect.target".into(),
            message: "tolerances for `reduite` need an explicit target".into(),
        });
    }
    if let Some(max) = checks.expect.and_then(|e| e.max_residual) {
        let worst = residuals.iter().fold(0.0f64, |m, r| m.max(*r));
        checks.add(
            "max_residual",
            worst <= max,
            format!("complementarity residual {worst:.3e} (limit {max:e})"),
        );
    }
    checks.verdict(verdict.as_deref());
    Ok(Outcome {
        tables,
        results,
        checks: checks.list,
        verdict,
    })
}

fn tail(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let cmd = Command::Tail;
    let mut checks = Checks::new(
        cfg,
        cmd,
        &[
            "verdict",
            "target",
            "rel_tol",
            "abs_tol",
            "exact_zero",
            "monotone_refinement",
            "nonincreasing",
            "gap_shrink",
            "max_residual",
        ],
    )?;
    let hs = cfg.spacings(cmd.name())?;
    let levels = cfg.levels(cmd.name())?;
    let mut table = Table::new("tail", &["h", "n", "t_n", "resolvable", "target", "error"])
        .note("t_n = integral of the smallest excessive majorant of (|u| - n)^+ against rho")
        .note("target = integral of R^D rho against the concentrated part of |mu|; error = |t_n - target|");
    let mut curves = Vec::new();
    let mut last = None;
    for &h in &hs {
        let s = setup(cfg, cmd, h)?;
        let rho = cfg.weight.field(s.dop.grid())?;
        let tc = tail_curve(&s.dop, &s.sol, &rho, &levels, &cfg.reduite)?;
        let target = checks.target_or(tc.target);
        for ((n, v), r) in tc.levels.iter().zip(&tc.values).zip(&tc.resolvable) {
            table.push(vec![
                h.into(),
                (*n).into(),
                (*v).into(),
                (*r).into(),
                target.into(),
                (v - target).abs().into(),
            ]);
        }
        curves.push(tc);
        last = Some(s);
    }
    let fin = curves.last().unwrap();
    let target = checks.target_or(fin.target);
    let verdict = serde_json::to_value(fin.verdict)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    let e = checks.expect.cloned().unwrap_or_default();
    if e.exact_zero {
        let nonzero: Vec<(f64, f64, f64)> = hs
            .iter()
            .zip(&curves)
            .flat_map(|(h, c)| {
                c.levels
                    .iter()
                    .zip(&c.values)
                    .map(move |(n, v)| (*h, *n, *v))
            })
            .filter(|(_, _, v)| *v != 0.0)
            .collect();
        checks.add(
            "exact_zero",
            nonzero.is_empty(),
            if nonzero.is_empty() {
                "every T_n is exactly 0".into()
            } else {
                format!("nonzero (h, n, T_n): {nonzero:?}")
            },
        );
    }
    for (j, n) in fin.levels.iter().enumerate() {
        if !fin.resolvable[j] {
            if e.rel_tol.is_some() || e.abs_tol.is_some() {
                checks.add(
                    &format!("n = {n}"),
                    false,
                    format!("level not resolvable at h = {}", hs.last().unwrap()),
                );
            }
            continue;
        }
        checks.close(&format!("n = {n}"), fin.values[j], target);
        if e.monotone_refinement {
            let errs: Vec<f64> = curves
                .iter()
                .filter(|c| c.resolvable[j])
                .map(|c| (c.values[j] - target).abs())
                .collect();
            let ok = errs.len() == curves.len() && errs.windows(2).all(|w| w[1] <= w[0]);
            checks.add(
                &format!("monotone_refinement n = {n}"),
                ok,
                format!("errors {}", sci(&errs)),
            );
        }
    }
    let vals: Vec<f64> = fin
        .values
        .iter()
        .zip(&fin.resolvable)
        .filter(|(_, r)| **r)
        .map(|(v, _)| *v)
        .collect();
    if e.nonincreasing {
        let ok = vals.windows(2).all(|w| w[1] <= w[0]);
        checks.add("nonincreasing", ok, format!("T_n {}", sci(&vals)));
    }
    if let Some(frac) = e.gap_shrink {
        let g0 = (vals.first().copied().unwrap_or(f64::NAN) - target).abs();
        let g1 = (vals.last().copied().unwrap_or(f64::NAN) - target).abs();
        checks.add(
            "gap_shrink",
            g1 <= (1.0 - frac) * g0,
            format!(
                "gap {g0:.4e} -> {g1:.4e}, shrink {:.1}% (need ≥ {:.0}%)",
                100.0 * (1.0 - g1 / g0),
                100.0 * frac
            ),
        );
    }
    checks.verdict(Some(&verdict));
    let mut tables = vec![table];
    if cfg.output.fields {
        tables.push(field_table(&last.unwrap().sol.field(), None));
    }
    Ok(Outcome {
        tables,
        results: json!({
            "hs": hs,
            "curves": curves,
            "limit": fin.limit,
            "target": target,
        }),
        checks: checks.list,
        verdict: Some(verdict),
    })
}

fn reconstruct(cfg: &ExperimentConfig, cmd: Command) -> CliResult<Outcome> {
    let mut checks = Checks::new(
        cfg,
        cmd,
        &["target", "rel_tol", "abs_tol", "max_trace_change"],
    )?;
    let h = cfg.single_spacing(cmd.name())?;
    let levels = cfg.levels(cmd.name())?;
    let s = setup(cfg, cmd, h)?;
    let local = s.op.is_local();
    match (cmd, local) {
        (Command::ReconstructLocal, false) => {
            return Err(CliError::Unsupported(format!(
                "the local functional needs a local operator, got {}",
                s.op.name()
            )))
        }
        (Command::ReconstructNonlocal, true) => {
            return Err(CliError::Unsupported(format!(
                "the nonlocal functional needs the fractional Laplacian, got {}",
                s.op.name()
            )))
        }
        _ => {}
    }
    let eta = &cfg.reconstruct.eta;
    let computed = s
        .sol
        .decomposition
        .concentrated_positive_mass(|x| eta.eval(x));
    let target = checks.target_or(computed);
    let mut table = Table::new(
        "reconstruct",
        &["n", "value", "target", "error", "resolvable", "refinements", "trace_change"],
    )
    .note(if local {
        "value = (1/2n) integral over {n <= u <= 2n} of eta a grad u . grad u"
    } else {
        "value = jump and killing energy of u restricted to the window {n <= u <= 2n}, divided by 2n"
    })
    .note("target = integral of eta against the positive concentrated part of mu");
    let mut rows = Vec::new();
    for &n in &levels {
        let r = if local {
            local_energy(&s.sol, eta, n).map(|e| (e.value, Vec::new()))
        } else {
            nonlocal_energy(&s.sol, eta, n, &cfg.reconstruct.nonlocal).map(|e| (e.value, e.trace))
        };
        match r {
            Ok((v, trace)) => {
                let change = match trace.len() {
                    0 | 1 => f64::NAN,
                    k => (trace[k - 1] - trace[k - 2]).abs() / trace[k - 1].abs(),
                };
                rows.push((n, v, true, trace, change));
            }
            Err(reduite::Error::Unresolvable { level, detail }) => {
                warn!("level n = {level} skipped: {detail}");
                rows.push((n, f64::NAN, false, Vec::new(), f64::NAN));
            }
            Err(e) => return Err(e.into()),
        }
    }
    for (n, v, ok, trace, change) in &rows {
        table.push(vec![
            (*n).into(),
            (*v).into(),
            target.into(),
            (v - target).abs().into(),
            (*ok).into(),
            trace.len().into(),
            (*change).into(),
        ]);
    }
    let best = rows.iter().rev().find(|r| r.2);
    let mut prefactor = f64::NAN;
    match best {
        Some((n, v, _, _, change)) => {
            prefactor = v / target;
            checks.close(&format!("n = {n}"), *v, target);
            if let Some(max) = checks.expect.and_then(|e| e.max_trace_change) {
                let ok = if local { true } else { *change < max };
                checks.add(
                    "max_trace_change",
                    ok,
                    format!(
                        "last successive relative change {change:.3e} at n = {n} (limit {max:e})"
                    ),
                );
            }
        }
        None => checks.add("resolvable", false, "no level could be resolved".into()),
    }
    let flagged = target > 0.0 && (prefactor - 1.0).abs() > 0.1;
    if flagged {
        warn!("fitted prefactor {prefactor:.4} differs from 1 by more than 10%");
    }
    Ok(Outcome {
        tables: vec![table],
        results: json!({
            "functional": if local { "local" } else { "nonlocal" },
            "target": target,
            "largest_resolvable_level": best.map(|r| r.0),
            "prefactor": prefactor,
            "prefactor_flagged": flagged,
            "traces": rows.iter().map(|r| json!({ "n": r.0, "trace": r.3 })).collect::<Vec<_>>(),
        }),
        checks: checks.list,
        verdict: None,
    })
}

fn mc_start(cfg: &ExperimentConfig, dom: &Domain) -> Start {
    match cfg.mc.as_ref().and_then(|m| m.start) {
        Some(p) => Start::Point(p),
        None => cfg.weight.start(dom),
    }
}

fn mc_reducing(cfg: &ExperimentConfig, seed: u64) -> CliResult<Outcome> {
    let cmd = Command::McReducing;
    let mut checks = Checks::new(cfg, cmd, &["target", "within_stderr", "max_stderr"])?;
    let mc = cfg.mc(cmd.name())?;
    let start = mc.start.ok_or_else(|| CliError::Config {
        path: "mc.start".into(),
        message: "`mc reducing` needs a start point".into(),
    })?;
    if mc.k.is_empty() {
        return Err(CliError::Config {
            path: "mc.k".into(),
            message: "`mc reducing` needs at least one level k".into(),
        });
    }
    let s = setup(cfg, cmd, cfg.single_spacing(cmd.name())?)?;
    let mut table = Table::new("reducing", &["k", "n", "mean", "stderr", "reference", "z", "early_fraction"])
        .note(format!(
            "E[(u(X_T) - n)^+] with T the exit from {{u < k}} or the domain, X_0 = {}, N = {}, seed = {seed}",
            fmt_point(&start),
            mc.samples
        ))
        .note("reference = (k - n)^+ u(x) / k");
    let mut out = Vec::new();
    for &k in &mc.k {
        let r = reducing_expectation(&s.sol, k, mc.n, &start, mc.samples, seed)?;
        let reference = checks
            .expect
            .and_then(|e| e.target)
            .or(r.exact)
            .unwrap_or(f64::NAN);
        let z = (r.estimate.mean - reference) / r.estimate.stderr;
        table.push(vec![
            k.into(),
            mc.n.into(),
            r.estimate.mean.into(),
            r.estimate.stderr.into(),
            reference.into(),
            z.into(),
            r.early_fraction.into(),
        ]);
        if let Some(w) = checks.expect.and_then(|e| e.within_stderr) {
            checks.add(
                &format!("within_stderr k = {k}"),
                z.abs() <= w,
                format!(
                    "{:.6} ± {:.6} vs {reference:.6} ({z:+.2} stderr)",
                    r.estimate.mean, r.estimate.stderr
                ),
            );
        }
        if let Some(max) = checks.expect.and_then(|e| e.max_stderr) {
            checks.add(
                &format!("max_stderr k = {k}"),
                r.estimate.stderr < max,
                format!("stderr {:.3e} (limit {max:e})", r.estimate.stderr),
            );
        }
        out.push(json!({ "k": k, "estimate": r.estimate, "reference": reference, "early_fraction": r.early_fraction }));
    }
    Ok(Outcome {
        tables: vec![table],
        results: json!({ "seed": seed, "estimates": out }),
        checks: checks.list,
        verdict: None,
    })
}

fn sup_abs(s: &Setup) -> CliResult<f64> {
    let mut m = s.sol.field().max_abs();
    if let Some((c, _)) = s.dom.as_ball() {
        m = m.max(s.sol.eval(&c)?.abs());
    }
    Ok(m)
}

fn mc_classd(cfg: &ExperimentConfig, seed: u64) -> CliResult<Outcome> {
    let cmd = Command::McClassD;
    let mut checks = Checks::new(
        cfg,
        cmd,
        &["verdict", "target", "within_stderr", "exact_zero_above_sup"],
    )?;
    let mc = cfg.mc(cmd.name())?;
    let family = mc.family.clone().ok_or_else(|| CliError::Config {
        path: "mc.family".into(),
        message: "`mc classd` needs a stopping family".into(),
    })?;
    let levels = cfg.levels(cmd.name())?;
    let s = setup(cfg, cmd, cfg.single_spacing(cmd.name())?)?;
    let start = mc_start(cfg, &s.dom);
    let d = class_d_diagnostic(
        &s.sol, &family, &levels, &start, mc.samples, seed, mc.target,
    )?;
    let verdict = serde_json::to_value(d.verdict)?
        .as_str()
        .unwrap_or_default()
        .to_string();
    let mut table = Table::new("classd", &["n", "estimate", "stderr"]).note(format!(
        "sup over the stopping family of E[(|u(X_T)| - n)^+], N = {} per member, seed = {seed}",
        mc.samples
    ));
    for ((n, e), se) in d.levels.iter().zip(&d.estimates).zip(&d.stderrs) {
        table.push(vec![(*n).into(), (*e).into(), (*se).into()]);
    }
    let sup = sup_abs(&s)?;
    if checks.expect.is_some_and(|e| e.exact_zero_above_sup) {
        let above: Vec<(f64, f64)> = d
            .levels
            .iter()
            .zip(&d.estimates)
            .filter(|(n, _)| **n >= sup)
            .map(|(n, e)| (*n, *e))
            .collect();
        let ok = !above.is_empty() && above.iter().all(|(_, e)| *e == 0.0);
        checks.add(
            "exact_zero_above_sup",
            ok,
            if above.is_empty() {
                format!("no level at or above sup |u| = {sup:.6}")
            } else {
                format!("sup |u| = {sup:.6}; (n, estimate) above it: {above:?}")
            },
        );
    }
    if let Some(w) = checks.expect.and_then(|e| e.within_stderr) {
        let target = checks.expect.and_then(|e| e.target).or(mc.target);
        match target {
            Some(t) => {
                let z = (d.limit - t) / d.limit_stderr;
                checks.add(
                    "within_stderr",
                    z.abs() <= w,
                    format!(
                        "plateau {:.6} ± {:.6} vs {t:.6} ({z:+.2} stderr)",
                        d.limit, d.limit_stderr
                    ),
                );
            }
            None => {
                return Err(CliError::Config {
                    path: "expect.target".into(),
                    message: "`within_stderr` needs `expect.target` or `mc.target`".into(),
                })
            }
        }
    }
    checks.verdict(Some(&verdict));
    Ok(Outcome {
        tables: vec![table],
        results: json!({ "seed": seed, "sup_abs_u": sup, "diagnostic": d }),
        checks: checks.list,
        verdict: Some(verdict),
    })
}

fn mc_maximal(cfg: &ExperimentConfig, seed: u64) -> CliResult<Outcome> {
    let cmd = Command::McMaximal;
    let mut checks = Checks::new(cfg, cmd, &["verdict"])?;
    let mc = cfg.mc(cmd.name())?;
    let s = setup(cfg, cmd, cfg.single_spacing(cmd.name())?)?;
    let rho = cfg.weight.field(s.dop.grid())?;
    let env = anchored_envelope(&s.dop, &s.sol, LevelMap::Abs, &cfg.reduite)?;
    let d1 = env.envelope.integrate_against(&rho);
    let start = mc_start(cfg, &s.dom);
    let sol = &s.sol;
    let u = |x: &Point| sol.eval(x).map_or(f64::NAN, f64::abs);
    let m = maximal_inequality_check(&s.dom, &u, d1, &start, mc.dt, mc.samples, seed)?;
    let verdict = if m.pass { "pass" } else { "fail" }.to_string();
    let mut table = Table::new(
        "maximal",
        &["mean", "stderr", "d1_norm", "bound", "margin", "pass"],
    )
    .note(format!(
        "mean = E[sup_t |u(B_t)|^(1/2)] over Brownian paths with step {}, N = {}, seed = {seed}",
        mc.dt, mc.samples
    ))
    .note("bound = 2 d1_norm^(1/2); margin = bound + 3 stderr - mean");
    table.push(vec![
        m.estimate.mean.into(),
        m.estimate.stderr.into(),
        d1.into(),
        m.bound.into(),
        m.margin.into(),
        m.pass.into(),
    ]);
    checks.verdict(Some(&verdict));
    Ok(Outcome {
        tables: vec![table],
        results: json!({ "seed": seed, "d1_norm": d1, "check": m }),
        checks: checks.list,
        verdict: Some(verdict),
    })
}

fn constants(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let checks = Checks::new(cfg, Command::Constants, &[])?;
    let mut table = Table::new("constants", &["alpha", "d", "c_alpha_d", "points_polar"])
        .note("c(alpha, d) = 2^alpha Gamma((d + alpha)/2) / (pi^(d/2) |Gamma(-alpha/2)|)")
        .note("points_polar: single points carry no diffuse mass for this operator");
    let mut rows = Vec::new();
    for (i, &a) in cfg.constants.alpha.iter().enumerate() {
        let op = OperatorSpec::fractional(a).map_err(|e| CliError::Config {
            path: format!("constants.alpha[{i}]"),
            message: e.to_string(),
        })?;
        for (j, &d) in cfg.constants.dims.iter().enumerate() {
            if !(1..=3).contains(&d) {
                return Err(CliError::Config {
                    path: format!("constants.dims[{j}]"),
                    message: "dimension must be 1, 2 or 3".into(),
                });
            }
            let c = fractional_constant(a, d);
            let polar = diagonal_is_singular(&op, d);
            table.push(vec![a.into(), d.into(), c.into(), polar.into()]);
            rows.push(json!({ "alpha": a, "d": d, "c": c, "points_polar": polar }));
        }
    }
    Ok(Outcome {
        tables: vec![table],
        results: json!({ "constants": rows }),
        checks: checks.list,
        verdict: None,
    })
}
