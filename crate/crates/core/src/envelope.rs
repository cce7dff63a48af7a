//! Smallest excessive majorants (réduites) on grids, the D¹ norm built on
//! them, tail functionals and the de la Vallée–Poussin diagnostic.
//!
//! For an obstacle g ≥ 0 the discrete réduite is the least w with w ≥ g and
//! w ≥ Pw, i.e. the solution of `min(w - g, w - Pw) = 0`. It equals the sup
//! over node sets V of the harmonic extension of g from the complement of V.
//!
//! Grid potentials of concentrated atoms are finite, while their continuum
//! counterparts are not. Obstacles built from such potentials are therefore
//! split before solving: each pole a_j carries an anchor s_j G_h(·, a_j),
//! which is excessive, and only the remainder `(g - Σ s_j G_h(·, a_j))⁺`
//! goes through the obstacle solver. The anchor strength is
//! `s_j = |w_j| sup_{t ≥ T_j} Φ(t)/t` where Φ maps |u| to the obstacle and
//! T_j is the grid value of |u| at the pole, so the anchor reproduces the
//! growth of Φ(|u|) at the singularity.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridField;
use crate::kernels::DiscreteOperator;
use crate::linalg::Matrix;
use crate::solve::Solution;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduiteMethod {
    /// Projected SOR warm start followed by policy iteration.
    #[default]
    Auto,
    /// Projected SOR (lexicographic sweeps) until the update is below tol.
    ProjectedSor,
    /// Policy (Howard) iteration from the obstacle.
    PolicyIteration,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduiteOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub omega: f64,
    pub method: ReduiteMethod,
}

impl Default for ReduiteOptions {
    fn default() -> Self {
        ReduiteOptions {
            tol: 1e-10,
            max_sweeps: 1_000_000,
            omega: 1.5,
            method: ReduiteMethod::Auto,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReduiteResult {
    pub envelope: GridField,
    /// Nodes where the envelope is discretely harmonic. Contains every node
    /// with envelope > obstacle.
    pub continuation: Vec<bool>,
    pub iterations: usize,
    /// max_i |min(w - g, w - Pw)_i|
    pub residual: f64,
}

/// max_i |min(w_i - g_i, w_i - (Pw)_i)|.
pub fn complementarity_residual(dop: &DiscreteOperator, w: &[f64], g: &[f64]) -> f64 {
    let pw = dop.transition_apply(w);
    w.iter()
        .zip(g)
        .zip(&pw)
        .map(|((w, g), p)| (w - g).min(w - p).abs())
        .fold(0.0, f64::max)
}

/// Discrete réduite e_g.
pub fn reduite(
    dop: &DiscreteOperator,
    g: &GridField,
    opts: &ReduiteOptions,
) -> Result<ReduiteResult> {
    let gv = g.values();
    if gv.len() != dop.len() {
        return Err(Error::InvalidArgument(
            "obstacle does not live on the operator grid".into(),
        ));
    }
    if gv.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(
            "obstacle must be finite and nonnegative".into(),
        ));
    }
    let grid = g.grid().clone();
    if gv.iter().all(|&v| v == 0.0) {
        return Ok(ReduiteResult {
            envelope: GridField::zeros(&grid),
            continuation: vec![true; gv.len()],
            iterations: 0,
            residual: 0.0,
        });
    }
    let (w, iterations) = match opts.method {
        ReduiteMethod::ProjectedSor => {
            psor(dop, gv, gv.to_vec(), opts.omega, opts.tol, opts.max_sweeps)?
        }
        ReduiteMethod::PolicyIteration => howard(dop, gv, gv)?,
        ReduiteMethod::Auto => {
            let warm_sweeps = 25.min(opts.max_sweeps);
            let (w0, it0) = psor_budget(dop, gv, gv.to_vec(), opts.omega, opts.tol, warm_sweeps);
            let (w, it1) = howard(dop, gv, &w0)?;
            (w, it0 + it1)
        }
    };
    let residual = complementarity_residual(dop, &w, gv);
    let pw = dop.transition_apply(&w);
    let scale = w
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let harm_tol = (opts.tol * 10.0).max(1e-12 * scale);
    let continuation = w
        .iter()
        .zip(&pw)
        .map(|(w, p)| (w - p).abs() <= harm_tol)
        .collect();
    Ok(ReduiteResult {
        envelope: GridField::new(grid, w),
        continuation,
        iterations,
        residual,
    })
}

fn psor(
    dop: &DiscreteOperator,
    g: &[f64],
    w: Vec<f64>,
    omega: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<(Vec<f64>, usize)> {
    let (w, sweeps, delta) = psor_inner(dop, g, w, omega, tol, max_sweeps);
    if delta > tol {
        return Err(Error::NonConvergence {
            what: "projected SOR",
            iterations: sweeps,
            residual: delta,
        });
    }
    Ok((w, sweeps))
}

fn psor_budget(
    dop: &DiscreteOperator,
    g: &[f64],
    w: Vec<f64>,
    omega: f64,
    tol: f64,
    sweeps: usize,
) -> (Vec<f64>, usize) {
    let (w, s, _) = psor_inner(dop, g, w, omega, tol, sweeps);
    (w, s)
}

fn psor_inner(
    dop: &DiscreteOperator,
    g: &[f64],
    mut w: Vec<f64>,
    omega: f64,
    tol: f64,
    max_sweeps: usize,
) -> (Vec<f64>, usize, f64) {
    let diag = dop.diagonal();
    let mut delta = f64::INFINITY;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        delta = 0.0;
        for i in 0..w.len() {
            let mut s = 0.0;
            match dop.matrix() {
                Matrix::Sparse(m) => {
                    for (j, v) in m.row(i) {
                        if j != i {
                            s -= v * w[j];
                        }
                    }
                }
                Matrix::Dense(m) => {
                    let row = &m.a[i * m.n..(i + 1) * m.n];
                    for (j, (v, x)) in row.iter().zip(&w).enumerate() {
                        if j != i {
                            s -= v * x;
                        }
                    }
                }
            }
            let pw = s / diag[i];
            let new = (w[i] + omega * (pw - w[i])).max(g[i]);
            delta = f64::max(delta, (new - w[i]).abs());
            w[i] = new;
        }
        sweeps += 1;
        if delta <= tol {
            break;
        }
    }
    (w, sweeps, delta)
}

/// Policy iteration for min(w - g, D^{-1} A w) = 0: each step solves the
/// linear system of the current stop/continue policy exactly.
fn howard(dop: &DiscreteOperator, g: &[f64], w0: &[f64]) -> Result<(Vec<f64>, usize)> {
    const MAX_POLICY_STEPS: usize = 500;
    let n = g.len();
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = 1e-14 * scale;
    let mut stop: Vec<bool> = {
        let pw = dop.transition_apply(w0);
        (0..n).map(|i| w0[i] - g[i] <= w0[i] - pw[i]).collect()
    };
    let mut w = vec![0.0; n];
    for step in 1..=MAX_POLICY_STEPS {
        solve_policy(dop, g, &stop, &mut w)?;
        let pw = dop.transition_apply(&w);
        let mut changed = false;
        for i in 0..n {
            let vs = w[i] - g[i];
            let vc = w[i] - pw[i];
            let next = if stop[i] {
                !(vc < vs - eps)
            } else {
                vs < vc - eps
            };
            if next != stop[i] {
                stop[i] = next;
                changed = true;
            }
        }
        if !changed {
            return Ok((w, step));
        }
    }
    Err(Error::NonConvergence {
        what: "policy iteration",
        iterations: MAX_POLICY_STEPS,
        residual: complementarity_residual(dop, &w, g),
    })
}

/// w = g on stopped nodes, A w = 0 on the rest.
fn solve_policy(dop: &DiscreteOperator, g: &[f64], stop: &[bool], w: &mut [f64]) -> Result<()> {
    let cont: Vec<usize> = (0..g.len()).filter(|&i| !stop[i]).collect();
    for i in 0..g.len() {
        w[i] = if stop[i] { g[i] } else { 0.0 };
    }
    solve_dirichlet(dop, &cont, w)
}

/// Overwrite `w` on `nodes` with the solution of A_VV w_V = -A_{V,V^c} w_{V^c}.
fn solve_dirichlet(dop: &DiscreteOperator, nodes: &[usize], w: &mut [f64]) -> Result<()> {
    if nodes.is_empty() {
        return Ok(());
    }
    let mut inside = vec![false; w.len()];
    for &i in nodes {
        inside[i] = true;
    }
    let mut rhs: Vec<f64> = nodes
        .iter()
        .map(|&i| {
            let mut s = 0.0;
            dop.matrix().for_each_offdiag(i, |j, v| {
                if !inside[j] {
                    s -= v * w[j];
                }
            });
            s
        })
        .collect();
    let f = dop.factor_subset(nodes)?;
    f.solve_in_place(&mut rhs);
    for (k, &i) in nodes.iter().enumerate() {
        w[i] = rhs[k];
    }
    Ok(())
}

/// Discrete harmonic extension: the field equal to g off V and P-harmonic
/// on V (the exact discrete P_V g).
pub fn harmonic_extension(dop: &DiscreteOperator, v: &[bool], g: &GridField) -> Result<GridField> {
    if v.len() != dop.len() || g.values().len() != dop.len() {
        return Err(Error::InvalidArgument(
            "node set and field must match the grid".into(),
        ));
    }
    let nodes: Vec<usize> = (0..v.len()).filter(|&i| v[i]).collect();
    let mut w = g.values().to_vec();
    solve_dirichlet(dop, &nodes, &mut w)?;
    Ok(GridField::new(g.grid().clone(), w))
}

/// R^V f: the grid potential of the density f killed on leaving V (zero off V).
pub fn potential_on(dop: &DiscreteOperator, v: &[bool], f: &GridField) -> Result<GridField> {
    let nodes: Vec<usize> = (0..v.len()).filter(|&i| v[i]).collect();
    let mut out = vec![0.0; v.len()];
    if !nodes.is_empty() {
        let mut rhs: Vec<f64> = nodes.iter().map(|&i| f.values()[i]).collect();
        dop.factor_subset(&nodes)?.solve_in_place(&mut rhs);
        for (k, &i) in nodes.iter().enumerate() {
            out[i] = rhs[k];
        }
    }
    Ok(GridField::new(f.grid().clone(), out))
}

/// ‖u‖_{D¹ρ} = ∫ e_{|u|} ρ.
pub fn d1_norm(
    dop: &DiscreteOperator,
    u: &GridField,
    rho: &GridField,
    opts: &ReduiteOptions,
) -> Result<f64> {
    check_weight(rho)?;
    let r = reduite(dop, &u.map(f64::abs), opts)?;
    Ok(r.envelope.integrate_against(rho))
}

fn check_weight(rho: &GridField) -> Result<()> {
    if rho.values().iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("weight must be nonnegative".into()));
    }
    let mass = rho.integral();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "weight must have unit mass, has {mass}"
        )));
    }
    Ok(())
}

/// de la Vallée–Poussin test functions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Fvp {
    /// x ln(1 + x)
    XLogOnePlusX,
    /// x^{1+ε}
    Power { eps: f64 },
}

impl Fvp {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Fvp::XLogOnePlusX => x * x.ln_1p(),
            Fvp::Power { eps } => x.powf(1.0 + eps),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Fvp::XLogOnePlusX => "x*ln(1+x)".into(),
            Fvp::Power { eps } => format!("x^(1+{eps})"),
        }
    }
}

/// Map from |u| to an obstacle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LevelMap {
    /// |u|
    Abs,
    /// (|u| - n)⁺
    Tail(f64),
    /// φ(min(|u|, k))
    Capped { phi: Fvp, cap: f64 },
}

impl LevelMap {
    pub fn apply(&self, t: f64) -> f64 {
        match self {
            LevelMap::Abs => t,
            LevelMap::Tail(n) => (t - n).max(0.0),
            LevelMap::Capped { phi, cap } => phi.eval(t.min(*cap)),
        }
    }

    /// sup_{t ≥ t0} Φ(t)/t for t0 > 0.
    fn anchor_ratio(&self, t0: f64) -> f64 {
        match self {
            LevelMap::Abs | LevelMap::Tail(_) => 1.0,
            LevelMap::Capped { phi, cap } => {
                // φ(t)/t increases up to the cap and φ(k)/t decreases after it
                let t = t0.max(*cap);
                phi.eval(*cap) / t
            }
        }
    }
}

/// Pole-anchored envelope of Φ(|u|) for a grid solution.
#[derive(Clone, Debug)]
pub struct AnchoredEnvelope {
    pub envelope: GridField,
    /// s_j for each pole of the solution.
    pub anchors: Vec<f64>,
    /// (Φ(|u|) - Σ s_j G_j)⁺
    pub remainder: GridField,
    pub reduite: Option<ReduiteResult>,
}

pub fn anchored_envelope(
    dop: &DiscreteOperator,
    sol: &Solution,
    map: LevelMap,
    opts: &ReduiteOptions,
) -> Result<AnchoredEnvelope> {
    let grid = dop.grid().clone();
    let u = sol.field();
    let uv = u.values();
    let anchors: Vec<f64> = sol
        .poles
        .iter()
        .map(|p| {
            let t0 = p
                .column
                .values()
                .iter()
                .zip(uv)
                .fold((0.0f64, 0.0f64), |(best_g, t), (g, u)| {
                    if *g > best_g {
                        (*g, u.abs())
                    } else {
                        (best_g, t)
                    }
                })
                .1;
            p.atom.weight.abs() * map.anchor_ratio(t0.max(f64::MIN_POSITIVE))
        })
        .collect();
    let mut anchor = vec![0.0; grid.len()];
    for (p, s) in sol.poles.iter().zip(&anchors) {
        for (a, g) in anchor.iter_mut().zip(p.column.values()) {
            *a += s * g;
        }
    }
    let rem: Vec<f64> = uv
        .iter()
        .zip(&anchor)
        .map(|(u, a)| (map.apply(u.abs()) - a).max(0.0))
        .collect();
    let remainder = GridField::new(grid.clone(), rem);
    let (mut env, red) = if remainder.values().iter().all(|&v| v == 0.0) {
        (vec![0.0; grid.len()], None)
    } else {
        let r = reduite(dop, &remainder, opts)?;
        (r.envelope.values().to_vec(), Some(r))
    };
    for (e, a) in env.iter_mut().zip(&anchor) {
        *e += a;
    }
    Ok(AnchoredEnvelope {
        envelope: GridField::new(grid, env),
        anchors,
        remainder,
        reduite: red,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailVerdict {
    DiffuseLike,
    ConcentratedLike,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailCurve {
    pub levels: Vec<f64>,
    /// T_n, NaN for skipped levels.
    pub values: Vec<f64>,
    pub resolvable: Vec<bool>,
    pub limit: f64,
    /// ∫ R^D ρ d|μ_c| on the grid.
    pub target: f64,
    pub verdict: TailVerdict,
}

/// T_n = ∫ e_{(|u|-n)⁺} ρ for each level.
///
/// A level is skipped (with a warning) when the part of the obstacle left
/// after anchoring is supported on a single node: the superlevel set is
/// then smaller than one cell.
pub fn tail_curve(
    dop: &DiscreteOperator,
    sol: &Solution,
    rho: &GridField,
    levels: &[f64],
    opts: &ReduiteOptions,
) -> Result<TailCurve> {
    check_weight(rho)?;
    if levels.windows(2).any(|w| !(w[0] < w[1])) || levels.iter().any(|n| !(*n > 0.0)) {
        return Err(Error::InvalidArgument(
            "levels must be positive and increasing".into(),
        ));
    }
    let mut values = Vec::with_capacity(levels.len());
    let mut resolvable = Vec::with_capacity(levels.len());
    for &n in levels {
        let env = anchored_envelope(dop, sol, LevelMap::Tail(n), opts)?;
        let support = env.remainder.values().iter().filter(|&&v| v > 0.0).count();
        if support == 1 {
            warn!(
                "level n = {n} is not resolvable at h = {}: superlevel set is a single node",
                dop.grid().h()
            );
            values.push(f64::NAN);
            resolvable.push(false);
        } else {
            values.push(env.envelope.integrate_against(rho));
            resolvable.push(true);
        }
    }
    let target: f64 = sol
        .poles
        .iter()
        .map(|p| p.atom.weight.abs() * p.column.integrate_against(rho))
        .sum();
    let limit = values
        .iter()
        .zip(&resolvable)
        .rev()
        .find(|(_, &r)| r)
        .map_or(f64::NAN, |(v, _)| *v);
    let verdict = tail_verdict(limit, target);
    Ok(TailCurve {
        levels: levels.to_vec(),
        values,
        resolvable,
        limit,
        target,
        verdict,
    })
}

/// Concentrated-like iff the tail limit stays above half the predicted
/// limit (when one is predicted) or above 1e-12 otherwise.
pub fn tail_verdict(limit: f64, target: f64) -> TailVerdict {
    let threshold = if target > 0.0 { 0.5 * target } else { 1e-12 };
    if limit > threshold {
        TailVerdict::ConcentratedLike
    } else {
        TailVerdict::DiffuseLike
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FvpReport {
    pub phi: Fvp,
    pub caps: Vec<f64>,
    pub values: Vec<f64>,
    /// value_k / (φ(k)/k)
    pub normalized: Vec<f64>,
    pub divergent: bool,
}

/// ∫ e_{φ(min(|u|,k))} ρ over increasing caps k. Growth proportional to
/// φ(k)/k flags divergence (evidence against membership); a plateau is
/// evidence for it.
pub fn fvp_diagnostic(
    dop: &DiscreteOperator,
    sol: &Solution,
    rho: &GridField,
    phi: Fvp,
    caps: &[f64],
    opts: &ReduiteOptions,
) -> Result<FvpReport> {
    check_weight(rho)?;
    if caps.is_empty() || caps.windows(2).any(|w| !(w[0] < w[1])) || caps[0] <= 0.0 {
        return Err(Error::InvalidArgument(
            "caps must be positive and increasing".into(),
        ));
    }
    let values: Vec<f64> = caps
        .iter()
        .map(|&k| {
            anchored_envelope(dop, sol, LevelMap::Capped { phi, cap: k }, opts)
                .map(|e| e.envelope.integrate_against(rho))
        })
        .collect::<Result<_>>()?;
    let normalized: Vec<f64> = caps
        .iter()
        .zip(&values)
        .map(|(&k, &v)| v / (phi.eval(k) / k))
        .collect();
    let (k0, k1) = (caps[0], *caps.last().unwrap());
    let growth = (phi.eval(k1) / k1) / (phi.eval(k0) / k0);
    let (v0, v1) = (values[0], *values.last().unwrap());
    let divergent = v0 > 0.0 && growth > 1.1 && v1 / v0 >= 0.5 * growth;
    Ok(FvpReport {
        phi,
        caps: caps.to_vec(),
        values,
        normalized,
        divergent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Domain, Grid};
    use crate::kernels::{assemble, OperatorSpec};

    fn path(n_intervals: usize) -> DiscreteOperator {
        let dom = Domain::interval(0.0, n_intervals as f64).unwrap();
        let grid = Grid::build(&dom, 1.0).unwrap();
        assemble(&OperatorSpec::Laplacian, &grid).unwrap()
    }

    fn gamblers_ruin(n: usize, j: usize, method: ReduiteMethod) -> f64 {
        let dop = path(n);
        let grid = dop.grid().clone();
        // interior node k sits at lattice position k + 1
        let g = GridField::from_fn(&grid, |x| if x.x() == j as f64 { 1.0 } else { 0.0 });
        let opts = ReduiteOptions {
            method,
            ..Default::default()
        };
        let r = reduite(&dop, &g, &opts).unwrap();
        assert!(r.residual <= 1e-10);
        let mut err = 0.0f64;
        for k in 0..grid.len() {
            let i = grid.point(k).x();
            let exact = (i / j as f64).min((n as f64 - i) / (n - j) as f64);
            err = err.max((r.envelope.values()[k] - exact).abs());
        }
        err
    }

    #[test]
    fn gamblers_ruin_all_methods() {
        for method in [
            ReduiteMethod::Auto,
            ReduiteMethod::PolicyIteration,
            ReduiteMethod::ProjectedSor,
        ] {
            assert!(gamblers_ruin(20, 7, method) <= 1e-9, "{method:?}");
        }
    }

    #[test]
    fn zero_obstacle() {
        let dop = path(10);
        let r = reduite(
            &dop,
            &GridField::zeros(dop.grid()),
            &ReduiteOptions::default(),
        )
        .unwrap();
        assert!(r.envelope.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn excessive_obstacle_is_fixed() {
        let grid = Grid::build(&Domain::unit_ball(2), 1.0 / 16.0).unwrap();
        let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
        let src = grid
            .nearest_node(&crate::geometry::Point::origin(2))
            .unwrap();
        let g = dop.discrete_green(src).unwrap();
        let r = reduite(&dop, &g, &ReduiteOptions::default()).unwrap();
        let diff = r
            .envelope
            .values()
            .iter()
            .zip(g.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-12);
        for i in 0..grid.len() {
            assert_eq!(r.continuation[i], i != src, "node {i}");
        }
    }
}
