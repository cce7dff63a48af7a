//! Energy functionals that recover the positive concentrated part of μ from
//! the solution on its large-value windows {n ≤ u ≤ 2n}.
//!
//! Local operators use (1/n) ∫_{n≤u≤2n} η a∇u·∇u dx. The fractional
//! Laplacian uses
//!
//! ```text
//! (1/2n) [ ∬ η(x) θ_n(u(x), u(y)) J(dx, dy) + ∫ η(x) θ_n(u(x), 0) κ_D(dx) ]
//! ```
//!
//! with J(dx, dy) = (c(α,d)/2) |x-y|^{-d-α} dx dy and κ_D(dx) = J(dx, D^c),
//! the jump and killing measures of the Dirichlet form of -(-Δ)^{α/2}.

use std::f64::consts::PI;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, Point};
use crate::kernels::{fractional_constant, green, killing_density, CoefficientField, OperatorSpec};
use crate::measures::Density;
use crate::quadrature::{breakpoints, gl16, gl32, graded_toward};
use crate::solve::{density_potential_at, Solution};

/// S_n(z) = max(min(z, 2n), n).
pub fn s_n(z: f64, n: f64) -> f64 {
    z.min(2.0 * n).max(n)
}

/// θ_n(x, y) = 2 (S_n(x) - S_n(y)) (2x - S_n(x) - S_n(y)).
pub fn theta_n(x: f64, y: f64, n: f64) -> f64 {
    let (sx, sy) = (s_n(x, n), s_n(y, n));
    2.0 * (sx - sy) * (2.0 * x - sx - sy)
}

/// Integrate f over [lo, hi] with GL32 on panels split at `kinks`.
fn integrate_kinked(f: &dyn Fn(f64) -> f64, kinks: &[f64], lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return 0.0;
    }
    let (a, b, sign) = if lo < hi {
        (lo, hi, 1.0)
    } else {
        (hi, lo, -1.0)
    };
    sign * gl32().integrate_panels(&breakpoints(a, b, kinks.iter().copied()), f)
}

/// σ(f; x, y) = ∫₀¹∫₀¹ α f(αβ(x-y) + y) dα dβ.
///
/// `kinks` lists points where f is not smooth; the quadrature splits there
/// and is exact for piecewise polynomials of moderate degree.
pub fn sigma(f: &dyn Fn(f64) -> f64, kinks: &[f64], x: f64, y: f64) -> f64 {
    let d = x - y;
    if d == 0.0 {
        return 0.5 * f(y);
    }
    // inner integral over β: (1/(αd)) ∫_y^{y+αd} f
    let inner = |al: f64| -> f64 {
        if al == 0.0 {
            return al * f(y);
        }
        integrate_kinked(f, kinks, y, y + al * d) / d
    };
    let alpha_kinks: Vec<f64> = kinks.iter().map(|k| (k - y) / d).collect();
    gl32().integrate_panels(&breakpoints(0.0, 1.0, alpha_kinks), inner)
}

/// ∫₀^∞ [(x-a)⁺ - (y-a)⁺ - 1_{y>a}(x-y)] f(a) da for x, y ≥ 0.
pub fn sigma_identity_lhs(f: &dyn Fn(f64) -> f64, kinks: &[f64], x: f64, y: f64) -> f64 {
    let (lo, hi) = (x.min(y), x.max(y));
    // the bracket vanishes for a < min(x, y) and a > max(x, y)
    let g = |a: f64| {
        let bracket = (x - a).max(0.0) - (y - a).max(0.0) - if y > a { x - y } else { 0.0 };
        bracket * f(a)
    };
    integrate_kinked(&g, kinks, lo, hi)
}

/// Cutoff functions η.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Cutoff {
    One,
    /// 1 on |x - center| ≤ inner, 0 beyond outer, C^∞ in between.
    Smooth {
        center: Point,
        inner: f64,
        outer: f64,
    },
    #[serde(skip)]
    Custom(Arc<dyn Fn(&Point) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Cutoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cutoff::One => f.write_str("One"),
            Cutoff::Smooth {
                center,
                inner,
                outer,
            } => {
                write!(f, "Smooth({:?}, {inner}, {outer})", center.coords())
            }
            Cutoff::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Cutoff {
    pub fn eval(&self, x: &Point) -> f64 {
        match self {
            Cutoff::One => 1.0,
            Cutoff::Smooth {
                center,
                inner,
                outer,
            } => {
                let r = x.dist(center);
                if r <= *inner {
                    1.0
                } else if r >= *outer {
                    0.0
                } else {
                    let t = (r - inner) / (outer - inner);
                    let e = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
                    e(1.0 - t) / (e(1.0 - t) + e(t))
                }
            }
            Cutoff::Custom(f) => f(x),
        }
    }

    /// Points (1D coordinates) where η is not analytic.
    fn kinks_1d(&self) -> Vec<f64> {
        match self {
            Cutoff::Smooth {
                center,
                inner,
                outer,
            } => {
                let c = center.x();
                vec![c - outer, c - inner, c + inner, c + outer]
            }
            _ => Vec::new(),
        }
    }
}

/// Pointwise closed-form u, validated once.
fn closed_form(sol: &Solution) -> Result<impl Fn(&Point) -> f64 + Sync + '_> {
    sol.measure.validate(&sol.domain)?;
    let probe = match &sol.domain {
        Domain::Interval { a, b } => Point::scalar(0.5 * (a + b)),
        Domain::Ball { center, .. } => *center,
        Domain::Rectangle { .. } => {
            return Err(Error::UnsupportedKernel("rectangle".into()));
        }
    };
    // surface unsupported kernels (divergence form, node densities) up front
    for a in &sol.measure.atoms {
        if a.point != probe {
            green(&sol.operator, &sol.domain, &probe, &a.point)?;
        }
    }
    if let Some(d) = &sol.measure.density {
        if matches!(d, Density::Nodes { .. }) {
            return Err(Error::Unsupported(
                "node densities have no closed-form potential".into(),
            ));
        }
        density_potential_at(&sol.operator, &sol.domain, d, &probe)?;
    }
    Ok(move |x: &Point| {
        let mut u = 0.0;
        for a in &sol.measure.atoms {
            if a.weight != 0.0 {
                u += a.weight * green(&sol.operator, &sol.domain, x, &a.point).unwrap_or(0.0);
            }
        }
        if let Some(d) = &sol.measure.density {
            u += density_potential_at(&sol.operator, &sol.domain, d, x).unwrap_or(0.0);
        }
        u
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalEnergy {
    pub value: f64,
    /// No point of the domain lies in the window.
    pub empty_window: bool,
}

/// (1/n) ∫_{n ≤ u ≤ 2n} η a∇u·∇u dx.
///
/// With closed-form kernels the window is integrated in polar (spherical)
/// coordinates about the first concentrated atom (or the ball center),
/// locating the level crossings along each ray. Otherwise the grid solution
/// is used with centered difference gradients.
pub fn local_energy(sol: &Solution, eta: &Cutoff, n: f64) -> Result<LocalEnergy> {
    if !sol.operator.is_local() {
        return Err(Error::InvalidArgument(
            "local energy needs a local operator".into(),
        ));
    }
    if !(n > 0.0) {
        return Err(Error::InvalidArgument("level n must be positive".into()));
    }
    let coeff = match &sol.operator {
        OperatorSpec::DivergenceForm { coefficients, .. } => coefficients.clone(),
        _ => CoefficientField::identity(sol.domain.dim()),
    };
    match closed_form(sol) {
        Ok(u) => polar_local_energy(sol, &u, &coeff, eta, n),
        Err(Error::UnsupportedKernel(_)) | Err(Error::Unsupported(_)) => {
            Ok(grid_local_energy(sol, &coeff, eta, n))
        }
        Err(e) => Err(e),
    }
}

fn energy_density(
    u: &dyn Fn(&Point) -> f64,
    coeff: &CoefficientField,
    x: &Point,
    scale: f64,
) -> f64 {
    let d = x.dim();
    let step = 1e-6 * scale.max(1e-9);
    let mut grad = [0.0; 3];
    for (k, g) in grad.iter_mut().enumerate().take(d) {
        let mut e = [0.0; 3];
        e[k] = step;
        let e = Point::new(&e[..d]);
        *g = (u(&x.add(&e)) - u(&x.sub(&e))) / (2.0 * step);
    }
    let a = coeff.eval(x);
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += a[i][j] * grad[i] * grad[j];
        }
    }
    s
}

fn polar_local_energy(
    sol: &Solution,
    u: &(dyn Fn(&Point) -> f64 + Sync),
    coeff: &CoefficientField,
    eta: &Cutoff,
    n: f64,
) -> Result<LocalEnergy> {
    let (center, radius) = sol.domain.as_ball().ok_or_else(|| {
        Error::UnsupportedKernel("polar quadrature needs a ball or interval".into())
    })?;
    let d = sol.domain.dim();
    let origin = sol
        .decomposition
        .concentrated
        .atoms
        .first()
        .map_or(center, |a| a.point);
    let has_pole = origin != center || !sol.decomposition.concentrated.atoms.is_empty();
    // directions with weights (including the angular measure)
    let dirs: Vec<(Point, f64)> = match d {
        1 => vec![(Point::scalar(-1.0), 1.0), (Point::scalar(1.0), 1.0)],
        2 => {
            let m = 256;
            (0..m)
                .map(|k| {
                    let t = 2.0 * PI * (k as f64 + 0.5) / m as f64;
                    (Point::new(&[t.cos(), t.sin()]), 2.0 * PI / m as f64)
                })
                .collect()
        }
        _ => {
            let m = 64;
            let rule = gl16();
            let mut v = Vec::new();
            for (ct, wt) in rule.points(-1.0, 1.0).collect::<Vec<_>>() {
                let st = (1.0 - ct * ct).sqrt();
                for k in 0..m {
                    let ph = 2.0 * PI * (k as f64 + 0.5) / m as f64;
                    v.push((
                        Point::new(&[st * ph.cos(), st * ph.sin(), ct]),
                        wt * 2.0 * PI / m as f64,
                    ));
                }
            }
            v
        }
    };
    let oc = origin.sub(&center);
    let results: Vec<Result<(f64, bool)>> = dirs
        .par_iter()
        .map(|(w, weight)| {
            let b = oc.dot(w);
            let len = -b + (b * b - (oc.norm_sq() - radius * radius)).sqrt();
            let at = |t: f64| origin.add(&w.scale(t));
            let intervals = window_intervals(&|t| u(&at(t)), len, n, has_pole)?;
            let mut s = 0.0;
            for &(lo, hi) in &intervals {
                // geometric panels of ratio ≤ 2 toward the origin
                let mut br = vec![lo];
                let mut t = lo;
                while t < hi {
                    t = if t > 0.0 { (2.0 * t).min(hi) } else { hi };
                    br.push(t);
                }
                s += gl32().integrate_panels(&br, |t| {
                    let x = at(t);
                    let e = eta.eval(&x);
                    if e == 0.0 {
                        return 0.0;
                    }
                    e * energy_density(u, coeff, &x, t) * t.powi(d as i32 - 1)
                });
            }
            Ok((weight * s, !intervals.is_empty()))
        })
        .collect();
    let mut value = 0.0;
    let mut any = false;
    for r in results {
        let (v, nonempty) = r?;
        value += v;
        any |= nonempty;
    }
    Ok(LocalEnergy {
        value: value / n,
        empty_window: !any,
    })
}

/// Sub-intervals of (0, len) on which n ≤ f(t) ≤ 2n.
fn window_intervals(
    f: &dyn Fn(f64) -> f64,
    len: f64,
    n: f64,
    pole: bool,
) -> Result<Vec<(f64, f64)>> {
    const SCAN: usize = 400;
    let t_min = 1e-14 * len;
    let ts: Vec<f64> = (0..=SCAN)
        .map(|k| {
            // geometric toward 0, uniform near the far end
            let g = t_min * (len / t_min).powf(k as f64 / SCAN as f64);
            g.max(len * k as f64 / SCAN as f64 * 0.999_999)
        })
        .collect();
    let vals: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
    if pole && vals[0] <= 2.0 * n {
        return Err(Error::Unresolvable {
            level: n,
            detail: format!("u at distance {t_min:e} from the atom is only {}", vals[0]),
        });
    }
    let class = |v: f64| -> i8 {
        if v < n {
            -1
        } else if v > 2.0 * n {
            1
        } else {
            0
        }
    };
    let bisect = |mut a: f64, mut b: f64, level: f64| -> f64 {
        let sa = f(a) > level;
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if (f(m) > level) == sa {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    let mut cuts = vec![0.0];
    for k in 0..SCAN {
        let (c0, c1) = (class(vals[k]), class(vals[k + 1]));
        if c0 != c1 {
            let (lo, hi) = (c0.min(c1), c0.max(c1));
            if lo == -1 && hi >= 0 {
                cuts.push(bisect(ts[k], ts[k + 1], n));
            }
            if hi == 1 && lo <= 0 {
                cuts.push(bisect(ts[k], ts[k + 1], 2.0 * n));
            }
        }
    }
    cuts.push(len);
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b > a && class(f(0.5 * (a + b))) == 0 {
            match out.last_mut() {
                Some((_, hi)) if *hi == a => *hi = b,
                _ => out.push((a, b)),
            }
        }
    }
    Ok(out)
}

fn grid_local_energy(
    sol: &Solution,
    coeff: &CoefficientField,
    eta: &Cutoff,
    n: f64,
) -> LocalEnergy {
    let u = sol.field();
    let grid = u.grid().clone();
    let h = grid.h();
    let d = grid.dim();
    let v = u.values();
    let mut value = 0.0;
    let mut any = false;
    for i in 0..grid.len() {
        if v[i] < n || v[i] > 2.0 * n {
            continue;
        }
        any = true;
        let x = grid.point(i);
        let a = coeff.eval(&x);
        let nb = grid.neighbors(i);
        let at = |j: u32| {
            if j == crate::geometry::BOUNDARY {
                0.0
            } else {
                v[j as usize]
            }
        };
        let mut s = 0.0;
        for k in 0..d {
            let g = (at(nb[2 * k + 1]) - at(nb[2 * k])) / (2.0 * h);
            s += a[k][k] * g * g;
        }
        value += eta.eval(&x) * s;
    }
    LocalEnergy {
        value: value * grid.cell_volume() / n,
        empty_window: !any,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlocalOptions {
    /// Successive refinements must agree to this relative change.
    pub rel_tol: f64,
    pub max_refinements: usize,
}

impl Default for NonlocalOptions {
    fn default() -> Self {
        NonlocalOptions {
            rel_tol: 0.01,
            max_refinements: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlocalEnergy {
    pub value: f64,
    /// Value after each refinement.
    pub trace: Vec<f64>,
}

/// The jump/killing functional for the fractional Laplacian on an interval.
pub fn nonlocal_energy(
    sol: &Solution,
    eta: &Cutoff,
    n: f64,
    opts: &NonlocalOptions,
) -> Result<NonlocalEnergy> {
    let alpha = match sol.operator {
        OperatorSpec::Fractional { alpha } => alpha,
        _ => {
            return Err(Error::InvalidArgument(
                "nonlocal energy needs a fractional operator".into(),
            ))
        }
    };
    if sol.domain.dim() != 1 {
        return Err(Error::Unsupported(
            "nonlocal energy is implemented for d = 1".into(),
        ));
    }
    if !(n > 0.0) {
        return Err(Error::InvalidArgument("level n must be positive".into()));
    }
    let (center, radius) = sol.domain.as_ball().expect("1D domains are intervals");
    let (a, b) = (center.x() - radius, center.x() + radius);
    let u = closed_form(sol)?;
    let uf = |t: f64| u(&Point::scalar(t));

    let atoms: Vec<f64> = sol.measure.atoms.iter().map(|p| p.point.x()).collect();
    let crossings = level_crossings(&uf, a, b, &atoms, &[n, 2.0 * n]);
    let mut special: Vec<f64> = atoms.clone();
    special.extend(&crossings);
    let eta_kinks = eta.kinks_1d();
    let ctx = NonlocalCtx {
        u: &uf,
        eta,
        n,
        a,
        b,
        jump_c: 0.5 * fractional_constant(alpha, 1),
        alpha,
        op: &sol.operator,
        dom: &sol.domain,
    };
    let mut trace = Vec::new();
    for level in 0..=opts.max_refinements {
        let v = ctx.pass(&special, &eta_kinks, level)?;
        trace.push(v);
        if let [.., p, q] = trace[..] {
            let change = (q - p).abs() / q.abs().max(f64::MIN_POSITIVE);
            if change < opts.rel_tol || q == 0.0 {
                return Ok(NonlocalEnergy { value: q, trace });
            }
        }
    }
    warn!("nonlocal quadrature trace did not settle: {trace:?}");
    let k = trace.len();
    Err(Error::NonConvergence {
        what: "nonlocal quadrature",
        iterations: k,
        residual: (trace[k - 1] - trace[k - 2]).abs() / trace[k - 1].abs(),
    })
}

/// Points in (a, b) where f crosses any of `levels`, located by a scan
/// graded toward `atoms` and bisection.
fn level_crossings(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    atoms: &[f64],
    levels: &[f64],
) -> Vec<f64> {
    let mut ts = breakpoints(a, b, (1..2048).map(|k| a + (b - a) * k as f64 / 2048.0));
    for &p in atoms {
        ts.extend(graded_toward(a, b, p, 0.7, 1e-14 * (b - a)));
    }
    let ts = breakpoints(a, b, ts);
    let interior = &ts[1..ts.len() - 1];
    let vals: Vec<f64> = interior.iter().map(|&t| f(t)).collect();
    let mut out = Vec::new();
    for &level in levels {
        for k in 0..interior.len().saturating_sub(1) {
            let (s0, s1) = (vals[k] > level, vals[k + 1] > level);
            if s0 != s1 {
                let (mut lo, mut hi) = (interior[k], interior[k + 1]);
                for _ in 0..100 {
                    let m = 0.5 * (lo + hi);
                    if (f(m) > level) == s0 {
                        lo = m;
                    } else {
                        hi = m;
                    }
                }
                out.push(0.5 * (lo + hi));
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

struct NonlocalCtx<'a> {
    u: &'a (dyn Fn(f64) -> f64 + Sync),
    eta: &'a Cutoff,
    n: f64,
    a: f64,
    b: f64,
    jump_c: f64,
    alpha: f64,
    op: &'a OperatorSpec,
    dom: &'a Domain,
}

struct Node {
    y: f64,
    w: f64,
    u: f64,
    class: i8,
}

impl NonlocalCtx<'_> {
    fn class(&self, v: f64) -> i8 {
        if v < self.n {
            -1
        } else if v > 2.0 * self.n {
            1
        } else {
            0
        }
    }

    fn nodes_on(&self, br: &[f64], level: usize) -> Vec<Node> {
        let rule = gl16();
        let parts = 1usize << level;
        let mut out = Vec::new();
        for w in br.windows(2) {
            let class = self.class((self.u)(0.5 * (w[0] + w[1])));
            for p in 0..parts {
                let lo = w[0] + (w[1] - w[0]) * p as f64 / parts as f64;
                let hi = w[0] + (w[1] - w[0]) * (p + 1) as f64 / parts as f64;
                for (y, wt) in rule.points(lo, hi) {
                    out.push(Node {
                        y,
                        w: wt,
                        u: (self.u)(y),
                        class,
                    });
                }
            }
        }
        out
    }

    fn graded(&self, base: &[f64], toward: &[f64]) -> Vec<f64> {
        let len = self.b - self.a;
        let mut pts = base.to_vec();
        for &p in toward {
            pts.extend(graded_toward(self.a, self.b, p, 0.5, 1e-9 * len));
        }
        breakpoints(self.a, self.b, pts)
    }

    fn pass(&self, special: &[f64], eta_kinks: &[f64], level: usize) -> Result<f64> {
        let n = self.n;
        let mut base = special.to_vec();
        base.extend(eta_kinks);
        let global = self.graded(&base, special);
        let nodes = self.nodes_on(&global, level);
        let per_panel = gl16().nodes.len() << level;
        let jump = |x: f64, y: f64| self.jump_c * (x - y).abs().powf(-1.0 - self.alpha);
        let terms: Vec<Result<f64>> = nodes
            .par_iter()
            .enumerate()
            .map(|(k, xn)| {
                let x = xn.y;
                let e = self.eta.eval(&Point::scalar(x));
                if e == 0.0 {
                    return Ok(0.0);
                }
                let ux = xn.u;
                let cx = self.class(ux);
                let mut inner = 0.0;
                if cx == 0 {
                    // panels next to x are re-graded toward it, the rest reuse cached nodes
                    let p = k / per_panel;
                    let lo_p = p.saturating_sub(1);
                    let hi_p = (p + 1).min(global.len() - 2);
                    let skip = lo_p * per_panel..(hi_p + 1) * per_panel;
                    for (j, yn) in nodes.iter().enumerate() {
                        if !skip.contains(&j) {
                            inner += yn.w * theta_n(ux, yn.u, n) * jump(x, yn.y);
                        }
                    }
                    let (lo, hi) = (global[lo_p], global[hi_p + 1]);
                    let mut br = graded_toward(lo, hi, x, 0.5, 1e-9 * (self.b - self.a));
                    br.extend(global[lo_p..=hi_p + 1].iter().copied());
                    let br = breakpoints(lo, hi, br);
                    for yn in self.nodes_on(&br, level) {
                        inner += yn.w * theta_n(ux, yn.u, n) * jump(x, yn.y);
                    }
                } else {
                    for yn in nodes.iter().filter(|yn| yn.class != cx) {
                        inner += yn.w * theta_n(ux, yn.u, n) * jump(x, yn.y);
                    }
                }
                let killing = if ux > n {
                    0.5 * killing_density(self.op, self.dom, &Point::scalar(x))?.value
                        * theta_n(ux, 0.0, n)
                } else {
                    0.0
                };
                Ok(xn.w * e * (inner + killing))
            })
            .collect();
        let mut total = 0.0;
        for t in terms {
            total += t?;
        }
        Ok(total / (2.0 * n))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Local,
    Nonlocal,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub kind: FunctionalKind,
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
    /// ∫ η dμ_c⁺
    pub target: f64,
    pub rel_errors: Vec<f64>,
    /// value / target at the largest level.
    pub prefactor: f64,
    /// Refinement traces (nonlocal functional only).
    pub traces: Vec<Vec<f64>>,
}

/// Evaluate the functional matching the operator at each level and compare
/// with ∫ η dμ_c⁺ taken from the measure decomposition.
pub fn reconstruct_mu_c(
    sol: &Solution,
    eta: &Cutoff,
    levels: &[f64],
) -> Result<ReconstructionReport> {
    if levels.is_empty() || levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "levels must be nonempty and increasing".into(),
        ));
    }
    let target = sol
        .decomposition
        .concentrated_positive_mass(|x| eta.eval(x));
    let kind = if sol.operator.is_local() {
        FunctionalKind::Local
    } else {
        FunctionalKind::Nonlocal
    };
    let mut values = Vec::new();
    let mut traces = Vec::new();
    for &n in levels {
        match kind {
            FunctionalKind::Local => values.push(local_energy(sol, eta, n)?.value),
            FunctionalKind::Nonlocal => {
                let r = nonlocal_energy(sol, eta, n, &NonlocalOptions::default())?;
                values.push(r.value);
                traces.push(r.trace);
            }
        }
    }
    let rel_errors = values
        .iter()
        .map(|v| (v - target).abs() / target.abs())
        .collect();
    let prefactor = values.last().unwrap() / target;
    if target > 0.0 && (prefactor - 1.0).abs() > 0.1 {
        warn!("fitted prefactor {prefactor} differs from 1 by more than 10%");
    }
    Ok(ReconstructionReport {
        kind,
        levels: levels.to_vec(),
        values,
        target,
        rel_errors,
        prefactor,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;
    use crate::kernels::assemble;
    use crate::measures::MeasureData;
    use crate::solve::{integral_solution, SolveMethod};
    use approx::assert_relative_eq;

    fn closed(op: OperatorSpec, dom: Domain, mu: MeasureData, h: f64) -> Solution {
        let grid = Grid::build(&dom, h).unwrap();
        let dop = assemble(&op, &grid).unwrap();
        integral_solution(&dop, &mu, SolveMethod::Auto).unwrap()
    }

    #[test]
    fn clamp_and_theta() {
        assert_eq!(s_n(0.0, 1.0), 1.0);
        assert_eq!(s_n(3.0, 1.0), 2.0);
        assert_eq!(s_n(1.5, 1.0), 1.5);
        assert_eq!(theta_n(3.0, 0.0, 1.0), 6.0);
        assert_eq!(theta_n(1.2, 1.7, 1.0), 2.0 * 0.5f64.powi(2));
        assert_eq!(theta_n(0.2, 0.7, 1.0), 0.0);
    }

    #[test]
    fn sigma_of_one_and_indicator() {
        assert_relative_eq!(sigma(&|_| 1.0, &[], 0.3, 2.5), 0.5, epsilon = 1e-14);
        let n = 1.0;
        let ind = |t: f64| if (n..=2.0 * n).contains(&t) { 1.0 } else { 0.0 };
        for (x, y) in [(0.5, 2.5), (1.3, 0.2), (3.0, 1.5), (1.1, 1.9)] {
            let lhs = (x - y) * (x - y) * sigma(&ind, &[n, 2.0 * n], x, y);
            let rhs = 0.5 * (s_n(x, n) - s_n(y, n)) * (2.0 * x - s_n(x, n) - s_n(y, n));
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn disk_dirac_local_energy_is_one() {
        let sol = closed(
            OperatorSpec::Laplacian,
            Domain::unit_ball(2),
            MeasureData::dirac(Point::origin(2), 1.0),
            1.0 / 16.0,
        );
        for n in [0.25, 0.5, 1.0] {
            let e = local_energy(&sol, &Cutoff::One, n).unwrap();
            assert!((e.value - 1.0).abs() < 1e-6, "n = {n}: {}", e.value);
        }
    }

    #[test]
    fn bounded_solution_has_empty_window() {
        let sol = closed(
            OperatorSpec::Laplacian,
            Domain::unit_ball(2),
            MeasureData::with_density(Density::Constant { value: 1.0 }),
            1.0 / 16.0,
        );
        let e = local_energy(&sol, &Cutoff::One, 1.0).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.empty_window);
    }
}
