//! Integral solutions u = R^D μ by kernel superposition or grid solves.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, GridField, Point};
use crate::kernels::{green, DiscreteOperator, OperatorSpec};
use crate::measures::{decompose, Atom, Decomposition, Density, MeasureData};
use crate::quadrature::{gl16, graded_toward};
use crate::special::gamma;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Closed forms where they are exact (atoms, constant densities on
    /// intervals and balls), grid solves for everything else.
    #[default]
    Auto,
    /// Closed forms only; fails for data without one.
    ClosedForm,
    /// Grid solves only.
    Discrete,
}

/// A concentrated atom and its discrete Green function (unit weight).
#[derive(Clone, Debug)]
pub struct Pole {
    pub atom: Atom,
    pub column: GridField,
}

/// u = R^D μ on a grid, kept as a diffuse field plus discrete Green columns
/// of the concentrated atoms.
#[derive(Clone, Debug)]
pub struct Solution {
    pub operator: OperatorSpec,
    pub domain: Domain,
    pub measure: MeasureData,
    pub decomposition: Decomposition,
    pub diffuse: GridField,
    pub poles: Vec<Pole>,
}

impl Solution {
    /// Grid values u_h = diffuse + Σ w_j G_h(·, a_j).
    pub fn field(&self) -> GridField {
        let mut f = self.diffuse.clone();
        for p in &self.poles {
            let v = f.values_mut();
            for (a, b) in v.iter_mut().zip(p.column.values()) {
                *a += p.atom.weight * b;
            }
        }
        f
    }

    /// u at an arbitrary point by closed forms (+∞ at a concentrated atom).
    pub fn eval(&self, x: &Point) -> Result<f64> {
        Ok(integral_solution_at(
            &self.operator,
            &self.domain,
            &self.measure,
            std::slice::from_ref(x),
        )?[0])
    }

    pub fn has_concentrated_part(&self) -> bool {
        !self.poles.is_empty()
    }
}

/// u(x) = Σ w_i G(x, a_i) + ∫ G(x, y) f(y) dy at each point, using closed-form
/// kernels. Evaluating at a concentrated atom gives +∞ (not an error).
pub fn integral_solution_at(
    op: &OperatorSpec,
    dom: &Domain,
    mu: &MeasureData,
    points: &[Point],
) -> Result<Vec<f64>> {
    mu.validate(dom)?;
    points
        .par_iter()
        .map(|x| {
            let mut u = 0.0;
            for a in &mu.atoms {
                if a.weight != 0.0 {
                    u += a.weight * green(op, dom, x, &a.point)?;
                }
            }
            if let Some(d) = &mu.density {
                u += density_potential_at(op, dom, d, x)?;
            }
            Ok(u)
        })
        .collect()
}

/// ∫ G(x, y) f(y) dy; exact for constant densities, quadrature otherwise.
pub fn density_potential_at(
    op: &OperatorSpec,
    dom: &Domain,
    f: &Density,
    x: &Point,
) -> Result<f64> {
    if let Some(c) = f.as_constant() {
        return Ok(c * constant_potential(op, dom, x)?);
    }
    if matches!(f, Density::Nodes { .. }) {
        return Err(Error::Unsupported(
            "node-array densities have no closed-form potential; use a grid solve".into(),
        ));
    }
    // probe kernel support before integrating
    green(op, dom, x, x)?;
    if !dom.contains_unchecked(x) {
        return Ok(0.0);
    }
    let fx = |y: &Point| f.eval(y).unwrap_or(0.0);
    let g = |y: &Point| green(op, dom, x, y).unwrap_or(0.0);
    let d = dom.dim();
    let (c, r) = dom.as_ball().expect("closed-form kernels live on balls");
    let rule = gl16();
    if d == 1 {
        let (a, b) = (c.x() - r, c.x() + r);
        let (m1, m2) = (0.5 * (a + x.x()), 0.5 * (x.x() + b));
        let mut breaks = graded_toward(a, m1, a, 0.25, 1e-10 * r);
        breaks.extend(graded_toward(m1, x.x(), x.x(), 0.25, 1e-10 * r));
        breaks.extend(graded_toward(x.x(), m2, x.x(), 0.25, 1e-10 * r));
        breaks.extend(graded_toward(m2, b, b, 0.25, 1e-10 * r));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        return Ok(rule.integrate_panels(&breaks, |y| {
            let p = Point::scalar(y);
            if y == x.x() {
                0.0
            } else {
                g(&p) * fx(&p)
            }
        }));
    }
    // polar/spherical coordinates centered at x
    let s = x.sub(&c);
    let reach = |dir: &Point| -> f64 {
        let b = s.dot(dir);
        -b + (b * b + r * r - s.norm_sq()).sqrt()
    };
    let radial = |dir: &Point| -> f64 {
        let rho_max = reach(dir);
        // the kernel is singular at ρ = 0 and only Hölder at the boundary
        let mut breaks = graded_toward(0.0, 0.5 * rho_max, 0.0, 0.25, 1e-8 * r);
        breaks.extend(graded_toward(
            0.5 * rho_max,
            rho_max,
            rho_max,
            0.25,
            1e-10 * r,
        ));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        rule.integrate_panels(&breaks, |rho| {
            let y = x.add(&dir.scale(rho));
            g(&y) * fx(&y) * rho.powi(d as i32 - 1)
        })
    };
    if d == 2 {
        let m = 64;
        let mut sum = 0.0;
        for k in 0..m {
            let t = 2.0 * PI * (k as f64 + 0.5) / m as f64;
            sum += radial(&Point::new(&[t.cos(), t.sin()]));
        }
        Ok(sum * 2.0 * PI / m as f64)
    } else {
        let m = 32;
        let polar = crate::quadrature::gl32();
        let mut sum = 0.0;
        for (th, w) in polar.points(0.0, PI) {
            for k in 0..m {
                let ph = 2.0 * PI * (k as f64 + 0.5) / m as f64;
                let dir = Point::new(&[th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
                sum += w * th.sin() * radial(&dir);
            }
        }
        Ok(sum * 2.0 * PI / m as f64)
    }
}

/// R^D 1 in closed form on intervals and balls: the expected exit time of
/// the process generated by L.
pub fn constant_potential(op: &OperatorSpec, dom: &Domain, x: &Point) -> Result<f64> {
    green(op, dom, x, x)?;
    if !dom.contains_unchecked(x) {
        return Ok(0.0);
    }
    let (c, r) = dom.as_ball().expect("closed-form kernels live on balls");
    let d = dom.dim() as f64;
    let s2 = (r * r - x.sub(&c).norm_sq()).max(0.0);
    Ok(match op {
        OperatorSpec::Laplacian => s2 / (2.0 * d),
        OperatorSpec::Fractional { alpha } => {
            gamma(d / 2.0)
                / (2f64.powf(*alpha) * gamma(1.0 + alpha / 2.0) * gamma((d + alpha) / 2.0))
                * s2.powf(alpha / 2.0)
        }
        OperatorSpec::DivergenceForm { .. } => unreachable!("green rejects divergence form"),
    })
}

fn closed_form_available(op: &OperatorSpec, dom: &Domain) -> bool {
    !matches!(op, OperatorSpec::DivergenceForm { .. }) && dom.as_ball().is_some()
}

/// Integral solution on the grid of `dop`.
///
/// Concentrated atoms are always represented by discrete Green columns so
/// that envelope computations see a consistent discrete potential; the
/// diffuse part uses closed forms when `method` allows and they are exact.
pub fn integral_solution(
    dop: &DiscreteOperator,
    mu: &MeasureData,
    method: SolveMethod,
) -> Result<Solution> {
    let grid = dop.grid();
    let dom = grid.domain();
    let op = dop.op();
    mu.validate(dom)?;
    let dec = decompose(mu, op, dom);
    let closed = match method {
        SolveMethod::Discrete => false,
        SolveMethod::Auto => closed_form_available(op, dom),
        SolveMethod::ClosedForm => {
            if !closed_form_available(op, dom) {
                return Err(Error::UnsupportedKernel(format!(
                    "no closed form for {} on this domain",
                    op.name()
                )));
            }
            true
        }
    };

    let mut diffuse = vec![0.0; grid.len()];
    let mut discrete_part = MeasureData::zero();
    if closed {
        let pts: Vec<Point> = (0..grid.len()).map(|i| grid.point(i)).collect();
        let atoms_only = MeasureData {
            atoms: dec.diffuse.atoms.clone(),
            density: None,
        };
        diffuse = integral_solution_at(op, dom, &atoms_only, &pts)?;
        match &dec.diffuse.density {
            Some(f) if f.as_constant().is_some() => {
                let c = f.as_constant().unwrap();
                if c != 0.0 {
                    let vals: Vec<f64> = pts
                        .par_iter()
                        .map(|x| constant_potential(op, dom, x).map(|v| c * v))
                        .collect::<Result<_>>()?;
                    for (u, v) in diffuse.iter_mut().zip(vals) {
                        *u += v;
                    }
                }
            }
            Some(f) if method == SolveMethod::ClosedForm => {
                let vals: Vec<f64> = pts
                    .par_iter()
                    .map(|x| density_potential_at(op, dom, f, x))
                    .collect::<Result<_>>()?;
                for (u, v) in diffuse.iter_mut().zip(vals) {
                    *u += v;
                }
            }
            Some(f) => discrete_part.density = Some(f.clone()),
            None => {}
        }
    } else {
        discrete_part = dec.diffuse.clone();
    }
    if !discrete_part.is_zero() {
        let rhs = discrete_part.deposit(grid)?;
        let v = dop.solve(&rhs)?;
        for (u, w) in diffuse.iter_mut().zip(v) {
            *u += w;
        }
    }

    let poles = dec
        .concentrated
        .atoms
        .iter()
        .map(|a| {
            let rhs = MeasureData::dirac(a.point, 1.0).deposit(grid)?;
            let col = dop.solve(&rhs)?;
            Ok(Pole {
                atom: *a,
                column: GridField::new(grid.clone(), col),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Solution {
        operator: op.clone(),
        domain: dom.clone(),
        measure: mu.clone(),
        decomposition: dec,
        diffuse: GridField::new(grid.clone(), diffuse),
        poles,
    })
}

/// R^D ρ on the grid by a discrete solve.
pub fn potential(dop: &DiscreteOperator, rho: &GridField) -> Result<GridField> {
    Ok(GridField::new(dop.grid().clone(), dop.solve(rho.values())?))
}

/// Weight field ρ normalized so that Σ ρ h^d = 1 on the grid.
pub fn normalized_weight(
    grid: &std::sync::Arc<crate::geometry::Grid>,
    f: impl Fn(&Point) -> f64,
) -> Result<GridField> {
    let mut w = GridField::from_fn(grid, f);
    if w.values().iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("weight must be nonnegative".into()));
    }
    let total = w.integral();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument(
            "weight must have positive mass".into(),
        ));
    }
    w.values_mut().iter_mut().for_each(|v| *v /= total);
    Ok(w)
}
