//! Green functions, Poisson kernels, jump kernels and killing densities, and
//! the discrete operators used by every grid solver.
//!
//! All kernels are for `-L` with `L = Δ` (full Laplacian) or
//! `L = -(-Δ)^{α/2}`, so `G(x, ·)` solves `-L G(x, ·) = δ_x` with zero
//! exterior data.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, Grid, GridField, Point, BOUNDARY};
use crate::linalg::{DenseSym, Factor, Matrix, SymCsr};
use crate::quadrature::{gl16, gl32, graded_toward};
use crate::special::{beta, beta_inc_reg, gamma, sphere_area};

/// Largest interior node count for which the (dense) fractional operator is
/// assembled.
pub const MAX_DENSE_NODES: usize = 6000;

/// Matrix-valued coefficient `x ↦ a(x)`.
pub type MatrixFn = Arc<dyn Fn(&Point) -> [[f64; 3]; 3] + Send + Sync>;

/// Coefficient field of a divergence-form operator `div(a ∇u)`.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientField {
    /// The same matrix at every point.
    Constant { matrix: Vec<Vec<f64>> },
    /// `a(x) = (base + amplitude · Π_k sin(2π wavenumber x_k)) I`.
    Sinusoidal {
        base: f64,
        amplitude: f64,
        wavenumber: f64,
    },
    #[serde(skip)]
    Custom(MatrixFn),
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientField::Constant { matrix } => {
                f.debug_struct("Constant").field("matrix", matrix).finish()
            }
            CoefficientField::Sinusoidal {
                base,
                amplitude,
                wavenumber,
            } => f
                .debug_struct("Sinusoidal")
                .field("base", base)
                .field("amplitude", amplitude)
                .field("wavenumber", wavenumber)
                .finish(),
            CoefficientField::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl CoefficientField {
    pub fn identity(dim: usize) -> Self {
        let mut m = vec![vec![0.0; dim]; dim];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        CoefficientField::Constant { matrix: m }
    }

    pub fn eval(&self, x: &Point) -> [[f64; 3]; 3] {
        match self {
            CoefficientField::Constant { matrix } => {
                let mut a = [[0.0; 3]; 3];
                for (i, row) in matrix.iter().enumerate().take(3) {
                    for (j, v) in row.iter().enumerate().take(3) {
                        a[i][j] = *v;
                    }
                }
                a
            }
            CoefficientField::Sinusoidal {
                base,
                amplitude,
                wavenumber,
            } => {
                let s: f64 = x
                    .coords()
                    .iter()
                    .map(|c| (2.0 * PI * wavenumber * c).sin())
                    .product();
                let v = base + amplitude * s;
                let mut a = [[0.0; 3]; 3];
                for (k, row) in a.iter_mut().enumerate() {
                    row[k] = v;
                }
                a
            }
            CoefficientField::Custom(f) => f(x),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Laplacian,
    DivergenceForm {
        coefficients: CoefficientField,
        /// Ellipticity bounds λ ≤ a(x)ξ·ξ/|ξ|² ≤ Λ.
        lambda: f64,
        big_lambda: f64,
    },
    Fractional {
        alpha: f64,
    },
}

impl OperatorSpec {
    pub fn fractional(alpha: f64) -> Result<Self> {
        let op = OperatorSpec::Fractional { alpha };
        op.validate()?;
        Ok(op)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OperatorSpec::Laplacian => Ok(()),
            OperatorSpec::DivergenceForm {
                lambda, big_lambda, ..
            } => {
                if !(*lambda > 0.0 && lambda <= big_lambda && big_lambda.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "ellipticity bounds need 0 < λ ≤ Λ < ∞, got λ = {lambda}, Λ = {big_lambda}"
                    )));
                }
                Ok(())
            }
            OperatorSpec::Fractional { alpha } => {
                if !(*alpha > 0.0 && *alpha < 2.0) {
                    return Err(Error::InvalidArgument(format!(
                        "fractional order must lie in (0, 2), got {alpha}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn is_local(&self) -> bool {
        !matches!(self, OperatorSpec::Fractional { .. })
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            OperatorSpec::Fractional { alpha } => Some(*alpha),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            OperatorSpec::Laplacian => "laplacian".into(),
            OperatorSpec::DivergenceForm { .. } => "divergence-form".into(),
            OperatorSpec::Fractional { alpha } => format!("fractional(alpha={alpha})"),
        }
    }
}

/// c(α, d) = 2^α Γ((d+α)/2) / (π^{d/2} |Γ(-α/2)|), the constant for which
/// the singular integral has Fourier symbol |ξ|^α.
pub fn fractional_constant(alpha: f64, d: usize) -> f64 {
    let half = alpha / 2.0;
    // |Γ(-α/2)| = Γ(1 - α/2) / (α/2)
    let abs_gamma = gamma(1.0 - half) / half;
    2f64.powf(alpha) * gamma((d as f64 + alpha) / 2.0) / (PI.powf(d as f64 / 2.0) * abs_gamma)
}

/// Prefactor κ(d, α) = Γ(d/2) / (2^α π^{d/2} Γ(α/2)²) of the ball Green function.
pub fn ball_green_constant(alpha: f64, d: usize) -> f64 {
    let g = gamma(alpha / 2.0);
    gamma(d as f64 / 2.0) / (2f64.powf(alpha) * PI.powf(d as f64 / 2.0) * g * g)
}

/// True when G(x, x) = +∞, i.e. points are polar for the operator in R^d.
pub fn diagonal_is_singular(op: &OperatorSpec, d: usize) -> bool {
    match op {
        OperatorSpec::Laplacian | OperatorSpec::DivergenceForm { .. } => d >= 2,
        OperatorSpec::Fractional { alpha } => *alpha <= d as f64,
    }
}

fn check_point(dom: &Domain, x: &Point) -> Result<()> {
    if x.dim() != dom.dim() {
        return Err(Error::DimensionMismatch {
            expected: dom.dim(),
            got: x.dim(),
        });
    }
    Ok(())
}

fn unsupported(op: &OperatorSpec, dom: &Domain) -> Error {
    let shape = match dom {
        Domain::Interval { .. } => "interval",
        Domain::Ball { .. } => "ball",
        Domain::Rectangle { .. } => "rectangle",
    };
    Error::UnsupportedKernel(format!("{} on a {shape}", op.name()))
}

/// Closed-form Green function G_D(x, y).
///
/// Supported pairs: Laplacian and fractional Laplacian on intervals and
/// balls. On the diagonal the value is +∞ when points are polar and the
/// finite limit otherwise. Points outside the open domain give 0.
pub fn green(op: &OperatorSpec, dom: &Domain, x: &Point, y: &Point) -> Result<f64> {
    check_point(dom, x)?;
    check_point(dom, y)?;
    op.validate()?;
    let (c, r) = match (op, dom.as_ball()) {
        (OperatorSpec::DivergenceForm { .. }, _) | (_, None) => {
            return Err(unsupported(op, dom));
        }
        (_, Some(b)) => b,
    };
    if !dom.contains_unchecked(x) || !dom.contains_unchecked(y) {
        return Ok(0.0);
    }
    let d = dom.dim();
    let xs = x.sub(&c).scale(1.0 / r);
    let ys = y.sub(&c).scale(1.0 / r);
    match op {
        OperatorSpec::Laplacian => Ok(r.powi(2 - d as i32) * laplacian_unit_ball(d, &xs, &ys)),
        OperatorSpec::Fractional { alpha } => {
            Ok(r.powf(alpha - d as f64) * fractional_unit_ball(*alpha, d, &xs, &ys))
        }
        OperatorSpec::DivergenceForm { .. } => unreachable!(),
    }
}

fn laplacian_unit_ball(d: usize, x: &Point, y: &Point) -> f64 {
    if d == 1 {
        let (lo, hi) = if x.x() <= y.x() {
            (x.x(), y.x())
        } else {
            (y.x(), x.x())
        };
        return (lo + 1.0) * (1.0 - hi) / 2.0;
    }
    let r = x.dist(y);
    if r == 0.0 {
        return f64::INFINITY;
    }
    let r2 = r * r;
    // |x|²|y|² - 2x·y + 1 = |x-y|² + (1-|x|²)(1-|y|²)
    let num = (1.0 - x.norm_sq()) * (1.0 - y.norm_sq());
    let w = num / r2;
    if d == 2 {
        if r2 < 1e-280 {
            return (num.ln() - 2.0 * r.ln()) / (4.0 * PI);
        }
        w.ln_1p() / (4.0 * PI)
    } else {
        let df = d as f64;
        let cd = gamma(df / 2.0) / ((df - 2.0) * 2.0 * PI.powf(df / 2.0));
        // |x-y|^{2-d} (1 - (1+w)^{(2-d)/2})
        cd * r.powf(2.0 - df) * -((1.0 + w).powf((2.0 - df) / 2.0) - 1.0)
    }
}

fn fractional_unit_ball(alpha: f64, d: usize, x: &Point, y: &Point) -> f64 {
    let r = x.dist(y);
    let r2 = r * r;
    let df = d as f64;
    let kappa = ball_green_constant(alpha, d);
    if r == 0.0 {
        if alpha < df || (alpha - df).abs() < 1e-15 {
            return f64::INFINITY;
        }
        return kappa * 2.0 / (alpha - df) * (1.0 - x.norm_sq()).powf(alpha - df);
    }
    let w = (1.0 - x.norm_sq()) * (1.0 - y.norm_sq()) / r2;
    kappa * r.powf(alpha - df) * radial_integral(alpha, d, w)
}

/// ∫_0^w s^{α/2-1} (1+s)^{-d/2} ds.
pub fn radial_integral(alpha: f64, d: usize, w: f64) -> f64 {
    let a = alpha / 2.0;
    let b = d as f64 / 2.0;
    if w <= 0.0 {
        return 0.0;
    }
    if (alpha - d as f64).abs() < 1e-15 {
        return 2.0 * w.sqrt().asinh();
    }
    if w == f64::INFINITY {
        return if a < b { beta(a, b - a) } else { f64::INFINITY };
    }
    if b - a >= 0.25 {
        let full = beta(a, b - a);
        if w <= 1.0 {
            full * beta_inc_reg(a, b - a, w / (1.0 + w))
        } else {
            full * (1.0 - beta_inc_reg(b - a, a, 1.0 / (1.0 + w)))
        }
    } else {
        // near α = d the beta form cancels badly; s = v^{1/a} removes the
        // endpoint singularity instead:
        // (1/a) ∫_0^{w^a} (1 + v^{1/a})^{-b} dv
        let top = w.powf(a);
        let mut breaks = graded_toward(0.0, top.min(1.0), 0.0, 0.25, 1e-12);
        let mut edge = 1.0;
        while edge < top {
            edge = (edge * 2.0).min(top);
            breaks.push(edge);
        }
        let rule = gl16();
        rule.integrate_panels(&breaks, |v| (1.0 + v.powf(1.0 / a)).powf(-b)) / a
    }
}

/// Density of the exit distribution from a ball started at interior `x`.
///
/// Laplacian: density on the sphere |z - c| = R with respect to surface
/// measure (for d = 1, the exit probabilities at the two endpoints).
/// Fractional: density on the exterior |z - c| > R with respect to Lebesgue
/// measure.
pub fn poisson_kernel(op: &OperatorSpec, dom: &Domain, x: &Point, z: &Point) -> Result<f64> {
    check_point(dom, x)?;
    check_point(dom, z)?;
    op.validate()?;
    let (c, r) = match (op, dom.as_ball()) {
        (OperatorSpec::DivergenceForm { .. }, _) | (_, None) => {
            return Err(unsupported(op, dom));
        }
        (_, Some(b)) => b,
    };
    if !dom.contains_unchecked(x) {
        return Err(Error::NotInterior(x.coords().to_vec()));
    }
    let d = dom.dim();
    let df = d as f64;
    let xs = x.sub(&c);
    let zs = z.sub(&c);
    let dist = xs.sub(&zs).norm();
    match op {
        OperatorSpec::Laplacian => {
            if (zs.norm() - r).abs() > 1e-9 * r {
                return Err(Error::WrongSupport(z.coords().to_vec()));
            }
            Ok((r * r - xs.norm_sq()) / (sphere_area(d) * r * dist.powi(d as i32)))
        }
        OperatorSpec::Fractional { alpha } => {
            let z2 = zs.norm_sq();
            if z2 <= r * r {
                return Err(Error::WrongSupport(z.coords().to_vec()));
            }
            let pre = gamma(df / 2.0) * PI.powf(-df / 2.0 - 1.0) * (PI * alpha / 2.0).sin();
            let ratio = (r * r - xs.norm_sq()) / (z2 - r * r);
            Ok(pre * ratio.powf(alpha / 2.0) * dist.powf(-df))
        }
        OperatorSpec::DivergenceForm { .. } => unreachable!(),
    }
}

/// Lévy intensity c(α, d) |x - y|^{-d-α} of the fractional Laplacian.
pub fn jump_kernel(alpha: f64, d: usize, x: &Point, y: &Point) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    let r = x.dist(y);
    if r == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    Ok(fractional_constant(alpha, d) * r.powf(-(d as f64) - alpha))
}

/// Value of the killing density together with a flag telling whether the
/// operator has jumps at all.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Killing {
    pub value: f64,
    pub nonlocal: bool,
}

/// Rate at which the fractional process started at `x` jumps out of the
/// domain: ∫_{D^c} c(α,d) |x - y|^{-d-α} dy. Local operators return 0 with
/// `nonlocal = false`.
pub fn killing_density(op: &OperatorSpec, dom: &Domain, x: &Point) -> Result<Killing> {
    check_point(dom, x)?;
    let alpha = match op {
        OperatorSpec::Fractional { alpha } => *alpha,
        _ => {
            return Ok(Killing {
                value: 0.0,
                nonlocal: false,
            })
        }
    };
    op.validate()?;
    if !dom.contains_unchecked(x) {
        return Err(Error::NotInterior(x.coords().to_vec()));
    }
    let d = dom.dim();
    let c = fractional_constant(alpha, d);
    let value = match dom {
        Domain::Interval { a, b } => {
            c / alpha * ((x.x() - a).powf(-alpha) + (b - x.x()).powf(-alpha))
        }
        Domain::Ball { center, radius } if d == 1 => {
            let (a, b) = (center.x() - radius, center.x() + radius);
            c / alpha * ((x.x() - a).powf(-alpha) + (b - x.x()).powf(-alpha))
        }
        Domain::Ball { center, radius } => {
            let s = x.sub(center).norm();
            let r = *radius;
            // distance to the sphere along a direction at angle θ from x
            let rho = |theta: f64| {
                let ct = theta.cos();
                let st = theta.sin();
                -s * ct + (r * r - s * s * st * st).sqrt()
            };
            let gap = (r - s).max(1e-300);
            let breaks = graded_toward(0.0, PI, 0.0, 0.3, 1e-3 * gap / r);
            let rule = gl32();
            let ang = if d == 2 {
                2.0 * rule.integrate_panels(&breaks, |t| rho(t).powf(-alpha))
            } else {
                let sd = sphere_area(d - 1);
                sd * rule.integrate_panels(&breaks, |t| {
                    rho(t).powf(-alpha) * t.sin().powi(d as i32 - 2)
                })
            };
            c / alpha * ang
        }
        Domain::Rectangle { .. } => return Err(unsupported(op, dom)),
    };
    Ok(Killing {
        value,
        nonlocal: true,
    })
}

/// Sparse (or dense) SPD matrix approximating `-L` on the interior nodes of
/// a grid, with the associated killed one-step chain P = I - D^{-1} A.
pub struct DiscreteOperator {
    grid: Arc<Grid>,
    op: OperatorSpec,
    matrix: Matrix,
    diag: Vec<f64>,
    factor: OnceLock<std::result::Result<Factor, Error>>,
}

impl fmt::Debug for DiscreteOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteOperator")
            .field("op", &self.op)
            .field("nodes", &self.grid.len())
            .field("h", &self.grid.h())
            .finish()
    }
}

/// Assemble the discrete operator: 3/5/7-point stencil for local operators
/// (face-averaged coefficients for divergence form) and a lattice
/// quadrature of the jump integral, truncated at the domain diameter with
/// the tail folded into the diagonal, for the fractional Laplacian.
pub fn assemble(op: &OperatorSpec, grid: &Arc<Grid>) -> Result<DiscreteOperator> {
    op.validate()?;
    let matrix = match op {
        OperatorSpec::Laplacian => assemble_local(grid, |_, _| 1.0)?,
        OperatorSpec::DivergenceForm {
            coefficients,
            lambda,
            big_lambda,
        } => {
            let dim = grid.dim();
            let check = |node: usize, x: &Point| -> Result<[[f64; 3]; 3]> {
                let a = coefficients.eval(x);
                for i in 0..dim {
                    for j in 0..dim {
                        if i != j && a[i][j] != 0.0 {
                            return Err(Error::Unsupported(
                                "divergence-form coefficients must be diagonal".into(),
                            ));
                        }
                    }
                    let v = a[i][i];
                    if !(v >= *lambda && v <= *big_lambda) {
                        return Err(Error::CoefficientViolation {
                            node,
                            detail: format!("a[{i}][{i}] = {v} outside [{lambda}, {big_lambda}]"),
                        });
                    }
                }
                Ok(a)
            };
            let at_nodes: Vec<[[f64; 3]; 3]> = (0..grid.len())
                .map(|i| check(i, &grid.point(i)))
                .collect::<Result<_>>()?;
            let h = grid.h();
            let mut err = None;
            let m = assemble_local(grid, |i, slot| {
                let k = slot / 2;
                let own = at_nodes[i][k][k];
                let nb = grid.neighbors(i)[slot];
                let other = if nb == BOUNDARY {
                    let mut x = grid.point(i);
                    let step = if slot % 2 == 0 { -h } else { h };
                    let mut c = x.coords().to_vec();
                    c[k] += step;
                    x = Point::new(&c);
                    match check(i, &x) {
                        Ok(a) => a[k][k],
                        Err(e) => {
                            err.get_or_insert(e);
                            own
                        }
                    }
                } else {
                    at_nodes[nb as usize][k][k]
                };
                0.5 * (own + other)
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            m
        }
        OperatorSpec::Fractional { alpha } => assemble_fractional(*alpha, grid)?,
    };
    let diag = (0..matrix.n()).map(|i| matrix.diag(i)).collect();
    Ok(DiscreteOperator {
        grid: grid.clone(),
        op: op.clone(),
        matrix,
        diag,
        factor: OnceLock::new(),
    })
}

fn assemble_local(grid: &Arc<Grid>, mut face: impl FnMut(usize, usize) -> f64) -> Result<Matrix> {
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let rows = (0..grid.len())
        .map(|i| {
            let mut row = Vec::with_capacity(2 * grid.dim() + 1);
            let mut diag = 0.0;
            for (slot, &nb) in grid.neighbors(i).iter().enumerate() {
                let a = face(i, slot) * inv_h2;
                diag += a;
                if nb != BOUNDARY {
                    row.push((nb, -a));
                }
            }
            row.push((i as u32, diag));
            row
        })
        .collect();
    Ok(Matrix::Sparse(SymCsr::from_rows(rows)))
}

fn assemble_fractional(alpha: f64, grid: &Arc<Grid>) -> Result<Matrix> {
    let n = grid.len();
    if n > MAX_DENSE_NODES {
        return Err(Error::Unsupported(format!(
            "fractional operator on {n} nodes exceeds the dense limit of {MAX_DENSE_NODES}"
        )));
    }
    let d = grid.dim();
    let df = d as f64;
    let h = grid.h();
    let c = fractional_constant(alpha, d);
    let diam = grid.domain().diameter();
    // Σ_{0 < |k| ≤ diam/h} |k|^{-d-α} over lattice offsets k
    let m = (diam / h).floor() as i64;
    let rad2 = (diam / h) * (diam / h);
    let mut lattice_sum = 0.0;
    let range = -m..=m;
    let ys: Vec<i64> = if d >= 2 {
        range.clone().collect()
    } else {
        vec![0]
    };
    let zs: Vec<i64> = if d >= 3 {
        range.clone().collect()
    } else {
        vec![0]
    };
    for i in range {
        for &j in &ys {
            for &k in &zs {
                let r2 = (i * i + j * j + k * k) as f64;
                if r2 > 0.0 && r2 <= rad2 {
                    lattice_sum += r2.powf(-(df + alpha) / 2.0);
                }
            }
        }
    }
    let tail = c * sphere_area(d) * diam.powf(-alpha) / alpha;
    let diag = c * h.powf(-alpha) * lattice_sum + tail;

    let pts: Vec<Point> = (0..n).map(|i| grid.point(i)).collect();
    let hd = grid.cell_volume();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = diag;
        for j in i + 1..n {
            let v = -c * hd * pts[i].dist(&pts[j]).powf(-df - alpha);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    Ok(Matrix::Dense(DenseSym { n, a }))
}

impl DiscreteOperator {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn op(&self) -> &OperatorSpec {
        &self.op
    }

    pub(crate) fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Entry A_ij.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.matrix {
            Matrix::Sparse(m) => m.row(i).find(|&(c, _)| c == j).map_or(0.0, |e| e.1),
            Matrix::Dense(m) => m.a[i * m.n + j],
        }
    }

    /// y = A x.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.matrix.matvec(x, &mut y);
        y
    }

    /// (P w)_i = Σ_j P_ij w_j with P_ij = -A_ij / A_ii.
    pub fn transition_apply(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; w.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            self.matrix.for_each_offdiag(i, |j, v| s -= v * w[j]);
            *o = s / self.diag[i];
        }
        out
    }

    /// Row i of P as (column, probability) pairs.
    pub fn transition_row(&self, i: usize) -> Vec<(usize, f64)> {
        let mut row = Vec::new();
        self.matrix.for_each_offdiag(i, |j, v| {
            if v != 0.0 {
                row.push((j, -v / self.diag[i]));
            }
        });
        row
    }

    /// Σ_j P_ij, the probability of surviving one step from node i.
    pub fn transition_row_sum(&self, i: usize) -> f64 {
        let mut s = 0.0;
        self.matrix.for_each_offdiag(i, |_, v| s -= v);
        s / self.diag[i]
    }

    fn full_factor(&self) -> Result<&Factor> {
        let f = self.factor.get_or_init(|| {
            let nodes: Vec<usize> = (0..self.len()).collect();
            let coords: Vec<[i32; 3]> = (0..self.len())
                .map(|i| self.grid.lattice_index(i))
                .collect();
            Factor::new(&self.matrix, &nodes, &coords, self.grid.dim())
        });
        f.as_ref().map_err(Clone::clone)
    }

    /// Solve A x = b on all interior nodes.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let f = self.full_factor()?;
        let mut x = b.to_vec();
        f.solve_in_place(&mut x);
        Ok(x)
    }

    /// Factor the principal submatrix on `nodes` (sorted interior indices).
    pub(crate) fn factor_subset(&self, nodes: &[usize]) -> Result<Factor> {
        let coords: Vec<[i32; 3]> = (0..self.len())
            .map(|i| self.grid.lattice_index(i))
            .collect();
        Factor::new(&self.matrix, nodes, &coords, self.grid.dim())
    }

    /// Discrete Green function with pole at interior node `y`: the solution
    /// of A g = e_y / h^d.
    pub fn discrete_green(&self, y: usize) -> Result<GridField> {
        if y >= self.len() {
            return Err(Error::InvalidArgument(format!("node {y} out of range")));
        }
        let mut b = vec![0.0; self.len()];
        b[y] = 1.0 / self.grid.cell_volume();
        Ok(GridField::new(self.grid.clone(), self.solve(&b)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(c: &[f64]) -> Point {
        Point::new(c)
    }

    #[test]
    fn interval_green() {
        let dom = Domain::interval(0.0, 1.0).unwrap();
        let g = green(&OperatorSpec::Laplacian, &dom, &p(&[0.25]), &p(&[0.5])).unwrap();
        assert_relative_eq!(g, 0.125, epsilon = 1e-15);
        let diag = green(&OperatorSpec::Laplacian, &dom, &p(&[0.5]), &p(&[0.5])).unwrap();
        assert_relative_eq!(diag, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn disk_green_center() {
        let dom = Domain::unit_ball(2);
        let g = green(
            &OperatorSpec::Laplacian,
            &dom,
            &p(&[0.0, 0.0]),
            &p(&[0.5, 0.0]),
        )
        .unwrap();
        assert_relative_eq!(g, 2f64.ln() / (2.0 * PI), max_relative = 1e-14);
        assert_relative_eq!(g, 0.110318, epsilon = 1e-6);
        let diag = green(
            &OperatorSpec::Laplacian,
            &dom,
            &p(&[0.1, 0.2]),
            &p(&[0.1, 0.2]),
        )
        .unwrap();
        assert!(diag.is_infinite());
    }

    #[test]
    fn ball3_green_center() {
        let dom = Domain::unit_ball(3);
        let g = green(
            &OperatorSpec::Laplacian,
            &dom,
            &p(&[0.0, 0.0, 0.0]),
            &p(&[0.0, 0.5, 0.0]),
        )
        .unwrap();
        assert_relative_eq!(g, (1.0 / 0.5 - 1.0) / (4.0 * PI), max_relative = 1e-14);
    }

    #[test]
    fn divergence_form_has_no_closed_form() {
        let op = OperatorSpec::DivergenceForm {
            coefficients: CoefficientField::identity(1),
            lambda: 1.0,
            big_lambda: 1.0,
        };
        let dom = Domain::interval(0.0, 1.0).unwrap();
        assert!(matches!(
            green(&op, &dom, &p(&[0.2]), &p(&[0.3])),
            Err(Error::UnsupportedKernel(_))
        ));
    }

    #[test]
    fn fractional_constant_reference() {
        assert_relative_eq!(
            fractional_constant(0.5, 1),
            0.199_471_140_200_716_38,
            max_relative = 1e-13
        );
        // α = 1, d = 1: Cauchy process, c = 1/π
        assert_relative_eq!(fractional_constant(1.0, 1), 1.0 / PI, max_relative = 1e-13);
    }

    #[test]
    fn fractional_diagonal_rule() {
        let dom = Domain::interval(-1.0, 1.0).unwrap();
        let x = p(&[0.3]);
        let polar = green(&OperatorSpec::Fractional { alpha: 0.5 }, &dom, &x, &x).unwrap();
        assert!(polar.is_infinite());
        let cauchy = green(&OperatorSpec::Fractional { alpha: 1.0 }, &dom, &x, &x).unwrap();
        assert!(cauchy.is_infinite());
        let op = OperatorSpec::Fractional { alpha: 1.5 };
        let diag = green(&op, &dom, &x, &x).unwrap();
        assert!(diag.is_finite());
        let near = green(&op, &dom, &x, &p(&[0.3 + 1e-7])).unwrap();
        assert_relative_eq!(diag, near, max_relative = 1e-3);
    }

    #[test]
    fn fractional_branches_agree_across_alpha() {
        // the three evaluation branches are continuous in α
        let dom = Domain::interval(-1.0, 1.0).unwrap();
        let (x, y) = (p(&[0.1]), p(&[-0.4]));
        let below = green(
            &OperatorSpec::Fractional { alpha: 1.0 - 1e-9 },
            &dom,
            &x,
            &y,
        )
        .unwrap();
        let at = green(&OperatorSpec::Fractional { alpha: 1.0 }, &dom, &x, &y).unwrap();
        let above = green(
            &OperatorSpec::Fractional { alpha: 1.0 + 1e-9 },
            &dom,
            &x,
            &y,
        )
        .unwrap();
        assert_relative_eq!(below, at, max_relative = 1e-7);
        assert_relative_eq!(above, at, max_relative = 1e-7);
    }

    #[test]
    fn poisson_kernel_center_uniform() {
        let dom = Domain::unit_ball(2);
        let v = poisson_kernel(
            &OperatorSpec::Laplacian,
            &dom,
            &p(&[0.0, 0.0]),
            &p(&[0.6, 0.8]),
        )
        .unwrap();
        assert_relative_eq!(v, 1.0 / (2.0 * PI), max_relative = 1e-14);
        assert!(matches!(
            poisson_kernel(
                &OperatorSpec::Laplacian,
                &dom,
                &p(&[0.0, 0.0]),
                &p(&[0.5, 0.0])
            ),
            Err(Error::WrongSupport(_))
        ));
        let frac = OperatorSpec::Fractional { alpha: 0.5 };
        assert!(matches!(
            poisson_kernel(&frac, &dom, &p(&[0.0, 0.0]), &p(&[0.5, 0.0])),
            Err(Error::WrongSupport(_))
        ));
    }

    #[test]
    fn killing_interval_center() {
        let dom = Domain::interval(-1.0, 1.0).unwrap();
        let op = OperatorSpec::Fractional { alpha: 0.5 };
        let k = killing_density(&op, &dom, &p(&[0.0])).unwrap();
        assert_relative_eq!(
            k.value,
            2.0 * fractional_constant(0.5, 1) / 0.5,
            max_relative = 1e-14
        );
        let local = killing_density(&OperatorSpec::Laplacian, &dom, &p(&[0.0])).unwrap();
        assert_eq!(
            local,
            Killing {
                value: 0.0,
                nonlocal: false
            }
        );
    }

    #[test]
    fn killing_disk_center() {
        // at the center ρ ≡ R, so the integral is c · 2π R^{-α} / α
        let dom = Domain::unit_ball(2);
        let op = OperatorSpec::Fractional { alpha: 0.7 };
        let k = killing_density(&op, &dom, &p(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(
            k.value,
            fractional_constant(0.7, 2) * 2.0 * PI / 0.7,
            max_relative = 1e-12
        );
    }

    #[test]
    fn laplacian_stencil_1d() {
        let dom = Domain::interval(0.0, 1.0).unwrap();
        let grid = Grid::build(&dom, 0.25).unwrap();
        let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
        assert_eq!(dop.transition_row(1), vec![(0, 0.5), (2, 0.5)]);
        assert_relative_eq!(dop.transition_row_sum(1), 1.0);
        assert_relative_eq!(dop.transition_row_sum(0), 0.5);
    }

    #[test]
    fn discrete_green_1d_exact() {
        let dom = Domain::interval(0.0, 1.0).unwrap();
        let grid = Grid::build(&dom, 0.25).unwrap();
        let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
        let g = dop.discrete_green(1).unwrap();
        assert_relative_eq!(g.values()[0], 0.125, epsilon = 1e-14);
    }

    #[test]
    fn fractional_operator_substochastic() {
        let dom = Domain::interval(-1.0, 1.0).unwrap();
        let grid = Grid::build(&dom, 1.0 / 16.0).unwrap();
        let dop = assemble(&OperatorSpec::Fractional { alpha: 0.5 }, &grid).unwrap();
        for i in 0..dop.len() {
            let s = dop.transition_row_sum(i);
            assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn divergence_form_rejects_bad_coefficients() {
        let dom = Domain::unit_ball(2);
        let grid = Grid::build(&dom, 0.25).unwrap();
        let off = OperatorSpec::DivergenceForm {
            coefficients: CoefficientField::Constant {
                matrix: vec![vec![1.0, 0.2], vec![0.2, 1.0]],
            },
            lambda: 0.5,
            big_lambda: 2.0,
        };
        assert!(matches!(assemble(&off, &grid), Err(Error::Unsupported(_))));
        let weak = OperatorSpec::DivergenceForm {
            coefficients: CoefficientField::Sinusoidal {
                base: 1.0,
                amplitude: 0.9,
                wavenumber: 1.0,
            },
            lambda: 0.5,
            big_lambda: 2.0,
        };
        assert!(matches!(
            assemble(&weak, &grid),
            Err(Error::CoefficientViolation { .. })
        ));
    }
}
