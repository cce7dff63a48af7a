use std::f64::consts::PI;

use proptest::prelude::*;
use reduite::geometry::{Domain, Grid, Point};
use reduite::kernels::{
    assemble, fractional_constant, green, jump_kernel, killing_density, poisson_kernel,
    OperatorSpec,
};
use reduite::quadrature::{gl32, graded_toward, tanh_sinh};

fn interior_point(dim: usize, raw: &[f64]) -> Point {
    // raw in [-1, 1]^3, squeezed into the unit ball
    let p = Point::new(&raw[..dim]);
    let r = p.norm();
    if r > 0.95 {
        p.scale(0.95 / r)
    } else {
        p
    }
}

fn ops() -> Vec<OperatorSpec> {
    vec![
        OperatorSpec::Laplacian,
        OperatorSpec::Fractional { alpha: 0.5 },
        OperatorSpec::Fractional { alpha: 1.0 },
        OperatorSpec::Fractional { alpha: 1.5 },
    ]
}

proptest! {
    #[test]
    fn green_is_symmetric_and_positive(
        dim in 1usize..=3,
        a in prop::array::uniform3(-1.0f64..1.0),
        b in prop::array::uniform3(-1.0f64..1.0),
        which in 0usize..4,
    ) {
        let dom = Domain::unit_ball(dim);
        let x = interior_point(dim, &a);
        let y = interior_point(dim, &b);
        let op = &ops()[which];
        if let OperatorSpec::Fractional { alpha } = op {
            if *alpha >= dim as f64 && dim > 1 {
                return Ok(());
            }
        }
        prop_assume!(x.dist(&y) > 1e-9);
        let gxy = green(op, &dom, &x, &y).unwrap();
        let gyx = green(op, &dom, &y, &x).unwrap();
        prop_assert_eq!(gxy, gyx);
        prop_assert!(gxy > 0.0);
    }

    #[test]
    fn jump_kernel_symmetry_and_homogeneity(
        alpha in 0.1f64..1.9,
        dim in 1usize..=3,
        a in prop::array::uniform3(-1.0f64..1.0),
        b in prop::array::uniform3(-1.0f64..1.0),
        s in 0.1f64..10.0,
    ) {
        let x = Point::new(&a[..dim]);
        let y = Point::new(&b[..dim]);
        prop_assume!(x.dist(&y) > 1e-6);
        let j = jump_kernel(alpha, dim, &x, &y).unwrap();
        prop_assert_eq!(j, jump_kernel(alpha, dim, &y, &x).unwrap());
        let js = jump_kernel(alpha, dim, &x.scale(s), &y.scale(s)).unwrap();
        let expect = s.powf(-(dim as f64) - alpha) * j;
        prop_assert!((js - expect).abs() <= 1e-12 * expect);
    }
}

#[test]
fn fractional_constant_matches_reflection_formula() {
    // Γ(-1/4) = -4 Γ(3/4), so c(1/2, 1) = √2 / (4 √π)
    let expect = 2f64.sqrt() / (4.0 * PI.sqrt());
    assert!((fractional_constant(0.5, 1) - expect).abs() < 1e-14);
    // α = 1, d = 1: c = Γ(1) · 2 / (√π · 2 √π) = 1/π
    assert!((fractional_constant(1.0, 1) - 1.0 / PI).abs() < 1e-14);
    // α = 1, d = 2: c = 2 Γ(3/2) / (π · 2√π) = 1 / (2π)
    assert!((fractional_constant(1.0, 2) - 1.0 / (2.0 * PI)).abs() < 1e-14);
}

#[test]
fn interval_green_matches_piecewise_linear() {
    let dom = Domain::interval(0.0, 1.0).unwrap();
    for &(x, y) in &[(0.25, 0.5), (0.1, 0.9), (0.7, 0.3)] {
        let g = green(
            &OperatorSpec::Laplacian,
            &dom,
            &Point::scalar(x),
            &Point::scalar(y),
        )
        .unwrap();
        let expect = f64::min(x, y) * (1.0 - f64::max(x, y));
        assert!((g - expect).abs() < 1e-15);
    }
}

#[test]
fn poisson_kernel_integrates_to_one_on_circle() {
    let dom = Domain::unit_ball(2);
    for &(x0, x1) in &[(0.0, 0.0), (0.3, -0.2), (0.6, 0.5)] {
        let x = Point::new(&[x0, x1]);
        let m = 4096;
        let s: f64 = (0..m)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / m as f64;
                poisson_kernel(
                    &OperatorSpec::Laplacian,
                    &dom,
                    &x,
                    &Point::new(&[t.cos(), t.sin()]),
                )
                .unwrap()
            })
            .sum::<f64>()
            * 2.0
            * PI
            / m as f64;
        assert!((s - 1.0).abs() < 1e-6, "x = {x:?}: {s}");
    }
}

#[test]
fn poisson_kernel_integrates_to_one_on_sphere() {
    let dom = Domain::unit_ball(3);
    let x = Point::new(&[0.2, -0.3, 0.4]);
    let gl = gl32();
    let mut s = 0.0;
    let nphi = 256;
    for (c, wc) in gl.points(-1.0, 1.0) {
        let st = (1.0 - c * c).sqrt();
        for k in 0..nphi {
            let phi = 2.0 * PI * k as f64 / nphi as f64;
            let z = Point::new(&[st * phi.cos(), st * phi.sin(), c]);
            s += wc * poisson_kernel(&OperatorSpec::Laplacian, &dom, &x, &z).unwrap() * 2.0 * PI
                / nphi as f64;
        }
    }
    assert!((s - 1.0).abs() < 1e-6, "{s}");
}

#[test]
fn fractional_poisson_kernel_is_a_probability() {
    let dom = Domain::interval(-1.0, 1.0).unwrap();
    for &alpha in &[0.5, 1.0, 1.5] {
        let op = OperatorSpec::Fractional { alpha };
        for &x in &[0.0, 0.4, -0.8] {
            let px = Point::scalar(x);
            let mut total = 0.0;
            let pre = PI.powf(-1.5) * PI.sqrt() * (PI * alpha / 2.0).sin();
            let s0: f64 = 1e-8;
            for side in [-1.0f64, 1.0] {
                // z = side (1 + s0 + t / (1 - t)), t in (0, 1)
                total += tanh_sinh(0.0, 1.0, 1e-12, |t, _, dt| {
                    let z = side * (1.0 + s0 + t / dt);
                    poisson_kernel(&op, &dom, &px, &Point::scalar(z)).unwrap() / (dt * dt)
                });
                // leading order on (1, 1 + s0): pre (1 - x²)^{α/2} (2s)^{-α/2} / |x - side|
                let a = pre * (1.0 - x * x).powf(alpha / 2.0) / (x - side).abs();
                total +=
                    a * 2f64.powf(-alpha / 2.0) * s0.powf(1.0 - alpha / 2.0) / (1.0 - alpha / 2.0);
            }
            assert!((total - 1.0).abs() < 1e-6, "alpha {alpha}, x {x}: {total}");
        }
    }
}

#[test]
fn killing_density_center_value_and_boundary_blowup() {
    let dom = Domain::interval(-1.0, 1.0).unwrap();
    let alpha = 0.5;
    let op = OperatorSpec::Fractional { alpha };
    let k0 = killing_density(&op, &dom, &Point::scalar(0.0)).unwrap();
    assert!(k0.nonlocal);
    let expect = 2.0 * fractional_constant(alpha, 1) / alpha;
    assert!((k0.value - expect).abs() < 1e-12 * expect);
    let mut prev = k0.value;
    for &x in &[0.5, 0.9, 0.99, 0.999, 0.9999] {
        let k = killing_density(&op, &dom, &Point::scalar(x)).unwrap().value;
        assert!(k > prev);
        prev = k;
    }
    assert!(prev > 10.0 * k0.value);
    let local = killing_density(&OperatorSpec::Laplacian, &dom, &Point::scalar(0.3)).unwrap();
    assert!(!local.nonlocal);
    assert_eq!(local.value, 0.0);
}

#[test]
fn killing_density_of_disk_at_center() {
    // ∫_{|y|>1} c |y|^{-2-α} dy = 2π c / α
    let dom = Domain::unit_ball(2);
    let alpha = 1.2;
    let k = killing_density(&OperatorSpec::Fractional { alpha }, &dom, &Point::origin(2)).unwrap();
    let expect = 2.0 * PI * fractional_constant(alpha, 2) / alpha;
    assert!(
        (k.value - expect).abs() < 1e-8 * expect,
        "{} vs {expect}",
        k.value
    );
}

fn bump(x: f64) -> f64 {
    let s = 1.0 - 4.0 * x * x;
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

/// (-Δ)^{α/2} of the bump by direct quadrature of the singular integral,
/// with the second-order Taylor term on (0, eps).
fn frac_lap_bump(alpha: f64, x: f64) -> f64 {
    let c = fractional_constant(alpha, 1);
    let f = |t: f64| (2.0 * bump(x) - bump(x + t) - bump(x - t)) / t.powf(1.0 + alpha);
    let tmax = 0.5 + x.abs() + 0.5;
    let eps: f64 = 1e-4;
    let d2 = (bump(x + 1e-4) - 2.0 * bump(x) + bump(x - 1e-4)) / 1e-8;
    let head = -d2 * eps.powf(2.0 - alpha) / (2.0 - alpha);
    let mut br = graded_toward(eps, tmax, eps, 0.5, 1e-6);
    br.extend(
        [(x - 0.5).abs(), (x + 0.5).abs()]
            .into_iter()
            .filter(|t| *t > 0.0 && *t < tmax),
    );
    br.sort_by(f64::total_cmp);
    br.dedup();
    let inner = gl32().integrate_panels(&br, f);
    c * (head + inner + 2.0 * bump(x) * tmax.powf(-alpha) / alpha)
}

#[test]
fn fractional_green_inverts_the_operator() {
    let dom = Domain::interval(-1.0, 1.0).unwrap();
    for &alpha in &[0.5, 1.5] {
        let op = OperatorSpec::Fractional { alpha };
        for &y in &[0.0, 0.2] {
            let py = Point::scalar(y);
            let br = {
                let mut left = graded_toward(-1.0, y, y, 0.5, 1e-10);
                let right = graded_toward(y, 1.0, y, 0.5, 1e-10);
                left.extend(right);
                left.extend([-0.5, 0.5]);
                left.sort_by(f64::total_cmp);
                left.dedup();
                left
            };
            let v = gl32().integrate_panels(&br, |x| {
                green(&op, &dom, &Point::scalar(x), &py).unwrap() * frac_lap_bump(alpha, x)
            });
            let expect = bump(y);
            assert!(
                (v - expect).abs() < 1e-6,
                "alpha {alpha}, y {y}: {v} vs {expect}"
            );
        }
    }
}

#[test]
fn transition_rows_are_substochastic() {
    let coeff = reduite::kernels::CoefficientField::Sinusoidal {
        base: 1.0,
        amplitude: 0.4,
        wavenumber: 3.0,
    };
    let cases: Vec<(OperatorSpec, Domain, f64)> = vec![
        (
            OperatorSpec::Laplacian,
            Domain::interval(0.0, 1.0).unwrap(),
            1.0 / 32.0,
        ),
        (OperatorSpec::Laplacian, Domain::unit_ball(2), 1.0 / 16.0),
        (OperatorSpec::Laplacian, Domain::unit_ball(3), 1.0 / 6.0),
        (
            OperatorSpec::DivergenceForm {
                coefficients: coeff,
                lambda: 0.6,
                big_lambda: 1.4,
            },
            Domain::unit_ball(2),
            1.0 / 16.0,
        ),
        (
            OperatorSpec::Fractional { alpha: 0.7 },
            Domain::interval(-1.0, 1.0).unwrap(),
            1.0 / 32.0,
        ),
        (
            OperatorSpec::Fractional { alpha: 1.3 },
            Domain::unit_ball(2),
            1.0 / 8.0,
        ),
    ];
    for (op, dom, h) in cases {
        let grid = Grid::build(&dom, h).unwrap();
        let dop = assemble(&op, &grid).unwrap();
        let mut some_leak = false;
        for i in 0..dop.len() {
            let row = dop.transition_row(i);
            assert!(row.iter().all(|(_, p)| *p >= 0.0), "{}", op.name());
            let s = dop.transition_row_sum(i);
            assert!(
                (0.0..=1.0 + 1e-12).contains(&s),
                "{}: row sum {s}",
                op.name()
            );
            some_leak |= s < 1.0 - 1e-12;
        }
        assert!(some_leak, "{}: chain never killed", op.name());
    }
}

#[test]
fn interval_stencil_moves_to_neighbors_with_probability_half() {
    let grid = Grid::build(&Domain::interval(0.0, 1.0).unwrap(), 0.125).unwrap();
    let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
    for i in 0..dop.len() {
        for (_, p) in dop.transition_row(i) {
            assert_eq!(p, 0.5);
        }
    }
}

#[test]
fn discrete_green_is_symmetric_and_positive() {
    for (op, h) in [
        (OperatorSpec::Laplacian, 1.0 / 16.0),
        (OperatorSpec::Fractional { alpha: 1.0 }, 1.0 / 8.0),
    ] {
        let grid = Grid::build(&Domain::unit_ball(2), h).unwrap();
        let dop = assemble(&op, &grid).unwrap();
        let ids = [0, dop.len() / 3, dop.len() / 2, dop.len() - 1];
        let cols: Vec<_> = ids
            .iter()
            .map(|&j| dop.discrete_green(j).unwrap())
            .collect();
        for (a, ca) in ids.iter().zip(&cols) {
            assert!(ca.values().iter().all(|v| *v > 0.0));
            for (b, cb) in ids.iter().zip(&cols) {
                let (x, y) = (ca.values()[*b], cb.values()[*a]);
                assert!(
                    (x - y).abs() <= 1e-10 * x.abs().max(1.0),
                    "{}: {x} vs {y}",
                    op.name()
                );
            }
        }
    }
}

#[test]
fn discrete_green_solves_against_scaled_unit_vector() {
    let grid = Grid::build(&Domain::unit_ball(2), 1.0 / 16.0).unwrap();
    let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
    let j = dop.len() / 2;
    let g = dop.discrete_green(j).unwrap();
    let r = dop.apply(g.values());
    let scale = 1.0 / grid.cell_volume();
    for (i, v) in r.iter().enumerate() {
        let e = if i == j { scale } else { 0.0 };
        assert!((v - e).abs() < 1e-8 * scale);
    }
}

#[test]
fn interval_discrete_green_converges() {
    let dom = Domain::interval(0.0, 1.0).unwrap();
    let (x, y) = (0.25, 0.5);
    let exact = x * (1.0 - y);
    for k in 7..=10 {
        let h = 2f64.powi(-k);
        let grid = Grid::build(&dom, h).unwrap();
        let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
        let jy = grid.nearest_node(&Point::scalar(y)).unwrap();
        let jx = grid.nearest_node(&Point::scalar(x)).unwrap();
        let g = dop.discrete_green(jy).unwrap();
        assert!((g.values()[jx] - exact).abs() < 5e-4);
    }
}

#[test]
fn disk_discrete_green_converges() {
    let dom = Domain::unit_ball(2);
    let x = Point::new(&[0.5, 0.0]);
    let y = Point::origin(2);
    let exact = green(&OperatorSpec::Laplacian, &dom, &x, &y).unwrap();
    let mut errs = vec![];
    for k in 4..=7 {
        let grid = Grid::build(&dom, 2f64.powi(-k)).unwrap();
        let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
        let g = dop.discrete_green(grid.nearest_node(&y).unwrap()).unwrap();
        errs.push((g.values()[grid.nearest_node(&x).unwrap()] - exact).abs());
    }
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[3] < 5e-3, "{errs:?}");
}
