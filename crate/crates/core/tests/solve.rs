use std::f64::consts::PI;

use proptest::prelude::*;
use reduite::geometry::{Domain, Grid, GridField, Point};
use reduite::kernels::{assemble, OperatorSpec};
use reduite::measures::{decompose, total_variation, Atom, Density, MeasureData, Sign};
use reduite::solve::{
    constant_potential, integral_solution, integral_solution_at, potential, SolveMethod,
};

fn disk_atoms() -> impl Strategy<Value = Vec<Atom>> {
    prop::collection::vec(
        (0.0f64..0.8, 0.0f64..std::f64::consts::TAU, -2.0f64..2.0),
        0..5,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(r, t, w)| Atom::new(Point::new(&[r * t.cos(), r * t.sin()]), w))
            .collect()
    })
}

fn node_density(grid: &Grid, vals: &[f64]) -> Density {
    Density::Nodes {
        h: grid.h(),
        values: (0..grid.len()).map(|i| vals[i % vals.len()]).collect(),
    }
}

proptest! {
    #[test]
    fn decompose_recombines_and_is_idempotent(atoms in disk_atoms(), c in -1.0f64..1.0, which in 0usize..3) {
        let dom = Domain::unit_ball(2);
        let op = [
            OperatorSpec::Laplacian,
            OperatorSpec::Fractional { alpha: 1.0 },
            OperatorSpec::Fractional { alpha: 1.9 },
        ][which]
            .clone();
        let mu = MeasureData { atoms, density: Some(Density::Constant { value: c }) };
        let dec = decompose(&mu, &op, &dom);
        prop_assert_eq!(dec.recombine(), mu.clone());
        let again = decompose(&dec.diffuse, &op, &dom);
        prop_assert_eq!(&again.diffuse, &dec.diffuse);
        prop_assert!(again.concentrated.is_zero());
        let again = decompose(&dec.concentrated, &op, &dom);
        prop_assert_eq!(&again.concentrated, &dec.concentrated);
        prop_assert!(again.diffuse.atoms.is_empty());
        // in 2D points are polar for every α ≤ 2
        prop_assert_eq!(dec.concentrated.atoms.len(), mu.atoms.len());
    }

    #[test]
    fn jordan_parts_are_singular_and_add_up(atoms in disk_atoms(), c in -1.0f64..1.0) {
        let dom = Domain::unit_ball(2);
        let mu = MeasureData { atoms, density: Some(Density::Constant { value: c }) };
        let pos = mu.part(Sign::Positive);
        let neg = mu.part(Sign::Negative);
        for a in &pos.atoms {
            prop_assert!(a.weight > 0.0);
            prop_assert!(neg.atoms.iter().all(|b| b.point != a.point));
        }
        let tv = total_variation(&mu, &dom).unwrap();
        let tv_parts = total_variation(&pos, &dom).unwrap() + total_variation(&neg, &dom).unwrap();
        prop_assert!((tv - tv_parts).abs() < 1e-12 * tv.max(1.0));
        let x = Point::new(&[0.1, 0.2]);
        let d = mu.density.as_ref().unwrap().eval(&x).unwrap();
        let dp = pos.density.as_ref().unwrap().eval(&x).unwrap();
        let dn = neg.density.as_ref().unwrap().eval(&x).unwrap();
        prop_assert_eq!(dp - dn, d);
        prop_assert!(dp * dn == 0.0);
    }

    #[test]
    fn closed_form_solution_is_linear(
        a1 in disk_atoms(),
        a2 in disk_atoms(),
        c1 in -1.0f64..1.0,
        c2 in -1.0f64..1.0,
        s in -3.0f64..3.0,
    ) {
        let dom = Domain::unit_ball(2);
        let m1 = MeasureData { atoms: a1.clone(), density: Some(Density::Constant { value: c1 }) };
        let m2 = MeasureData { atoms: a2.clone(), density: Some(Density::Constant { value: c2 }) };
        let mut atoms = a1.iter().map(|a| Atom::new(a.point, s * a.weight)).collect::<Vec<_>>();
        atoms.extend(a2);
        let sum = MeasureData { atoms, density: Some(Density::Constant { value: s * c1 + c2 }) };
        let pts = [Point::new(&[0.85, 0.1]), Point::new(&[-0.3, 0.9 * 0.5]), Point::new(&[0.0, -0.88])];
        let op = OperatorSpec::Laplacian;
        let u1 = integral_solution_at(&op, &dom, &m1, &pts).unwrap();
        let u2 = integral_solution_at(&op, &dom, &m2, &pts).unwrap();
        let us = integral_solution_at(&op, &dom, &sum, &pts).unwrap();
        for i in 0..pts.len() {
            let expect = s * u1[i] + u2[i];
            prop_assert!((us[i] - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn discrete_solutions_are_positive_linear_and_dominated(
        vals in prop::collection::vec(-1.0f64..1.0, 1..40),
        extra in prop::collection::vec(0.0f64..1.0, 1..40),
        s in -2.0f64..2.0,
    ) {
        let dom = Domain::unit_ball(2);
        let grid = Grid::build(&dom, 1.0 / 16.0).unwrap();
        let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
        let f = node_density(&grid, &vals);
        let g = node_density(&grid, &extra);
        let solve = |d: Density| {
            integral_solution(&dop, &MeasureData::with_density(d), SolveMethod::Discrete).unwrap().field()
        };
        let uf = solve(f.clone());
        let ug = solve(g.clone());
        // linearity
        let (Density::Nodes { values: fv, .. }, Density::Nodes { values: gv, .. }) = (&f, &g) else { unreachable!() };
        let comb: Vec<f64> = fv.iter().zip(gv).map(|(a, b)| s * a + b).collect();
        let uc = solve(Density::Nodes { h: grid.h(), values: comb });
        for i in 0..grid.len() {
            let expect = s * uf.values()[i] + ug.values()[i];
            prop_assert!((uc.values()[i] - expect).abs() < 1e-10);
        }
        // positivity
        prop_assert!(ug.values().iter().all(|v| *v >= -1e-14));
        // domination: |f| ≤ ν with ν = |f| + g
        let nu: Vec<f64> = fv.iter().zip(gv).map(|(a, b)| a.abs() + b).collect();
        let unu = solve(Density::Nodes { h: grid.h(), values: nu });
        for i in 0..grid.len() {
            prop_assert!(uf.values()[i].abs() <= unu.values()[i] + 1e-12);
        }
        // ‖R 1‖∞ ‖f‖∞ bound
        let one = solve(Density::Constant { value: 1.0 });
        let fmax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(uf.max_abs() <= one.max_abs() * fmax + 1e-12);
    }
}

#[test]
fn disk_potential_of_uniform_probability() {
    let dom = Domain::unit_ball(2);
    let v = constant_potential(&OperatorSpec::Laplacian, &dom, &Point::origin(2)).unwrap() / PI;
    assert!((v - 1.0 / (4.0 * PI)).abs() < 1e-15);
    let grid = Grid::build(&dom, 1.0 / 64.0).unwrap();
    let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
    let rho = GridField::from_fn(&grid, |_| 1.0 / PI);
    let u = potential(&dop, &rho).unwrap();
    let c = u.values()[grid.nearest_node(&Point::origin(2)).unwrap()];
    assert!((c - 1.0 / (4.0 * PI)).abs() < 2e-3, "{c}");
}

#[test]
fn interval_potential_of_one_is_exact_at_nodes() {
    let dom = Domain::interval(0.0, 1.0).unwrap();
    let grid = Grid::build(&dom, 1.0 / 64.0).unwrap();
    let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
    let u = potential(&dop, &GridField::from_fn(&grid, |_| 1.0)).unwrap();
    for i in 0..grid.len() {
        let x = grid.point(i).x();
        assert!((u.values()[i] - x * (1.0 - x) / 2.0).abs() < 1e-12);
    }
    let cf = constant_potential(&OperatorSpec::Laplacian, &dom, &Point::scalar(0.3)).unwrap();
    assert!((cf - 0.3 * 0.7 / 2.0).abs() < 1e-15);
}

#[test]
fn discrete_and_closed_forms_agree_for_atoms_in_1d() {
    // 1D stencil Green functions are exact at the nodes
    let dom = Domain::interval(0.0, 1.0).unwrap();
    let grid = Grid::build(&dom, 1.0 / 32.0).unwrap();
    let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
    let mu = MeasureData {
        atoms: vec![
            Atom::new(Point::scalar(0.25), 2.0),
            Atom::new(Point::scalar(0.625), -1.0),
        ],
        density: None,
    };
    let disc = integral_solution(&dop, &mu, SolveMethod::Discrete)
        .unwrap()
        .field();
    let cf = integral_solution(&dop, &mu, SolveMethod::ClosedForm)
        .unwrap()
        .field();
    for (a, b) in disc.values().iter().zip(cf.values()) {
        assert!((a - b).abs() < 1e-13);
    }
}

#[test]
fn gaussian_density_grid_solution_converges_to_quadrature() {
    let dom = Domain::unit_ball(2);
    let f = Density::GaussianBump {
        center: Point::new(&[0.2, 0.0]),
        amplitude: 3.0,
        width: 0.2,
    };
    let mu = MeasureData::with_density(f);
    let x = Point::new(&[0.25, 0.0]);
    let exact = integral_solution_at(&OperatorSpec::Laplacian, &dom, &mu, &[x]).unwrap()[0];
    let mut errs = vec![];
    for k in 4..=6 {
        let grid = Grid::build(&dom, 2f64.powi(-k)).unwrap();
        let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
        let u = integral_solution(&dop, &mu, SolveMethod::Auto)
            .unwrap()
            .field();
        errs.push((u.interpolate(&x) - exact).abs());
    }
    assert!(errs[2] < errs[0], "{errs:?}");
    assert!(errs[2] < 0.02 * exact, "{errs:?} vs {exact}");
}

#[test]
fn solution_is_infinite_exactly_at_concentrated_atoms() {
    let dom = Domain::unit_ball(2);
    let grid = Grid::build(&dom, 1.0 / 16.0).unwrap();
    let dop = assemble(&OperatorSpec::Laplacian, &grid).unwrap();
    let a = Point::new(&[0.25, 0.0]);
    let sol = integral_solution(&dop, &MeasureData::dirac(a, 1.0), SolveMethod::Auto).unwrap();
    assert!(sol.has_concentrated_part());
    assert_eq!(sol.eval(&a).unwrap(), f64::INFINITY);
    assert!(sol.eval(&Point::new(&[0.25, 0.01])).unwrap().is_finite());
}
