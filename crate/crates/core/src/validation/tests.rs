use super::*;
use crate::Vec2;

#[test]
fn reference_constants_are_verbatim() {
    let sol = AnalyticSolution::reference();
    assert_eq!(sol.m, 5);
    assert_eq!((sol.rho_i, sol.rho_e), (4.0, 5.0));
    assert_eq!((sol.k_i, sol.k_e), (10.0, 1.0));
    assert_eq!(sol.c0.re, -6.3e-9);
    assert_eq!(sol.c0.im, 40.394_910_05);
    assert_eq!(sol.c1.re, 1.301_459_94);
    assert_eq!(sol.c1.im, 0.325_482_825);
    assert_eq!(sol.c2.re, 1.5e-11);
    assert_eq!(sol.c2.im, -1.301_459_935);
    // the complex combination is real up to the published rounding
    assert!(sol.imaginary_defect() < 1e-8);
}

#[test]
fn angular_nodes_vanish() {
    let sol = AnalyticSolution::reference();
    let theta = std::f64::consts::PI / (2.0 * sol.m as f64);
    for rho in [0.5, 2.0, 4.5] {
        let p = rho * Vec2::new(theta.cos(), theta.sin());
        let (u, _) = sol.eval(p).unwrap();
        assert!(u.abs() < 1e-12 * (1.0 + rho), "u({rho}, node) = {u}");
    }
}

#[test]
fn neumann_datum_is_cos_5_theta() {
    let sol = AnalyticSolution::reference();
    for i in 0..48 {
        let a = 2.0 * std::f64::consts::PI * i as f64 / 48.0;
        let dir = Vec2::new(a.cos(), a.sin());
        let p = sol.rho_e * dir * (1.0 - 1e-12);
        let (_, grad) = sol.eval(p).unwrap();
        let flux = sol.k_e * grad.dot(&dir);
        let expect = (sol.m as f64 * a).cos();
        assert!(
            (flux - expect).abs() < 1e-6,
            "angle {a}: k du/drho = {flux} vs {expect}"
        );
    }
}

#[test]
fn interface_transmission_conditions() {
    let sol = AnalyticSolution::reference();
    let eps = 1e-9;
    for i in 0..64 {
        let a = 2.0 * std::f64::consts::PI * i as f64 / 64.0;
        let dir = Vec2::new(a.cos(), a.sin());
        let p_in = (sol.rho_i - eps) * dir;
        let p_out = (sol.rho_i + eps) * dir;
        let (u_in, g_in) = sol.eval(p_in).unwrap();
        let (u_out, g_out) = sol.eval(p_out).unwrap();
        assert!((u_in - u_out).abs() < 1e-8, "potential jump at angle {a}");
        let f_in = sol.k_i * g_in.dot(&dir);
        let f_out = sol.k_e * g_out.dot(&dir);
        assert!((f_in - f_out).abs() < 1e-8, "flux jump at angle {a}");
    }
}

#[test]
fn satisfies_the_pde_by_finite_differences() {
    // -k lap(u) + u = 0 away from the interface
    let sol = AnalyticSolution::reference();
    let h = 2e-4;
    for &(x, y) in &[(1.2, 0.7), (2.5, -1.0), (-3.1, 2.9), (0.3, 4.6)] {
        let p = Vec2::new(x, y);
        let k = sol.conductivity_at(p);
        let u = |q: Vec2| sol.eval(q).unwrap().0;
        let lap = (u(p + Vec2::new(h, 0.0))
            + u(p - Vec2::new(h, 0.0))
            + u(p + Vec2::new(0.0, h))
            + u(p - Vec2::new(0.0, h))
            - 4.0 * u(p))
            / (h * h);
        let residual = -k * lap + u(p);
        let scale = u(p).abs() + (k * lap).abs() + 1e-3;
        assert!(
            residual.abs() / scale < 1e-6,
            "pde residual {residual:.3e} at ({x}, {y})"
        );
    }
}

#[test]
fn points_outside_the_disk_are_rejected() {
    let sol = AnalyticSolution::reference();
    assert!(sol.eval(Vec2::new(5.1, 0.0)).is_err());
    assert!(sol.eval(Vec2::new(0.0, 0.0)).is_ok());
}

#[test]
fn effectivity_definition_and_guard() {
    assert_eq!(effectivity(2.0, -2.0).unwrap(), 1.0);
    assert_eq!(effectivity(3.0, 2.0).unwrap(), 1.5);
    assert!(effectivity(1.0, 1e-16).is_err());
}

#[test]
fn exact_error_vanishes_for_zero_direction() {
    let sol = std::sync::Arc::new(AnalyticSolution::reference());
    let mesh = std::sync::Arc::new(validation_mesh(&sol, 1.1).unwrap());
    let case = crate::eit::EitCase::new(
        sol.k_i,
        sol.k_e,
        vec![crate::eit::Measurement {
            g: crate::eit::MeasurementFn::CosM { m: sol.m },
            dirichlet: crate::eit::DirichletData::Analytic(sol.clone()),
        }],
    )
    .unwrap();
    let solvers = crate::eit::EitSolvers::new(
        mesh.clone(),
        &case,
        Discretization::Cg,
        crate::assembly::DgParams::default(),
    )
    .unwrap();
    let states = solvers.solve_states(&case, 0).unwrap();
    let zero = Field::zeros(crate::spaces::SpaceDescriptor::cg_vec2(1), mesh.clone());
    let e = exact_gradient_error(&solvers, &case, &states, &zero, &sol).unwrap();
    assert_eq!(e, 0.0);
}

#[test]
fn exact_error_self_convergence_with_interpolated_neumann_state() {
    // replacing the Neumann state by the interpolant of the closed-form
    // solution leaves only interpolation-scale error against the solved
    // Dirichlet state; the exact error must shrink at rate >= 1
    let sol = std::sync::Arc::new(AnalyticSolution::reference());
    let case = crate::eit::EitCase::new(
        sol.k_i,
        sol.k_e,
        vec![crate::eit::Measurement {
            g: crate::eit::MeasurementFn::CosM { m: sol.m },
            dirichlet: crate::eit::DirichletData::Analytic(sol.clone()),
        }],
    )
    .unwrap();
    let mut errors = Vec::new();
    for h in [1.2, 0.6, 0.3] {
        let mesh = std::sync::Arc::new(validation_mesh(&sol, h).unwrap());
        let solvers = crate::eit::EitSolvers::new(
            mesh.clone(),
            &case,
            Discretization::Cg,
            crate::assembly::DgParams::default(),
        )
        .unwrap();
        let solved = solvers.solve_states(&case, 0).unwrap();
        let interp = crate::spaces::interpolate_cg(&mesh, 1, |p| sol.eval(p).unwrap().0);
        let states = crate::eit::StatePair {
            u_n: interp,
            ..solved
        };
        let mut theta = Field::zeros(crate::spaces::SpaceDescriptor::cg_vec2(1), mesh.clone());
        for (v, p) in mesh.vertices.iter().enumerate() {
            if !mesh.boundary_vertex[v] {
                let w = 1.0 - (p.norm() / 5.0).powi(2);
                theta.coeffs[2 * v] = 0.5 * w;
                theta.coeffs[2 * v + 1] = -0.3 * w;
            }
        }
        let e = exact_gradient_error(&solvers, &case, &states, &theta, &sol).unwrap();
        errors.push(e.abs());
    }
    assert!(
        errors[0] > errors[1] && errors[1] > errors[2],
        "errors {errors:?} should decrease"
    );
    let rate = (errors[0] / errors[2]).log2() / 2.0;
    assert!(rate >= 1.0, "self-convergence rate {rate}, errors {errors:?}");
}
