use super::*;
use crate::assembly::cg_matrix;
use crate::quad::QuadRule;
use crate::validation::{validation_mesh, AnalyticSolution};

fn reference_case(sol: &Arc<AnalyticSolution>) -> EitCase {
    EitCase::new(
        sol.k_i,
        sol.k_e,
        vec![Measurement {
            g: MeasurementFn::CosM { m: sol.m },
            dirichlet: DirichletData::Analytic(sol.clone()),
        }],
    )
    .unwrap()
}

fn zero_measurement() -> Measurement {
    Measurement {
        // (x + 0 y)^1 * 0^2 = 0 everywhere
        g: MeasurementFn::Poly {
            a: 0.0,
            b: 1.0,
            c: 2.0,
        },
        dirichlet: DirichletData::Sampled(Arc::new(BoundaryTrace {
            angles: vec![-3.0, 0.0, 3.0],
            values: vec![0.0, 0.0, 0.0],
        })),
    }
}

#[test]
fn case_preconditions() {
    assert!(EitCase::new(-1.0, 1.0, vec![zero_measurement()]).is_err());
    assert!(EitCase::new(1.0, 1.0, vec![]).is_err());
}

#[test]
fn zero_data_gives_zero_states() {
    let sol = Arc::new(AnalyticSolution::reference());
    let mesh = Arc::new(validation_mesh(&sol, 1.2).unwrap());
    let case = EitCase::new(10.0, 1.0, vec![zero_measurement()]).unwrap();
    for disc in [Discretization::Cg, Discretization::Dg] {
        let solvers = EitSolvers::new(mesh.clone(), &case, disc, DgParams::default()).unwrap();
        let states = solvers.solve_states(&case, 0).unwrap();
        assert!(states.u_n.coeffs.iter().all(|&v| v.abs() < 1e-13));
        assert!(states.u_d.coeffs.iter().all(|&v| v.abs() < 1e-13));
        assert!(kohn_vogelius(&states, &solvers.k, 2) < 1e-26);
    }
}

#[test]
fn poly_family_matches_printed_formula() {
    let family = poly_family(10);
    assert_eq!(family.len(), 10);
    // j = 0: a = 1, b = 1/2, c = 0 -> g = (x + y)^(1/2)
    let p = Vec2::new(0.5, 0.3);
    assert!((family[0].eval(p) - (0.8f64).sqrt()).abs() < 1e-15);
    // j = 1: a = 1.1, b = 1, c = 1 -> g = (x + 1.1 y) * 1.1
    let g1 = family[1].eval(p);
    assert!((g1 - (0.5 + 1.1 * 0.3) * 1.1).abs() < 1e-14);
    // j = 2: a = 1.2, b = 3/2, c = 0
    let g2 = family[2].eval(p);
    assert!((g2 - (0.5 + 1.2 * 0.3f64).powf(1.5)).abs() < 1e-14);
    // negative bases extend oddly instead of producing NaN
    let q = Vec2::new(-2.0, 0.0);
    assert!(family[0].eval(q).is_finite());
    assert!(family[0].eval(q) < 0.0);
}

#[test]
fn cg_dirichlet_state_matches_boundary_data() {
    let sol = Arc::new(AnalyticSolution::reference());
    let mesh = Arc::new(validation_mesh(&sol, 1.0).unwrap());
    let case = reference_case(&sol);
    let solvers =
        EitSolvers::new(mesh.clone(), &case, Discretization::Cg, DgParams::default()).unwrap();
    let states = solvers.solve_states(&case, 0).unwrap();
    for v in 0..mesh.n_vertices() {
        if mesh.boundary_vertex[v] {
            let expect = sol.eval(mesh.vertices[v]).unwrap().0;
            assert!((states.u_d.coeffs[v] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn neumann_state_converges_at_second_order_in_l2() {
    let sol = Arc::new(AnalyticSolution::reference());
    let case = reference_case(&sol);
    for disc in [Discretization::Cg, Discretization::Dg] {
        let mut errs = Vec::new();
        for h in [1.0, 0.5, 0.25] {
            let mesh = Arc::new(validation_mesh(&sol, h).unwrap());
            let solvers = EitSolvers::new(mesh.clone(), &case, disc, DgParams::default()).unwrap();
            let states = solvers.solve_states(&case, 0).unwrap();
            let rule = QuadRule::triangle(6);
            let mut err2 = 0.0;
            for t in 0..mesh.n_triangles() {
                let [a, b, c] = mesh.tri_vertices(t);
                let jac = 2.0 * mesh.area(t);
                for (q, &w) in rule.points.iter().zip(&rule.weights) {
                    let p = a + (b - a) * q.x + (c - a) * q.y;
                    let num = states.u_n.eval_scalar(t, &[*q])[0].0;
                    let ex = sol.eval(p).unwrap().0;
                    err2 += w * jac * (num - ex) * (num - ex);
                }
            }
            errs.push(err2.sqrt());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{disc:?}: {errs:?}");
        let rate = (errs[0] / errs[2]).log2() / 2.0;
        assert!(
            (rate - 2.0).abs() < 0.35,
            "{disc:?} L2 rate {rate}, errors {errs:?}"
        );
    }
}

#[test]
fn neumann_and_dirichlet_states_converge_to_each_other() {
    let sol = Arc::new(AnalyticSolution::reference());
    let case = reference_case(&sol);
    let mut misfits = Vec::new();
    for h in [1.0, 0.5, 0.25] {
        let mesh = Arc::new(validation_mesh(&sol, h).unwrap());
        let solvers =
            EitSolvers::new(mesh.clone(), &case, Discretization::Cg, DgParams::default()).unwrap();
        let states = solvers.solve_states(&case, 0).unwrap();
        misfits.push(kohn_vogelius(&states, &solvers.k, 2));
    }
    assert!(misfits[0] > misfits[1] && misfits[1] > misfits[2]);
    assert!(misfits[2] < 1e-3);
}

#[test]
fn kohn_vogelius_basics() {
    let sol = Arc::new(AnalyticSolution::reference());
    let mesh = Arc::new(validation_mesh(&sol, 1.1).unwrap());
    let case = reference_case(&sol);
    let k = case.conductivity(&mesh);
    // coincident states
    let u = crate::spaces::interpolate_cg(&mesh, 1, |p| p.x * 0.3 + 0.1);
    let pair = StatePair {
        u_n: u.clone(),
        u_d: u.clone(),
        disc: Discretization::Cg,
        measurement: 0,
    };
    assert_eq!(kohn_vogelius(&pair, &k, 2), 0.0);

    // constant difference c: J = c^2/2 * |D|
    let c = 0.7;
    let mut shifted = u.clone();
    for v in shifted.coeffs.iter_mut() {
        *v += c;
    }
    let pair = StatePair {
        u_n: shifted,
        u_d: u,
        disc: Discretization::Cg,
        measurement: 0,
    };
    let area: f64 = (0..mesh.n_triangles()).map(|t| mesh.area(t)).sum();
    let j = kohn_vogelius(&pair, &k, 2);
    assert!((j - 0.5 * c * c * area).abs() < 1e-12 * j);

    // invariance under quadrature of sufficient exactness
    let j6 = kohn_vogelius(&pair, &k, 6);
    assert!((j - j6).abs() < 1e-12 * j.max(1.0));
}

fn smooth_direction(mesh: &Arc<Mesh>) -> Field {
    let mut coeffs = vec![0.0; 2 * mesh.n_vertices()];
    for (v, p) in mesh.vertices.iter().enumerate() {
        if mesh.boundary_vertex[v] {
            continue;
        }
        let w = (1.0 - (p.norm() / 5.0).powi(2)).max(0.0);
        coeffs[2 * v] = w * (0.2 + 0.1 * p.y.sin());
        coeffs[2 * v + 1] = w * 0.15 * p.x.cos();
    }
    Field::from_coeffs(crate::spaces::SpaceDescriptor::cg_vec2(1), mesh.clone(), coeffs)
}

#[test]
fn shape_gradient_zero_cases_and_linearity() {
    let sol = Arc::new(AnalyticSolution::reference());
    let mesh = Arc::new(validation_mesh(&sol, 1.0).unwrap());
    let case = reference_case(&sol);
    let solvers =
        EitSolvers::new(mesh.clone(), &case, Discretization::Cg, DgParams::default()).unwrap();
    let states = solvers.solve_states(&case, 0).unwrap();
    let zero = Field::zeros(crate::spaces::SpaceDescriptor::cg_vec2(1), mesh.clone());
    let a0 =
        shape_gradient_action(&mesh, &solvers.k, std::slice::from_ref(&states), &zero).unwrap();
    assert_eq!(a0, 0.0);

    // identical states cancel G exactly
    let same = StatePair {
        u_n: states.u_n.clone(),
        u_d: states.u_n.clone(),
        disc: states.disc,
        measurement: 0,
    };
    let theta = smooth_direction(&mesh);
    let a1 = shape_gradient_action(&mesh, &solvers.k, std::slice::from_ref(&same), &theta).unwrap();
    assert!(a1.abs() < 1e-14);

    // linearity
    let theta2 = Field::from_coeffs(
        theta.space,
        mesh.clone(),
        theta.coeffs.iter().map(|v| -1.6 * v).collect(),
    );
    let s1 =
        shape_gradient_action(&mesh, &solvers.k, std::slice::from_ref(&states), &theta).unwrap();
    let s2 =
        shape_gradient_action(&mesh, &solvers.k, std::slice::from_ref(&states), &theta2).unwrap();
    assert!((s2 + 1.6 * s1).abs() < 1e-12 * (1.0 + s1.abs()));

    // non-admissible directions are rejected
    let mut bad = theta.clone();
    let b = (0..mesh.n_vertices())
        .find(|&v| mesh.boundary_vertex[v])
        .unwrap();
    bad.coeffs[2 * b] = 1.0;
    assert!(
        shape_gradient_action(&mesh, &solvers.k, std::slice::from_ref(&states), &bad).is_err()
    );
}

#[test]
fn shape_gradient_matches_finite_differences() {
    let sol = Arc::new(AnalyticSolution::reference());
    let mesh = Arc::new(validation_mesh(&sol, 0.7).unwrap());
    let case = reference_case(&sol);
    for disc in [Discretization::Cg, Discretization::Dg] {
        let solvers = EitSolvers::new(mesh.clone(), &case, disc, DgParams::default()).unwrap();
        let states = solvers.solve_states(&case, 0).unwrap();
        let theta = smooth_direction(&mesh);
        let action = solvers
            .shape_gradient_action(&case, std::slice::from_ref(&states), &theta)
            .unwrap();

        let j_at = |mu: f64| -> f64 {
            let moved = Arc::new(mesh.deform(&theta.coeffs, mu, 0.05).unwrap());
            let s = EitSolvers::new_states_only(moved, &case, disc, DgParams::default()).unwrap();
            let st = s.solve_states(&case, 0).unwrap();
            kohn_vogelius(&st, &s.k, 2)
        };
        let eps = 1e-4;
        let forward = (j_at(eps) - j_at(0.0)) / eps;
        let central = (j_at(eps) - j_at(-eps)) / (2.0 * eps);
        let rel_f = (forward - action).abs() / action.abs();
        let rel_c = (central - action).abs() / action.abs();
        assert!(
            rel_f <= 1e-2,
            "{disc:?}: forward difference relative error {rel_f:.3e}"
        );
        assert!(
            rel_c < rel_f,
            "{disc:?}: central difference should improve: {rel_c:.3e} vs {rel_f:.3e}"
        );
    }
}

#[test]
fn m_tensor_is_trace_free() {
    let sol = Arc::new(AnalyticSolution::reference());
    let mesh = Arc::new(validation_mesh(&sol, 1.2).unwrap());
    let theta = smooth_direction(&mesh);
    for t in (0..mesh.n_triangles()).step_by(5) {
        let (_, jac) = theta.eval_vec2(t, &[Vec2::new(1.0 / 3.0, 1.0 / 3.0)])[0];
        let m = m_tensor(&jac);
        assert!((m[(0, 0)] + m[(1, 1)]).abs() < 1e-13);
    }
}

#[test]
fn adjoints_vanish_for_zero_direction_and_scale_linearly() {
    let sol = Arc::new(AnalyticSolution::reference());
    let mesh = Arc::new(validation_mesh(&sol, 1.0).unwrap());
    let case = reference_case(&sol);
    for disc in [Discretization::Cg, Discretization::Dg] {
        let solvers = EitSolvers::new(mesh.clone(), &case, disc, DgParams::default()).unwrap();
        let states = solvers.solve_states(&case, 0).unwrap();
        let zero = Field::zeros(crate::spaces::SpaceDescriptor::cg_vec2(1), mesh.clone());
        let adj = solvers.solve_adjoints(&states, &zero).unwrap();
        assert!(adj.r_n.coeffs.iter().all(|&v| v.abs() < 1e-13));
        assert!(adj.r_d.coeffs.iter().all(|&v| v.abs() < 1e-13));

        let theta = smooth_direction(&mesh);
        let adj1 = solvers.solve_adjoints(&states, &theta).unwrap();
        let theta2 = Field::from_coeffs(
            theta.space,
            mesh.clone(),
            theta.coeffs.iter().map(|v| 2.0 * v).collect(),
        );
        let adj2 = solvers.solve_adjoints(&states, &theta2).unwrap();
        let scale = adj1.r_n.coeffs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in adj2.r_n.coeffs.iter().zip(&adj1.r_n.coeffs) {
            assert!((a - 2.0 * b).abs() < 1e-12 * (1.0 + scale));
        }
    }
}

#[test]
fn dg_adjoint_rhs_consistent_with_cg_on_smooth_inputs() {
    // with uniform conductivity, affine u and affine theta every jump term
    // carries zero data, so the dG load of a continuous test function must
    // equal the conforming load
    let mesh = Arc::new(crate::mesh::generate_disk_mesh(5.0, &[], 1.0).unwrap());
    let k = vec![1.0; mesh.n_triangles()];
    let u_cg = crate::spaces::interpolate_cg(&mesh, 1, |p| 0.4 * p.x - 0.7 * p.y + 0.2);
    let u_dg = crate::spaces::interpolate_broken(&mesh, 1, |p| 0.4 * p.x - 0.7 * p.y + 0.2);
    let mut theta = Field::zeros(crate::spaces::SpaceDescriptor::cg_vec2(1), mesh.clone());
    for (v, p) in mesh.vertices.iter().enumerate() {
        theta.coeffs[2 * v] = 0.3 * p.x + 0.1 * p.y;
        theta.coeffs[2 * v + 1] = -0.2 * p.x + 0.05;
    }
    let rhs_cg = adjoint_rhs_cg(&mesh, &k, &u_cg, &theta);
    let rhs_dg = adjoint_rhs_dg(&mesh, &k, &u_dg, &theta, 1.0);
    // pair both with the same continuous quadratic test function
    let w_cg = crate::spaces::interpolate_cg(&mesh, 2, |p| p.x * p.x - p.y + 0.3 * p.x * p.y);
    let w_dg = crate::spaces::interpolate_broken(&mesh, 2, |p| p.x * p.x - p.y + 0.3 * p.x * p.y);
    let a: f64 = rhs_cg.iter().zip(&w_cg.coeffs).map(|(x, y)| x * y).sum();
    let b: f64 = rhs_dg.iter().zip(&w_dg.coeffs).map(|(x, y)| x * y).sum();
    assert!((a - b).abs() < 1e-11 * (1.0 + a.abs()), "cg {a} vs dg {b}");
}

#[test]
fn descent_direction_properties() {
    let sol = Arc::new(AnalyticSolution::reference());
    let mesh = Arc::new(validation_mesh(&sol, 0.9).unwrap());
    // zero load gives the zero direction
    let zero = descent_direction(&mesh, &vec![0.0; 2 * mesh.n_vertices()]).unwrap();
    assert!(zero.theta.coeffs.iter().all(|&v| v == 0.0));
    assert_eq!(zero.derivative, 0.0);
    assert!(zero.degenerate);

    // a real load: Galerkin identity <d, theta> = -|theta|_H1^2
    let case = reference_case(&sol);
    let solvers =
        EitSolvers::new(mesh.clone(), &case, Discretization::Cg, DgParams::default()).unwrap();
    let states = solvers.solve_states(&case, 0).unwrap();
    let d = shape_gradient_vector(&mesh, &solvers.k, std::slice::from_ref(&states));
    let dir = descent_direction(&mesh, &d).unwrap();
    assert!(!dir.degenerate);
    let h1 = cg_matrix(&mesh, &vec![1.0; mesh.n_triangles()], 1);
    let mut h1_norm2 = 0.0;
    for comp in 0..2 {
        let x: Vec<f64> = (0..mesh.n_vertices())
            .map(|v| dir.theta.coeffs[2 * v + comp])
            .collect();
        let hx = h1.matvec(&x);
        h1_norm2 += x.iter().zip(&hx).map(|(a, b)| a * b).sum::<f64>();
    }
    assert!(
        (dir.derivative + h1_norm2).abs() <= 1e-10 * h1_norm2,
        "galerkin identity defect: {} vs {}",
        dir.derivative,
        -h1_norm2
    );
    // boundary values are exactly zero
    for v in 0..mesh.n_vertices() {
        if mesh.boundary_vertex[v] {
            assert_eq!(dir.theta.coeffs[2 * v], 0.0);
            assert_eq!(dir.theta.coeffs[2 * v + 1], 0.0);
        }
    }
}

#[test]
fn galerkin_orthogonality_of_cg_states() {
    let sol = Arc::new(AnalyticSolution::reference());
    let mesh = Arc::new(validation_mesh(&sol, 1.0).unwrap());
    let case = reference_case(&sol);
    let solvers =
        EitSolvers::new(mesh.clone(), &case, Discretization::Cg, DgParams::default()).unwrap();
    let states = solvers.solve_states(&case, 0).unwrap();
    let mat = cg_matrix(&mesh, &solvers.k, 1);
    let g = &case.measurements[0].g;
    let rhs = crate::assembly::cg_neumann_rhs(&mesh, 1, &|p| g.eval(p));
    let ax = mat.matvec(&states.u_n.coeffs);
    let res: f64 = ax
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let bnorm: f64 = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(res <= 1e-10 * bnorm);
}

#[test]
fn boundary_trace_interpolates_angles_periodically() {
    let tr = BoundaryTrace {
        angles: vec![-2.0, 0.0, 2.0],
        values: vec![1.0, 3.0, 5.0],
    };
    assert!((tr.eval_angle(-1.0) - 2.0).abs() < 1e-14);
    assert!((tr.eval_angle(1.0) - 4.0).abs() < 1e-14);
    // wrap-around segment between the last and first samples
    let wrap = tr.eval_angle(3.0);
    assert!(wrap > 1.0 && wrap < 5.0);
}

#[test]
fn synthetic_measurements_reproduce_forward_traces() {
    let loops = vec![crate::mesh::circle_polyline(Vec2::zeros(), 4.0, 48)];
    let gs = vec![MeasurementFn::CosM { m: 5 }];
    let ms = synthetic_measurements(5.0, &loops, 10.0, 1.0, &gs, 0.35).unwrap();
    assert_eq!(ms.len(), 1);
    // the sampled trace should sit close to the closed-form boundary values
    let sol = AnalyticSolution::reference();
    let mut worst = 0.0f64;
    for i in 0..32 {
        let a = 2.0 * std::f64::consts::PI * i as f64 / 32.0;
        let p = 4.999 * Vec2::new(a.cos(), a.sin());
        let exact = sol.eval(p).unwrap().0;
        let sampled = ms[0].dirichlet.eval(p);
        worst = worst.max((sampled - exact).abs());
    }
    assert!(worst < 0.05, "synthetic trace deviates by {worst}");
}
