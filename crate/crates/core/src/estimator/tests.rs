use super::*;
use crate::assembly::DgParams;
use crate::eit::{
    descent_direction, AdjointPair, Discretization, DirichletData, EitCase,
    EitSolvers, Measurement, MeasurementFn, StatePair,
};
use crate::spaces::{Field, SpaceDescriptor};
use crate::validation::AnalyticSolution;
use crate::Vec2;
use std::sync::Arc;

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

struct Setup {
    solvers: EitSolvers,
    states: StatePair,
    adjoints: AdjointPair,
    theta: Field,
    sol: Arc<AnalyticSolution>,
}

/// Validation geometry; with `synthetic_theta` the direction is an O(1)
/// bump field so equilibration defects are measured on unit-scale data.
fn setup(disc: Discretization, h: f64, synthetic_theta: bool) -> Setup {
    let sol = Arc::new(AnalyticSolution::reference());
    let mesh = Arc::new(crate::validation::validation_mesh(&sol, h).unwrap());
    let case = reference_case(&sol);
    let solvers = EitSolvers::new(mesh.clone(), &case, disc, DgParams::default()).unwrap();
    let states = solvers.solve_states(&case, 0).unwrap();
    let theta = if synthetic_theta {
        bump_direction(&mesh)
    } else {
        let dvec = solvers
            .shape_gradient_vector(&case, std::slice::from_ref(&states))
            .unwrap();
        descent_direction(&mesh, &dvec).unwrap().theta
    };
    let adjoints = solvers.solve_adjoints(&states, &theta).unwrap();
    Setup {
        solvers,
        states,
        adjoints,
        theta,
        sol,
    }
}

/// Smooth unit-scale vector field vanishing exactly on the outer circle.
fn bump_direction(mesh: &Arc<crate::mesh::Mesh>) -> Field {
    let rho_e = 5.0;
    let mut coeffs = vec![0.0; 2 * mesh.n_vertices()];
    for (v, p) in mesh.vertices.iter().enumerate() {
        let w = (1.0 - (p.norm() / rho_e).powi(2)).max(0.0);
        coeffs[2 * v] = w * (0.4 + 0.3 * (0.7 * p.y).sin());
        coeffs[2 * v + 1] = w * (-0.2 + 0.25 * (0.5 * p.x).cos());
    }
    for v in 0..mesh.n_vertices() {
        if mesh.boundary_vertex[v] {
            coeffs[2 * v] = 0.0;
            coeffs[2 * v + 1] = 0.0;
        }
    }
    Field::from_coeffs(SpaceDescriptor::cg_vec2(1), mesh.clone(), coeffs)
}

#[test]
fn cg_zero_data_gives_zero_fluxes() {
    let sol = Arc::new(AnalyticSolution::reference());
    let mesh = Arc::new(crate::validation::validation_mesh(&sol, 1.3).unwrap());
    let k = vec![1.0; mesh.n_triangles()];
    let u = Field::zeros(SpaceDescriptor::cg(1), mesh.clone());
    let zero_g = |_: Vec2| 0.0;
    let flux =
        reconstruct_state_flux_cg(&mesh, &k, &u, FluxRole::StateNeumann, Some(&zero_g)).unwrap();
    assert!(flux.flux.coeffs.iter().all(|&v| v.abs() < 1e-13));

    let r = Field::zeros(SpaceDescriptor::cg(2), mesh.clone());
    let theta = Field::zeros(SpaceDescriptor::cg_vec2(1), mesh.clone());
    let xi =
        reconstruct_adjoint_flux_cg(&mesh, &k, &r, &u, &theta, FluxRole::AdjointNeumann).unwrap();
    assert!(xi.flux.coeffs.iter().all(|&v| v.abs() < 1e-13));
}

#[test]
fn cg_state_fluxes_equilibrate() {
    let s = setup(Discretization::Cg, 0.8, true);
    let g = MeasurementFn::CosM { m: s.sol.m };
    let gfn = |p: Vec2| g.eval(p);
    let fluxes = CgFluxes::reconstruct(&s.solvers, &s.states, &s.adjoints, &s.theta, &gfn).unwrap();
    for (flux, u) in [
        (&fluxes.sigma_n, &s.states.u_n),
        (&fluxes.sigma_d, &s.states.u_d),
    ] {
        let res = state_equilibration_residuals(&flux.flux, u);
        let worst = res.iter().cloned().fold(0.0f64, f64::max);
        assert!(worst < 1e-10, "state equilibration defect {worst:.3e}");
    }

    // Neumann flux boundary trace equals the (sign-consistent) projected
    // data: sigma_N . n + pi(g) = 0 edge-wise
    let mesh = &s.solvers.mesh;
    let quad = crate::quad::QuadRule::edge(9);
    let pg = crate::spaces::project_boundary(mesh, 0, &quad, gfn);
    let mut worst = 0.0f64;
    for (e, edge) in mesh.edges.iter().enumerate() {
        if !edge.is_boundary() {
            continue;
        }
        let n_e = mesh.edge_normal(e);
        let proj = pg[e].as_ref().unwrap();
        for &t in &quad.points {
            let p = mesh.edge_point(e, t);
            let tr = fluxes.sigma_n.flux.eval_rt_phys(edge.t_minus, &[p])[0]
                .0
                .dot(&n_e);
            worst = worst.max((tr + proj.eval(t)).abs());
        }
    }
    assert!(worst < 1e-10, "boundary trace defect {worst:.3e}");
}

#[test]
fn cg_adjoint_fluxes_equilibrate_and_scale_linearly() {
    let s = setup(Discretization::Cg, 0.9, true);
    let xi_n = reconstruct_adjoint_flux_cg(
        &s.solvers.mesh,
        &s.solvers.k,
        &s.adjoints.r_n,
        &s.states.u_n,
        &s.theta,
        FluxRole::AdjointNeumann,
    )
    .unwrap();
    let xi_d = reconstruct_adjoint_flux_cg(
        &s.solvers.mesh,
        &s.solvers.k,
        &s.adjoints.r_d,
        &s.states.u_d,
        &s.theta,
        FluxRole::AdjointDirichlet,
    )
    .unwrap();
    for (xi, r, u) in [
        (&xi_n, &s.adjoints.r_n, &s.states.u_n),
        (&xi_d, &s.adjoints.r_d, &s.states.u_d),
    ] {
        let res = adjoint_equilibration_residuals(&xi.flux, r, u, &s.theta);
        let worst = res.iter().cloned().fold(0.0f64, f64::max);
        assert!(worst < 1e-10, "adjoint equilibration defect {worst:.3e}");
    }

    // linearity in theta at fixed u: both right-hand-side groups scale
    let theta2 = Field::from_coeffs(
        s.theta.space,
        s.theta.mesh.clone(),
        s.theta.coeffs.iter().map(|c| 2.0 * c).collect(),
    );
    let adj2 = s.solvers.solve_adjoints(&s.states, &theta2).unwrap();
    let xi2 = reconstruct_adjoint_flux_cg(
        &s.solvers.mesh,
        &s.solvers.k,
        &adj2.r_n,
        &s.states.u_n,
        &theta2,
        FluxRole::AdjointNeumann,
    )
    .unwrap();
    let scale = xi_n.flux.coeffs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in xi2.flux.coeffs.iter().zip(&xi_n.flux.coeffs) {
        assert!((a - 2.0 * b).abs() < 1e-10 * (1.0 + scale));
    }
}

#[test]
fn dg_state_fluxes_equilibrate() {
    let s = setup(Discretization::Dg, 0.8, true);
    let g = MeasurementFn::CosM { m: s.sol.m };
    let gfn = |p: Vec2| g.eval(p);
    let sol = s.sol.clone();
    let udfn = move |p: Vec2| sol.eval(p).unwrap().0;
    let fluxes =
        DgFluxes::reconstruct(&s.solvers, &s.states, &s.adjoints, &s.theta, &gfn, &udfn).unwrap();
    for (flux, u) in [
        (&fluxes.sigma_n, &s.states.u_n),
        (&fluxes.sigma_d, &s.states.u_d),
    ] {
        let res = state_equilibration_residuals(&flux.flux, u);
        let worst = res.iter().cloned().fold(0.0f64, f64::max);
        assert!(worst < 1e-10, "dG state equilibration defect {worst:.3e}");
    }
}

#[test]
fn dg_neumann_boundary_flux_is_minus_data() {
    // with constant data c the prescribed boundary moment gives
    // sigma . n = -c exactly
    let mesh = Arc::new(crate::mesh::tests::validation_disk(1.0));
    let k = vec![1.0; mesh.n_triangles()];
    let u = Field::zeros(SpaceDescriptor::broken(1), mesh.clone());
    let c = 2.75;
    let gfn = |_: Vec2| c;
    let flux =
        reconstruct_state_flux_dg(&mesh, &k, &u, 1.0, Some(&gfn), None, &DgParams::default())
            .unwrap();
    for (e, edge) in mesh.edges.iter().enumerate() {
        if edge.is_boundary() {
            // the RT0 coefficient is the total edge flux
            let expect = -c * mesh.edge_len(e);
            assert!((flux.flux.coeffs[e] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn dg_adjoint_fluxes_equilibrate() {
    let s = setup(Discretization::Dg, 0.9, true);
    let xi_n = reconstruct_adjoint_flux_dg(
        &s.solvers.mesh,
        &s.solvers.k,
        &s.adjoints.r_n,
        &s.states.u_n,
        &s.theta,
        1.0,
        &s.solvers.params,
    )
    .unwrap();
    let xi_d = reconstruct_adjoint_flux_dg(
        &s.solvers.mesh,
        &s.solvers.k,
        &s.adjoints.r_d,
        &s.states.u_d,
        &s.theta,
        0.0,
        &s.solvers.params,
    )
    .unwrap();
    for (xi, r, u) in [
        (&xi_n, &s.adjoints.r_n, &s.states.u_n),
        (&xi_d, &s.adjoints.r_d, &s.states.u_d),
    ] {
        let res = adjoint_equilibration_residuals(&xi.flux, r, u, &s.theta);
        let worst = res.iter().cloned().fold(0.0f64, f64::max);
        assert!(worst < 1e-10, "dG adjoint equilibration defect {worst:.3e}");
    }
}

#[test]
fn dg_adjoint_flux_on_two_triangle_mesh() {
    // manufactured broken P2 r on the smallest mesh with one interior edge
    let mesh = Arc::new(crate::mesh::tests::unit_square());
    let k = vec![1.0, 3.0];
    let r = crate::spaces::interpolate_broken(&mesh, 2, |p| p.x * p.x - 0.3 * p.y + 0.1);
    let u = crate::spaces::interpolate_broken(&mesh, 1, |p| p.x + p.y);
    // all four vertices sit on the boundary, so the only admissible P1
    // direction is zero and the prescription is purely r-driven
    let theta = Field::zeros(SpaceDescriptor::cg_vec2(1), mesh.clone());
    let params = DgParams::default();
    let xi = reconstruct_adjoint_flux_dg(&mesh, &k, &r, &u, &theta, 0.0, &params).unwrap();

    // round-trip: the assigned edge moments are reproduced by the field
    let quad = crate::quad::QuadRule::edge(7);
    for e in 0..mesh.n_edges() {
        let n_e = mesh.edge_normal(e);
        let len = mesh.edge_len(e);
        let t = mesh.edges[e].t_minus;
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        for (&sq, &w) in quad.points.iter().zip(&quad.weights) {
            let p = mesh.edge_point(e, sq);
            let tr = xi.flux.eval_rt_phys(t, &[p])[0].0.dot(&n_e);
            m0 += w * len * tr;
            m1 += w * len * tr * (2.0 * sq - 1.0);
        }
        assert!((m0 - xi.flux.coeffs[2 * e]).abs() < 1e-13 * (1.0 + m0.abs()));
        assert!((m1 - xi.flux.coeffs[2 * e + 1]).abs() < 1e-13 * (1.0 + m1.abs()));
    }

    // normal-trace continuity across the diagonal
    for (e, edge) in mesh.edges.iter().enumerate() {
        let Some(tp) = edge.t_plus else { continue };
        let n_e = mesh.edge_normal(e);
        for &sq in &quad.points {
            let p = mesh.edge_point(e, sq);
            let a = xi.flux.eval_rt_phys(edge.t_minus, &[p])[0].0.dot(&n_e);
            let b = xi.flux.eval_rt_phys(tp, &[p])[0].0.dot(&n_e);
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn estimates_vanish_on_zero_inputs() {
    let sol = Arc::new(AnalyticSolution::reference());
    let mesh = Arc::new(crate::validation::validation_mesh(&sol, 1.3).unwrap());
    let case = reference_case(&sol);
    let solvers =
        EitSolvers::new(mesh.clone(), &case, Discretization::Cg, DgParams::default()).unwrap();
    let zero_states = StatePair {
        u_n: Field::zeros(SpaceDescriptor::cg(1), mesh.clone()),
        u_d: Field::zeros(SpaceDescriptor::cg(1), mesh.clone()),
        disc: Discretization::Cg,
        measurement: 0,
    };
    let zero_adjoints = AdjointPair {
        r_n: Field::zeros(SpaceDescriptor::cg(2), mesh.clone()),
        r_d: Field::zeros(SpaceDescriptor::cg(2), mesh.clone()),
        disc: Discretization::Cg,
    };
    let theta = Field::zeros(SpaceDescriptor::cg_vec2(1), mesh.clone());
    let zero_g = |_: Vec2| 0.0;
    let fluxes =
        CgFluxes::reconstruct(&solvers, &zero_states, &zero_adjoints, &theta, &zero_g).unwrap();
    let breakdown =
        error_estimate_cg(&solvers, &zero_states, &zero_adjoints, &fluxes, &theta, &zero_g)
            .unwrap();
    assert!(breakdown.bound() < 1e-14);
    assert!(breakdown.indicators().iter().all(|&v| v < 1e-14));
}

#[test]
fn bound_is_resummation_stable() {
    let s = setup(Discretization::Cg, 1.0, false);
    let g = MeasurementFn::CosM { m: s.sol.m };
    let gfn = |p: Vec2| g.eval(p);
    let fluxes = CgFluxes::reconstruct(&s.solvers, &s.states, &s.adjoints, &s.theta, &gfn).unwrap();
    let b =
        error_estimate_cg(&s.solvers, &s.states, &s.adjoints, &fluxes, &s.theta, &gfn).unwrap();
    let ebar = b.bound();
    // resum the element contributions in reversed order
    let mut order: Vec<usize> = (0..b.element_n.len()).collect();
    order.reverse();
    let en: f64 = order.iter().map(|&t| b.element_n[t]).sum();
    let ed: f64 = order.iter().map(|&t| b.element_d[t]).sum();
    let scale = b
        .element_n
        .iter()
        .chain(&b.element_d)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        * b.element_n.len() as f64;
    assert!(((en - ed).abs() - ebar).abs() <= 1e-14 * scale.max(1.0));
    // indicators are nonnegative and sum to the total of the absolute
    // per-element contributions
    let ind = b.indicators();
    assert!(ind.iter().all(|&v| v >= 0.0));
    let total: f64 = ind.iter().sum();
    let direct: f64 = b
        .element_n
        .iter()
        .zip(&b.element_d)
        .map(|(n, d)| (n - d).abs())
        .sum();
    assert!((total - direct).abs() <= 1e-14 * total.max(1.0));
}

#[test]
fn dg_state_flux_of_continuous_field_has_no_jump_contribution() {
    // injecting a globally continuous P1 function into the broken space
    // zeroes every jump, so interior-edge moments reduce to the plain
    // weighted average of the (single-valued) gradient
    let mesh = Arc::new(crate::mesh::tests::validation_disk(1.0));
    let k: Vec<f64> = mesh
        .region
        .iter()
        .map(|r| {
            if *r == crate::mesh::Region::Inclusion {
                10.0
            } else {
                1.0
            }
        })
        .collect();
    let f = |p: Vec2| 0.5 * p.x - 0.2 * p.y + 1.0;
    let u_cont = crate::spaces::interpolate_broken(&mesh, 1, f);
    let gfn = |_: Vec2| 0.0;
    let flux =
        reconstruct_state_flux_dg(&mesh, &k, &u_cont, 1.0, Some(&gfn), None, &DgParams::default())
            .unwrap();
    let grad = Vec2::new(0.5, -0.2);
    for (e, edge) in mesh.edges.iter().enumerate() {
        let Some(tp) = edge.t_plus else { continue };
        let tm = edge.t_minus;
        let (am, ap) =
            crate::assembly::swip_weights(k[tm], k[tp], crate::assembly::WeightRule::HarmonicSwip)
                .unwrap();
        let n_e = mesh.edge_normal(e);
        let expect = -(am * k[tm] + ap * k[tp]) * grad.dot(&n_e) * mesh.edge_len(e);
        assert!(
            (flux.flux.coeffs[e] - expect).abs() < 1e-12 * (1.0 + expect.abs()),
            "edge {e}: {} vs {expect}",
            flux.flux.coeffs[e]
        );
    }
}
