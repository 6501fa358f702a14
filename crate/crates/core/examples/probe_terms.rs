use certdesc::assembly::{swip_weights, WeightRule};
use certdesc::eit::*;
use certdesc::estimator::*;
use certdesc::quad::QuadRule;
use certdesc::spaces::{interp_low, project_boundary, project_field_broken, Field};
use certdesc::validation::{validation_mesh, AnalyticSolution};
use certdesc::Vec2;
use std::sync::Arc;

fn main() {
    let sol = Arc::new(AnalyticSolution::reference());
    let case = EitCase::new(
        sol.k_i, sol.k_e,
        vec![Measurement {
            g: MeasurementFn::CosM { m: sol.m },
            dirichlet: DirichletData::Analytic(sol.clone()),
        }],
    ).unwrap();
    for level in 0..4 {
        let h = 0.5 / (1 << level) as f64;
        let mesh = Arc::new(validation_mesh(&sol, h).unwrap());
        let solvers = EitSolvers::new(mesh.clone(), &case, Discretization::Dg, Default::default()).unwrap();
        let states = solvers.solve_states(&case, 0).unwrap();
        let dvec = solvers.shape_gradient_vector(&case, std::slice::from_ref(&states)).unwrap();
        let dir = descent_direction(&mesh, &dvec).unwrap();
        let scale = 1.0 / (-dir.derivative).sqrt();
        let theta = Field::from_coeffs(dir.theta.space, mesh.clone(), dir.theta.coeffs.iter().map(|c| c*scale).collect());
        let adj = solvers.solve_adjoints(&states, &theta).unwrap();
        let g = case.measurements[0].g.clone();
        let gfn = move |p: Vec2| g.eval(p);
        let sol2 = sol.clone();
        let udfn = move |p: Vec2| sol2.eval(p).unwrap().0;
        let fluxes = DgFluxes::reconstruct(&solvers, &states, &adj, &theta, &gfn, &udfn).unwrap();
        let k = &solvers.k;
        let mut groups = [[0.0f64; 5]; 2]; // [N/D][bnd-osc, dir-misfit, jumps, vol-osc, flux-misfit]
        for (idx, (is_n, u, r, sigma, xi)) in [
            (true, &states.u_n, &adj.r_n, &fluxes.sigma_n.flux, &fluxes.xi_n.flux),
            (false, &states.u_d, &adj.r_d, &fluxes.sigma_d.flux, &fluxes.xi_d.flux),
        ].into_iter().enumerate() {
            let pi_u = project_field_broken(u, 0);
            let low = interp_low(r);
            let rule = QuadRule::triangle(4);
            for t in 0..mesh.n_triangles() {
                let [a, b, c] = mesh.tri_vertices(t);
                let jac = 2.0 * mesh.area(t);
                for (q, &w) in rule.points.iter().zip(&rule.weights) {
                    let p = a + (b - a) * q.x + (c - a) * q.y;
                    let ws = w * jac;
                    let (uv, ug) = u.eval_scalar(t, &[*q])[0];
                    let (rv, rg) = r.eval_scalar(t, &[*q])[0];
                    let lv = low.eval_scalar(t, &[*q])[0].0;
                    let pu = pi_u.eval_scalar(t, &[*q])[0].0;
                    let (sig, _) = sigma.eval_rt_phys(t, &[p])[0];
                    let (xiv, _) = xi.eval_rt_phys(t, &[p])[0];
                    let misfit = sig + k[t] * ug;
                    groups[idx][3] += ws * (pu - uv) * (2.0 * rv - lv);
                    groups[idx][4] += ws * (misfit.dot(&(xiv / k[t])) - misfit.dot(&(rg + xiv / k[t])));
                }
            }
            let equad = QuadRule::edge(15);
            let pg = project_boundary(&mesh, 0, &equad, &gfn);
            let jq = QuadRule::edge(5);
            for (e, edge) in mesh.edges.iter().enumerate() {
                let tm = edge.t_minus;
                let len = mesh.edge_len(e);
                let n_e = mesh.edge_normal(e);
                match edge.t_plus {
                    Some(tp) => {
                        let (am, ap) = swip_weights(k[tm], k[tp], WeightRule::HarmonicSwip).unwrap();
                        for (&s, &w) in jq.points.iter().zip(&jq.weights) {
                            let p = mesh.edge_point(e, s);
                            let ju = u.eval_scalar_phys(tm, p).0 - u.eval_scalar_phys(tp, p).0;
                            let gm = r.eval_scalar_phys(tm, p).1;
                            let gp = r.eval_scalar_phys(tp, p).1;
                            let avg = (am * k[tm] * gm + ap * k[tp] * gp).dot(&n_e);
                            groups[idx][2] += w * len * ju * avg;
                        }
                    }
                    None => {
                        if is_n {
                            let proj = pg[e].as_ref().unwrap();
                            for (&s, &w) in equad.points.iter().zip(&equad.weights) {
                                let p = mesh.edge_point(e, s);
                                let osc = gfn(p) - proj.eval(s);
                                let rv = r.eval_scalar_phys(tm, p).0;
                                let lv = low.eval_scalar_phys(tm, p).0;
                                groups[idx][0] += w * len * osc * (2.0 * rv - lv);
                            }
                        } else {
                            for (&s, &w) in equad.points.iter().zip(&equad.weights) {
                                let p = mesh.edge_point(e, s);
                                let mis = u.eval_scalar_phys(tm, p).0 - udfn(p);
                                let rgb = r.eval_scalar_phys(tm, p).1;
                                groups[idx][1] += w * len * mis * k[tm] * rgb.dot(&n_e);
                            }
                        }
                    }
                }
            }
        }
        let e_exact = certdesc::validation::exact_gradient_error(&solvers, &case, &states, &theta, &sol).unwrap();
        println!("h={h:7.4} exact {:+.3e}", e_exact);
        for (idx, name) in ["N", "D"].iter().enumerate() {
            println!("  {name}: bnd-osc {:+.3e} dir-mis {:+.3e} jumps {:+.3e} vol-osc {:+.3e} flux-mis {:+.3e}  sum {:+.3e}",
                groups[idx][0], groups[idx][1], groups[idx][2], groups[idx][3], groups[idx][4],
                groups[idx].iter().sum::<f64>());
        }
        let est = groups[0].iter().sum::<f64>() - groups[1].iter().sum::<f64>();
        println!("  est N-D = {:+.3e}  eta = {:.4}", est, est.abs()/e_exact.abs());
    }
}
