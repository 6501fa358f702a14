//! Element-wise Raviart-Thomas flux prescriptions for the SWIP-dG
//! discretization and the matching computable error expression.
//!
//! The RT degrees of freedom are exactly the prescribed moments, so the
//! reconstruction is assignment, not solution: interior edge moments come
//! from the penalized jumps minus the weighted average flux, boundary
//! moments from the data terms, and the RT1 interior moments add the
//! element-owned jump corrections that make the adjoint equilibration
//! identity hold element-wise.

use super::{EquilibratedFlux, ErrorBreakdown, FluxRole};
use crate::assembly::{swip_penalty, swip_weights, DgParams};
use crate::eit::{m_tensor, AdjointPair, EitSolvers, StatePair};
use crate::mesh::Mesh;
use crate::quad::QuadRule;
use crate::spaces::{interp_low, project_boundary, project_field_broken, Field, SpaceDescriptor};
use crate::{Result, Vec2};
use std::sync::Arc;

type GFn<'a> = &'a (dyn Fn(Vec2) -> f64 + Sync);

pub struct DgFluxes {
    pub sigma_n: EquilibratedFlux,
    pub sigma_d: EquilibratedFlux,
    pub xi_n: EquilibratedFlux,
    pub xi_d: EquilibratedFlux,
}

impl DgFluxes {
    pub fn reconstruct(
        solvers: &EitSolvers,
        states: &StatePair,
        adjoints: &AdjointPair,
        theta: &Field,
        g: GFn,
        u_d_data: GFn,
    ) -> Result<DgFluxes> {
        let mesh = &solvers.mesh;
        let k = &solvers.k;
        let params = &solvers.params;
        Ok(DgFluxes {
            sigma_n: reconstruct_state_flux_dg(mesh, k, &states.u_n, 1.0, Some(g), None, params)?,
            sigma_d: reconstruct_state_flux_dg(
                mesh,
                k,
                &states.u_d,
                0.0,
                None,
                Some(u_d_data),
                params,
            )?,
            xi_n: reconstruct_adjoint_flux_dg(
                mesh,
                k,
                &adjoints.r_n,
                &states.u_n,
                theta,
                1.0,
                params,
            )?,
            xi_d: reconstruct_adjoint_flux_dg(
                mesh,
                k,
                &adjoints.r_d,
                &states.u_d,
                theta,
                0.0,
                params,
            )?,
        })
    }
}

/// Two-sided trace helper: value and gradient of a broken field on an edge.
fn edge_traces(field: &Field, t: usize, p: Vec2) -> (f64, Vec2) {
    field.eval_scalar_phys(t, p)
}

/// RT0 state flux from the edge prescriptions.
pub fn reconstruct_state_flux_dg(
    mesh: &Arc<Mesh>,
    k: &[f64],
    u: &Field,
    zeta: f64,
    g: Option<GFn>,
    u_d: Option<GFn>,
    params: &DgParams,
) -> Result<EquilibratedFlux> {
    let degree = u.space.degree;
    let beta = params.beta_for(degree);
    let quad = QuadRule::edge(2 * degree + 1);
    let data_quad = QuadRule::edge(9);
    let mut coeffs = vec![0.0; mesh.n_edges()];
    for (e, edge) in mesh.edges.iter().enumerate() {
        let tm = edge.t_minus;
        let len = mesh.edge_len(e);
        let n_e = mesh.edge_normal(e);
        match edge.t_plus {
            Some(tp) => {
                let (am, ap) = swip_weights(k[tm], k[tp], params.weights)?;
                let gamma = swip_penalty(k[tm], k[tp], beta, params.weights);
                let mut val = 0.0;
                for (&s, &w) in quad.points.iter().zip(&quad.weights) {
                    let p = mesh.edge_point(e, s);
                    let (vm, gm) = edge_traces(u, tm, p);
                    let (vp, gp) = edge_traces(u, tp, p);
                    let avg = (am * k[tm] * gm + ap * k[tp] * gp).dot(&n_e);
                    val += w * len * (gamma / len * (vm - vp) - avg);
                }
                coeffs[e] = val;
            }
            None => {
                let gamma = beta * k[tm];
                let mut val = 0.0;
                for (&s, &w) in data_quad.points.iter().zip(&data_quad.weights) {
                    let p = mesh.edge_point(e, s);
                    if zeta == 1.0 {
                        val -= w * len * g.expect("Neumann data")(p);
                    } else {
                        let (vm, gm) = edge_traces(u, tm, p);
                        let ud = u_d.expect("Dirichlet data")(p);
                        val += w
                            * len
                            * (1.0 - zeta)
                            * (gamma / len * (vm - ud) - k[tm] * gm.dot(&n_e));
                    }
                }
                coeffs[e] = val;
            }
        }
    }
    Ok(EquilibratedFlux {
        flux: Field::from_coeffs(SpaceDescriptor::rt(0), mesh.clone(), coeffs),
        role: if zeta == 1.0 {
            FluxRole::StateNeumann
        } else {
            FluxRole::StateDirichlet
        },
    })
}

/// RT1 adjoint flux from the edge and interior moment prescriptions.
pub fn reconstruct_adjoint_flux_dg(
    mesh: &Arc<Mesh>,
    k: &[f64],
    r: &Field,
    u: &Field,
    theta: &Field,
    zeta: f64,
    params: &DgParams,
) -> Result<EquilibratedFlux> {
    let degree = r.space.degree;
    let beta = params.beta_for(degree);
    let quad = QuadRule::edge(5);
    let space = SpaceDescriptor::rt(1);
    let mut coeffs = vec![0.0; space.dof_count(mesh)];

    // per-element constant k M(theta) grad u for the Neumann boundary moments
    let centroid = [Vec2::new(1.0 / 3.0, 1.0 / 3.0)];
    let w_elem: Vec<Vec2> = (0..mesh.n_triangles())
        .map(|t| {
            let (_, jt) = theta.eval_vec2(t, &centroid)[0];
            let m = m_tensor(&jt);
            let gu = u.eval_scalar(t, &centroid)[0].1;
            k[t] * (m * gu)
        })
        .collect();

    // edge moments against {1, 2t - 1}
    for (e, edge) in mesh.edges.iter().enumerate() {
        let tm = edge.t_minus;
        let len = mesh.edge_len(e);
        let n_e = mesh.edge_normal(e);
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        match edge.t_plus {
            Some(tp) => {
                let (am, ap) = swip_weights(k[tm], k[tp], params.weights)?;
                let gamma = swip_penalty(k[tm], k[tp], beta, params.weights);
                for (&s, &w) in quad.points.iter().zip(&quad.weights) {
                    let p = mesh.edge_point(e, s);
                    let (vm, gm) = edge_traces(r, tm, p);
                    let (vp, gp) = edge_traces(r, tp, p);
                    let avg = (am * k[tm] * gm + ap * k[tp] * gp).dot(&n_e);
                    let integrand = gamma / len * (vm - vp) - avg;
                    m0 += w * len * integrand;
                    m1 += w * len * integrand * (2.0 * s - 1.0);
                }
            }
            None => {
                let gamma = beta * k[tm];
                for (&s, &w) in quad.points.iter().zip(&quad.weights) {
                    let p = mesh.edge_point(e, s);
                    let (vm, gm) = edge_traces(r, tm, p);
                    let integrand = (1.0 - zeta) * (gamma / len * vm - k[tm] * gm.dot(&n_e))
                        - zeta * w_elem[tm].dot(&n_e);
                    m0 += w * len * integrand;
                    m1 += w * len * integrand * (2.0 * s - 1.0);
                }
            }
        }
        coeffs[2 * e] = m0;
        coeffs[2 * e + 1] = m1;
    }

    // interior moments against e_x, e_y, with the element-owned jump
    // corrections (weight alpha of the element itself, conductivity of the
    // element itself)
    let vol = QuadRule::triangle(2);
    for t in 0..mesh.n_triangles() {
        let jac = 2.0 * mesh.area(t);
        let mut ix = 0.0;
        let mut iy = 0.0;
        for (q, &w) in vol.points.iter().zip(&vol.weights) {
            let g = r.eval_scalar(t, &[*q])[0].1;
            ix -= w * jac * k[t] * g.x;
            iy -= w * jac * k[t] * g.y;
        }
        for klocal in 0..3 {
            let e = mesh.tri_edges[t][klocal];
            let edge = &mesh.edges[e];
            let len = mesh.edge_len(e);
            let n_e = mesh.edge_normal(e);
            match edge.t_plus {
                Some(tp) => {
                    let (tm, tp) = (edge.t_minus, tp);
                    let (am, ap) = swip_weights(k[tm], k[tp], params.weights)?;
                    let alpha_own = if t == tm { am } else { ap };
                    // constant test fields pick up n_e times the plain jump
                    // integral
                    let mut jmp = 0.0;
                    for (&s, &w) in quad.points.iter().zip(&quad.weights) {
                        let p = mesh.edge_point(e, s);
                        let jv = edge_traces(r, tm, p).0 - edge_traces(r, tp, p).0;
                        jmp += w * len * jv;
                    }
                    ix += alpha_own * k[t] * jmp * n_e.x;
                    iy += alpha_own * k[t] * jmp * n_e.y;
                }
                None => {
                    if zeta == 0.0 {
                        let mut rv_int = 0.0;
                        for (&s, &w) in quad.points.iter().zip(&quad.weights) {
                            let p = mesh.edge_point(e, s);
                            rv_int += w * len * edge_traces(r, t, p).0;
                        }
                        ix += k[t] * rv_int * n_e.x;
                        iy += k[t] * rv_int * n_e.y;
                    }
                }
            }
        }
        let base = 2 * mesh.n_edges();
        coeffs[base + 2 * t] = ix;
        coeffs[base + 2 * t + 1] = iy;
    }

    Ok(EquilibratedFlux {
        flux: Field::from_coeffs(space, mesh.clone(), coeffs),
        role: if zeta == 1.0 {
            FluxRole::AdjointNeumann
        } else {
            FluxRole::AdjointDirichlet
        },
    })
}

/// The computable error expression of the SWIP-dG discretization for one
/// measurement: volume and boundary data-oscillation pairs, Dirichlet
/// boundary misfit pairs, interior jump pairs, and flux-misfit pairs.
/// Interior-edge contributions split half/half between the incident
/// elements; boundary terms belong to their element.
#[allow(clippy::too_many_arguments)]
pub fn error_estimate_dg(
    solvers: &EitSolvers,
    states: &StatePair,
    adjoints: &AdjointPair,
    fluxes: &DgFluxes,
    _theta: &Field,
    g: GFn,
    u_d_data: GFn,
) -> Result<ErrorBreakdown> {
    let mesh = &solvers.mesh;
    let k = &solvers.k;
    let nt = mesh.n_triangles();
    let mut element_n = vec![0.0; nt];
    let mut element_d = vec![0.0; nt];
    let edge_quad = QuadRule::edge(15);
    let pg = project_boundary(mesh, 0, &edge_quad, |p| g(p));
    let jump_quad = QuadRule::edge(5);

    for (is_neumann, u, r, sigma, xi, element) in [
        (
            true,
            &states.u_n,
            &adjoints.r_n,
            &fluxes.sigma_n.flux,
            &fluxes.xi_n.flux,
            &mut element_n,
        ),
        (
            false,
            &states.u_d,
            &adjoints.r_d,
            &fluxes.sigma_d.flux,
            &fluxes.xi_d.flux,
            &mut element_d,
        ),
    ] {
        let pi_u = project_field_broken(u, 0);
        let low = interp_low(r);
        let rule = QuadRule::triangle(4);
        // volume terms
        for t in 0..nt {
            let [a, b, c] = mesh.tri_vertices(t);
            let jac = 2.0 * mesh.area(t);
            let mut acc = 0.0;
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
                acc += ws * (pu - uv) * rv;
                acc += ws * (pu - uv) * (rv - lv);
                acc += ws * misfit.dot(&(xiv / k[t]));
                acc -= ws * misfit.dot(&(rg + xiv / k[t]));
            }
            element[t] += acc;
        }
        // edge terms
        for (e, edge) in mesh.edges.iter().enumerate() {
            let tm = edge.t_minus;
            let len = mesh.edge_len(e);
            let n_e = mesh.edge_normal(e);
            match edge.t_plus {
                Some(tp) => {
                    let (am, ap) = swip_weights(k[tm], k[tp], solvers.params.weights)?;
                    let mut acc = 0.0;
                    for (&s, &w) in jump_quad.points.iter().zip(&jump_quad.weights) {
                        let p = mesh.edge_point(e, s);
                        let ju = edge_traces(u, tm, p).0 - edge_traces(u, tp, p).0;
                        let (_, gm) = edge_traces(r, tm, p);
                        let (_, gp) = edge_traces(r, tp, p);
                        let avg_flux = (am * k[tm] * gm + ap * k[tp] * gp).dot(&n_e);
                        let xin = xi.eval_rt_phys(tm, &[p])[0].0.dot(&n_e);
                        // - int [u] xi.n + int [u] (k grad r + xi).n
                        acc += w * len * (-ju * xin + ju * (avg_flux + xin));
                    }
                    element[tm] += 0.5 * acc;
                    element[tp] += 0.5 * acc;
                }
                None => {
                    if is_neumann {
                        // boundary data oscillation, Neumann variant only
                        let proj = pg[e].as_ref().unwrap();
                        let mut acc = 0.0;
                        for (&s, &w) in edge_quad.points.iter().zip(&edge_quad.weights) {
                            let p = mesh.edge_point(e, s);
                            let osc = g(p) - proj.eval(s);
                            let rv = edge_traces(r, tm, p).0;
                            let lv = low.eval_scalar_phys(tm, p).0;
                            acc += w * len * osc * (rv + (rv - lv));
                        }
                        element[tm] += acc;
                    } else {
                        // Dirichlet boundary misfit pair
                        let mut acc = 0.0;
                        for (&s, &w) in edge_quad.points.iter().zip(&edge_quad.weights) {
                            let p = mesh.edge_point(e, s);
                            let (uv, _) = edge_traces(u, tm, p);
                            let mis = uv - u_d_data(p);
                            let (_, rg) = edge_traces(r, tm, p);
                            let xin = xi.eval_rt_phys(tm, &[p])[0].0.dot(&n_e);
                            acc += w
                                * len
                                * (-mis * xin + mis * (k[tm] * rg.dot(&n_e) + xin));
                        }
                        element[tm] += acc;
                    }
                }
            }
        }
    }

    Ok(ErrorBreakdown {
        element_n,
        element_d,
    })
}
