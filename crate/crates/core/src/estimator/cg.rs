//! Conforming-path flux equilibration (mixed saddle solves on vertex
//! patches) and the computable error expression.
//!
//! Per patch the pure divergence-constrained mixed system is solved with the
//! multiplier scaled by the local conductivity (which symmetrizes the
//! off-diagonal blocks); patches whose flux space has a fully constrained
//! normal trace carry a one-dimensional multiplier nullspace (constants) and
//! are bordered with the zero-mean constraint. Compatibility of the data is
//! exactly the Galerkin orthogonality of the solve against the center hat
//! function, so the bordering multiplier vanishes at the solution.

use super::{EquilibratedFlux, ErrorBreakdown, FluxRole};
use crate::assembly::solve_patch_saddle;
use crate::eit::{m_tensor, AdjointPair, EitSolvers, StatePair};
use crate::mesh::{Mesh, VertexPatch};
use crate::quad::QuadRule;
use crate::spaces::{
    broken_basis, interp_low, project_boundary, project_field_broken, Field, RtLocal,
    SpaceDescriptor,
};
use crate::{Error, Result, Vec2};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;

type GFn<'a> = &'a (dyn Fn(Vec2) -> f64 + Sync);

/// One reconstruction request, run over every vertex patch.
enum Job<'a> {
    State {
        u: &'a Field,
        /// Neumann data; `None` selects the Dirichlet space variant.
        g: Option<GFn<'a>>,
    },
    Adjoint {
        r: &'a Field,
        u: &'a Field,
        theta: &'a Field,
        neumann: bool,
    },
}

impl Job<'_> {
    fn neumann(&self) -> bool {
        match self {
            Job::State { g, .. } => g.is_some(),
            Job::Adjoint { neumann, .. } => *neumann,
        }
    }
}

/// Space variant at a patch: fully flux-free trial/test (bordered), or
/// free normal traces on the external boundary edges.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Variant {
    ZeroTrace,
    FreeBoundary,
}

fn variant_for(patch_on_boundary: bool, job: &Job) -> Variant {
    if patch_on_boundary && !job.neumann() {
        Variant::FreeBoundary
    } else {
        Variant::ZeroTrace
    }
}

/// The equilibrated fluxes of one measurement (conforming path).
pub struct CgFluxes {
    pub sigma_n: EquilibratedFlux,
    pub sigma_d: EquilibratedFlux,
    pub xi_n: EquilibratedFlux,
    pub xi_d: EquilibratedFlux,
}

impl CgFluxes {
    pub fn reconstruct(
        solvers: &EitSolvers,
        states: &StatePair,
        adjoints: &AdjointPair,
        theta: &Field,
        g: GFn,
    ) -> Result<CgFluxes> {
        let mesh = &solvers.mesh;
        let k = &solvers.k;
        let state_jobs = [
            Job::State {
                u: &states.u_n,
                g: Some(g),
            },
            Job::State {
                u: &states.u_d,
                g: None,
            },
        ];
        let adj_jobs = [
            Job::Adjoint {
                r: &adjoints.r_n,
                u: &states.u_n,
                theta,
                neumann: true,
            },
            Job::Adjoint {
                r: &adjoints.r_d,
                u: &states.u_d,
                theta,
                neumann: false,
            },
        ];
        let mut state_out = run_patches(mesh, k, 0, &state_jobs)?;
        let mut adj_out = run_patches(mesh, k, 1, &adj_jobs)?;
        let rt0 = SpaceDescriptor::rt(0);
        let rt1 = SpaceDescriptor::rt(1);
        Ok(CgFluxes {
            sigma_n: EquilibratedFlux {
                flux: Field::from_coeffs(rt0, mesh.clone(), std::mem::take(&mut state_out[0])),
                role: FluxRole::StateNeumann,
            },
            sigma_d: EquilibratedFlux {
                flux: Field::from_coeffs(rt0, mesh.clone(), std::mem::take(&mut state_out[1])),
                role: FluxRole::StateDirichlet,
            },
            xi_n: EquilibratedFlux {
                flux: Field::from_coeffs(rt1, mesh.clone(), std::mem::take(&mut adj_out[0])),
                role: FluxRole::AdjointNeumann,
            },
            xi_d: EquilibratedFlux {
                flux: Field::from_coeffs(rt1, mesh.clone(), std::mem::take(&mut adj_out[1])),
                role: FluxRole::AdjointDirichlet,
            },
        })
    }
}

/// Patch-wise equilibrated flux for one state problem.
pub fn reconstruct_state_flux_cg(
    mesh: &Arc<Mesh>,
    k: &[f64],
    u: &Field,
    role: FluxRole,
    g: Option<GFn>,
) -> Result<EquilibratedFlux> {
    assert!(role.is_state());
    let job = Job::State {
        u,
        g: if role.is_neumann() { Some(g.expect("Neumann data")) } else { None },
    };
    let coeffs = run_patches(mesh, k, 0, std::slice::from_ref(&job))?.remove(0);
    Ok(EquilibratedFlux {
        flux: Field::from_coeffs(SpaceDescriptor::rt(0), mesh.clone(), coeffs),
        role,
    })
}

/// Patch-wise equilibrated flux for one adjoint problem.
pub fn reconstruct_adjoint_flux_cg(
    mesh: &Arc<Mesh>,
    k: &[f64],
    r: &Field,
    u: &Field,
    theta: &Field,
    role: FluxRole,
) -> Result<EquilibratedFlux> {
    assert!(!role.is_state());
    let job = Job::Adjoint {
        r,
        u,
        theta,
        neumann: role.is_neumann(),
    };
    let coeffs = run_patches(mesh, k, 1, std::slice::from_ref(&job))?.remove(0);
    Ok(EquilibratedFlux {
        flux: Field::from_coeffs(SpaceDescriptor::rt(1), mesh.clone(), coeffs),
        role,
    })
}

/// Solve every vertex-patch problem for each job and sum the zero-extended
/// local fluxes into global RT coefficient vectors.
fn run_patches(mesh: &Arc<Mesh>, k: &[f64], kappa: usize, jobs: &[Job]) -> Result<Vec<Vec<f64>>> {
    let rt_locals: Vec<RtLocal> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| RtLocal::new(mesh, t, kappa))
        .collect();
    let per_vertex: Vec<Vec<Vec<(usize, f64)>>> = (0..mesh.n_vertices())
        .into_par_iter()
        .map(|v| solve_patch(mesh, k, kappa, jobs, &rt_locals, v))
        .collect::<Result<Vec<_>>>()?;
    let n_rt = SpaceDescriptor::rt(kappa).dof_count(mesh);
    let mut out = vec![vec![0.0; n_rt]; jobs.len()];
    for contributions in per_vertex {
        for (job_idx, list) in contributions.into_iter().enumerate() {
            for (dof, val) in list {
                out[job_idx][dof] += val;
            }
        }
    }
    Ok(out)
}

/// Local dof bookkeeping of one patch.
struct PatchDofs {
    /// All patch edges, ascending; parallel status per the space variant.
    edges: Vec<usize>,
    /// Per flux dof: (patch edge position or interior slot, moment).
    n_flux: usize,
    n_mult: usize,
    kappa: usize,
    mpe: usize, // moments per edge
}

impl PatchDofs {
    fn new(_mesh: &Mesh, patch: &VertexPatch, kappa: usize) -> PatchDofs {
        let mut edges: Vec<usize> = patch
            .interior_edges
            .iter()
            .chain(&patch.patch_boundary_edges)
            .chain(&patch.external_edges)
            .copied()
            .collect();
        edges.sort_unstable();
        let mpe = kappa + 1;
        let n_edge_dofs = edges.len() * mpe;
        let n_interior = if kappa == 1 { 2 * patch.tris.len() } else { 0 };
        let nb = broken_dim(kappa);
        PatchDofs {
            edges,
            n_flux: n_edge_dofs + n_interior,
            n_mult: nb * patch.tris.len(),
            kappa,
            mpe,
        }
    }

    fn edge_pos(&self, e: usize) -> usize {
        self.edges.binary_search(&e).unwrap()
    }

    /// Patch flux dof of an edge moment.
    fn edge_dof(&self, e: usize, moment: usize) -> usize {
        self.edge_pos(e) * self.mpe + moment
    }

    /// Patch flux dof of an interior moment of patch triangle `i`.
    fn interior_dof(&self, i: usize, comp: usize) -> usize {
        self.edges.len() * self.mpe + 2 * i + comp
    }

    /// Global RT dof of a patch flux dof.
    fn global_dof(&self, mesh: &Mesh, patch: &VertexPatch, dof: usize) -> usize {
        let ne = self.edges.len() * self.mpe;
        if dof < ne {
            let e = self.edges[dof / self.mpe];
            match self.kappa {
                0 => e,
                _ => 2 * e + dof % self.mpe,
            }
        } else {
            let rest = dof - ne;
            let t = patch.tris[rest / 2];
            2 * mesh.n_edges() + 2 * t + rest % 2
        }
    }
}

fn broken_dim(kappa: usize) -> usize {
    match kappa {
        0 => 1,
        1 => 3,
        _ => unreachable!(),
    }
}

/// Assemble and solve all job systems on the patch of vertex `v`; returns,
/// per job, the (global dof, value) contributions of the local flux.
fn solve_patch(
    mesh: &Arc<Mesh>,
    k: &[f64],
    kappa: usize,
    jobs: &[Job],
    rt_locals: &[RtLocal],
    v: usize,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let patch = mesh.vertex_patch(v);
    let dofs = PatchDofs::new(mesh, &patch, kappa);
    let nb = broken_dim(kappa);
    let rule = QuadRule::triangle(4);
    let on_boundary = mesh.boundary_vertex[v];

    // full patch blocks including constrained flux dofs
    let nf = dofs.n_flux;
    let nm = dofs.n_mult;
    let mut m_full = DMatrix::<f64>::zeros(nf, nf);
    let mut b_full = DMatrix::<f64>::zeros(nm, nf);
    let mut e_vec = DVector::<f64>::zeros(nm);

    // per patch triangle: map of local RT dofs -> (patch dof, sign)
    let mut tri_maps: Vec<Vec<(usize, f64)>> = Vec::with_capacity(patch.tris.len());
    for (i, &t) in patch.tris.iter().enumerate() {
        let mut map = Vec::new();
        for klocal in 0..3 {
            let e = mesh.tri_edges[t][klocal];
            let sign = mesh.edge_sign(t, klocal);
            for mom in 0..dofs.mpe {
                map.push((dofs.edge_dof(e, mom), sign));
            }
        }
        if kappa == 1 {
            map.push((dofs.interior_dof(i, 0), 1.0));
            map.push((dofs.interior_dof(i, 1), 1.0));
        }
        tri_maps.push(map);
    }

    for (i, &t) in patch.tris.iter().enumerate() {
        let [a, b, c] = mesh.tri_vertices(t);
        let jac = 2.0 * mesh.area(t);
        let local = &rt_locals[t];
        let map = &tri_maps[i];
        for (q, &w) in rule.points.iter().zip(&rule.weights) {
            let p = a + (b - a) * q.x + (c - a) * q.y;
            let basis = local.basis_at(p);
            let (_, zvals, _) = broken_basis(kappa, *q);
            let ws = w * jac;
            for (li, &(pi, si)) in map.iter().enumerate() {
                let (bi, di) = basis[li];
                for (lj, &(pj, sj)) in map.iter().enumerate() {
                    let (bj, _) = basis[lj];
                    m_full[(pi, pj)] += ws * si * sj * bi.dot(&bj);
                }
                for zm in 0..nb {
                    b_full[(i * nb + zm, pi)] += ws * zvals[zm] * si * di;
                }
            }
            for zm in 0..nb {
                e_vec[i * nb + zm] += ws * zvals[zm];
            }
        }
    }

    // which variants are needed at this vertex
    let mut systems: Vec<(Variant, PatchSystem)> = Vec::new();
    let mut need = |variant: Variant| {
        if !systems.iter().any(|(vv, _)| *vv == variant) {
            systems.push((
                variant,
                PatchSystem::build(&patch, &dofs, variant, &m_full, &b_full, &e_vec),
            ));
        }
    };
    for job in jobs {
        need(variant_for(on_boundary, job));
    }

    let mut results = Vec::with_capacity(jobs.len());
    for job in jobs {
        let variant = variant_for(on_boundary, job);
        let sys = &systems.iter().find(|(vv, _)| *vv == variant).unwrap().1;
        // constrained values (global normal convention)
        let mut constrained_vals = vec![0.0; sys.constrained.len()];
        if let Job::State { g: Some(g), .. } = job {
            if on_boundary {
                let edge_quad = QuadRule::edge(9);
                for (ci, &cdof) in sys.constrained.iter().enumerate() {
                    if cdof >= dofs.edges.len() * dofs.mpe {
                        continue;
                    }
                    let e = dofs.edges[cdof / dofs.mpe];
                    if !mesh.edges[e].is_boundary() {
                        continue;
                    }
                    // moment of -psi_v g against the edge Legendre basis
                    let (lo, hi) = mesh.edge_canonical(e);
                    let len = mesh.edge_len(e);
                    let mom = cdof % dofs.mpe;
                    let mut val = 0.0;
                    for (&s, &w) in edge_quad.points.iter().zip(&edge_quad.weights) {
                        let p = mesh.edge_point(e, s);
                        let hat = if lo == v {
                            1.0 - s
                        } else if hi == v {
                            s
                        } else {
                            0.0
                        };
                        let q = if mom == 0 { 1.0 } else { 2.0 * s - 1.0 };
                        val += w * len * (-hat * g(p)) * q;
                    }
                    constrained_vals[ci] = val;
                }
            }
        }

        // right-hand sides
        let mut g_full = DVector::<f64>::zeros(nf);
        let mut f_mult = DVector::<f64>::zeros(nm);
        for (i, &t) in patch.tris.iter().enumerate() {
            let [a, b, c] = mesh.tri_vertices(t);
            let jac = 2.0 * mesh.area(t);
            let local = &rt_locals[t];
            let map = &tri_maps[i];
            for (q, &w) in rule.points.iter().zip(&rule.weights) {
                let p = a + (b - a) * q.x + (c - a) * q.y;
                let ws = w * jac;
                let (hat, hat_grad) = patch.hat(mesh, i, p);
                let basis = local.basis_at(p);
                let (_, zvals, _) = broken_basis(kappa, *q);
                let (flux_src, mult_src): (Vec2, f64) = match job {
                    Job::State { u, .. } => {
                        let (uv, ug) = u.eval_scalar_phys(t, p);
                        (
                            -k[t] * hat * ug,
                            -(k[t] * ug.dot(&hat_grad) + uv * hat),
                        )
                    }
                    Job::Adjoint { r, u, theta, .. } => {
                        let (uv, ug) = u.eval_scalar_phys(t, p);
                        let (rv, rg) = r.eval_scalar_phys(t, p);
                        let (_, jt) = theta.eval_vec2_phys(t, p);
                        let m = m_tensor(&jt);
                        let div_t = jt[(0, 0)] + jt[(1, 1)];
                        let mg = m * ug;
                        (
                            k[t] * hat * (mg - rg),
                            k[t] * mg.dot(&hat_grad) - div_t * uv * hat
                                - (k[t] * rg.dot(&hat_grad) + rv * hat),
                        )
                    }
                };
                for (li, &(pi, si)) in map.iter().enumerate() {
                    let (bi, _) = basis[li];
                    g_full[pi] += ws * si * flux_src.dot(&bi);
                }
                for zm in 0..nb {
                    f_mult[i * nb + zm] += ws * zvals[zm] * mult_src;
                }
            }
        }

        let x = sys
            .solve(&g_full, &f_mult, &constrained_vals)
            .map_err(|e| Error::PatchSolve {
                vertex: v,
                detail: e.to_string(),
            })?;

        let mut contributions = Vec::with_capacity(sys.free.len() + sys.constrained.len());
        for (fi, &fdof) in sys.free.iter().enumerate() {
            contributions.push((dofs.global_dof(mesh, &patch, fdof), x[fi]));
        }
        for (ci, &cdof) in sys.constrained.iter().enumerate() {
            if constrained_vals[ci] != 0.0 {
                contributions.push((dofs.global_dof(mesh, &patch, cdof), constrained_vals[ci]));
            }
        }
        results.push(contributions);
    }
    Ok(results)
}

/// Factorized saddle system of one patch variant.
struct PatchSystem {
    free: Vec<usize>,
    constrained: Vec<usize>,
    matrix: DMatrix<f64>,
    m_fc: DMatrix<f64>,
    b_c: DMatrix<f64>,
    bordered: bool,
}

impl PatchSystem {
    fn build(
        patch: &VertexPatch,
        dofs: &PatchDofs,
        variant: Variant,
        m_full: &DMatrix<f64>,
        b_full: &DMatrix<f64>,
        e_vec: &DVector<f64>,
    ) -> PatchSystem {
        let mpe = dofs.mpe;
        let mut constrained = Vec::new();
        for &e in &patch.patch_boundary_edges {
            for mom in 0..mpe {
                constrained.push(dofs.edge_dof(e, mom));
            }
        }
        if variant == Variant::ZeroTrace {
            for &e in &patch.external_edges {
                for mom in 0..mpe {
                    constrained.push(dofs.edge_dof(e, mom));
                }
            }
        }
        constrained.sort_unstable();
        let free: Vec<usize> = (0..dofs.n_flux).filter(|d| !constrained.contains(d)).collect();
        let bordered = variant == Variant::ZeroTrace;

        let nf = free.len();
        let nm = dofs.n_mult;
        let size = nf + nm + usize::from(bordered);
        let mut matrix = DMatrix::<f64>::zeros(size, size);
        for (i, &fi) in free.iter().enumerate() {
            for (j, &fj) in free.iter().enumerate() {
                matrix[(i, j)] = m_full[(fi, fj)];
            }
            for m in 0..nm {
                matrix[(i, nf + m)] = -b_full[(m, fi)];
                matrix[(nf + m, i)] = b_full[(m, fi)];
            }
        }
        if bordered {
            for m in 0..nm {
                matrix[(nf + m, nf + nm)] = e_vec[m];
                matrix[(nf + nm, nf + m)] = e_vec[m];
            }
        }
        let m_fc = DMatrix::from_fn(nf, constrained.len(), |i, j| m_full[(free[i], constrained[j])]);
        let b_c = DMatrix::from_fn(nm, constrained.len(), |i, j| b_full[(i, constrained[j])]);
        PatchSystem {
            free,
            constrained,
            matrix,
            m_fc,
            b_c,
            bordered,
        }
    }

    fn solve(
        &self,
        g_full: &DVector<f64>,
        f_mult: &DVector<f64>,
        constrained_vals: &[f64],
    ) -> Result<DVector<f64>> {
        let nf = self.free.len();
        let nm = f_mult.len();
        let size = nf + nm + usize::from(self.bordered);
        let vc = DVector::from_column_slice(constrained_vals);
        let mut rhs = DVector::<f64>::zeros(size);
        let g_adj = if constrained_vals.is_empty() {
            DVector::zeros(nf)
        } else {
            &self.m_fc * &vc
        };
        let f_adj = if constrained_vals.is_empty() {
            DVector::zeros(nm)
        } else {
            &self.b_c * &vc
        };
        for i in 0..nf {
            rhs[i] = g_full[self.free[i]] - g_adj[i];
        }
        for m in 0..nm {
            rhs[nf + m] = f_mult[m] - f_adj[m];
        }
        solve_patch_saddle(self.matrix.clone(), rhs)
    }
}

/// The computable error expression of the conforming discretization for one
/// measurement, with signed per-element contributions.
pub fn error_estimate_cg(
    solvers: &EitSolvers,
    states: &StatePair,
    adjoints: &AdjointPair,
    fluxes: &CgFluxes,
    _theta: &Field,
    g: GFn,
) -> Result<ErrorBreakdown> {
    let mesh = &solvers.mesh;
    let k = &solvers.k;
    let nt = mesh.n_triangles();
    let mut element_n = vec![0.0; nt];
    let mut element_d = vec![0.0; nt];
    let edge_quad = QuadRule::edge(15);
    let pg = project_boundary(mesh, 0, &edge_quad, |p| g(p));

    for (zeta_n, u, r, sigma, xi, element) in [
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
                // volume data oscillation paired with r and with r - I r
                acc += ws * (pu - uv) * rv;
                acc += ws * (pu - uv) * (rv - lv);
                // flux misfit paired with k^-1 xi and with grad r + k^-1 xi
                acc += ws * misfit.dot(&(xiv / k[t]));
                acc -= ws * misfit.dot(&(rg + xiv / k[t]));
            }
            element[t] += acc;
        }
        if zeta_n {
            for (e, edge) in mesh.edges.iter().enumerate() {
                if !edge.is_boundary() {
                    continue;
                }
                let t = edge.t_minus;
                let len = mesh.edge_len(e);
                let proj = pg[e].as_ref().unwrap();
                let mut acc = 0.0;
                for (&s, &w) in edge_quad.points.iter().zip(&edge_quad.weights) {
                    let p = mesh.edge_point(e, s);
                    let osc = g(p) - proj.eval(s);
                    let rv = r.eval_scalar_phys(t, p).0;
                    let lv = low.eval_scalar_phys(t, p).0;
                    acc += w * len * osc * (rv + (rv - lv));
                }
                element[t] += acc;
            }
        }
    }

    Ok(ErrorBreakdown {
        element_n,
        element_d,
    })
}
