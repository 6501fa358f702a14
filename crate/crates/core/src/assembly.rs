//! Global assembly of the conforming and SWIP-dG forms, sparse solves, and
//! the dense local saddle solves used by the patch equilibration.

use crate::mesh::{barycentric, Mesh};
use crate::quad::QuadRule;
use crate::spaces::{broken_basis, lagrange_basis, SpaceDescriptor};
use crate::{Error, Result, Vec2};
use faer::prelude::*;
use faer::sparse::SparseColMat;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Row-compressed sparse matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Build from triplets, summing duplicates. Summation order is the
    /// stable sort by (row, col), so the result does not depend on any
    /// parallel assembly schedule that emits per-element blocks in element
    /// order.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&i| (triplets[i].0, triplets[i].1));
        let mut indptr = vec![0usize; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        let mut prev = None;
        for &i in &order {
            let (r, c, v) = triplets[i];
            assert!(r < n && c < n, "triplet ({r}, {c}) out of range for n = {n}");
            if prev == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                prev = Some((r, c));
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            n,
            indptr,
            indices,
            data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let mut s = 0.0;
            for idx in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[idx] * x[self.indices[idx]];
            }
            y[i] = s;
        }
        y
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        match self.indices[lo..hi].binary_search(&j) {
            Ok(k) => self.data[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Largest |A_ij - A_ji|, for symmetry checks.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for idx in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[idx];
                worst = worst.max((self.data[idx] - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Text dump in coordinate format: one `i j value` line per entry.
    pub fn dump_coo(&self, path: &std::path::Path) -> Result<()> {
        use std::fmt::Write as _;
        let mut out = String::new();
        for i in 0..self.n {
            for idx in self.indptr[i]..self.indptr[i + 1] {
                let _ = writeln!(out, "{} {} {:.17e}", i, self.indices[idx], self.data[idx]);
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

#[derive(Clone, Debug)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

/// Averaging rule for the dG weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightRule {
    HarmonicSwip,
    Arithmetic,
}

#[derive(Clone, Copy, Debug)]
pub struct DgParams {
    /// User penalty scale; the effective penalty is `beta * degree^2`.
    pub beta: f64,
    pub weights: WeightRule,
}

impl Default for DgParams {
    fn default() -> Self {
        DgParams {
            beta: 10.0,
            weights: WeightRule::HarmonicSwip,
        }
    }
}

impl DgParams {
    pub fn beta_for(&self, degree: usize) -> f64 {
        self.beta * (degree * degree) as f64
    }
}

/// Diffusion-weighted averaging weights (alpha_-, alpha_+) on an interior
/// edge; boundary edges use alpha_- = 1.
pub fn swip_weights(k_minus: f64, k_plus: f64, rule: WeightRule) -> Result<(f64, f64)> {
    if k_minus <= 0.0 || k_plus <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "conductivities must be positive (got {k_minus}, {k_plus})"
        )));
    }
    Ok(match rule {
        WeightRule::HarmonicSwip => {
            let s = k_minus + k_plus;
            (k_plus / s, k_minus / s)
        }
        WeightRule::Arithmetic => (0.5, 0.5),
    })
}

/// Stabilization parameter gamma_e on an interior edge.
pub fn swip_penalty(k_minus: f64, k_plus: f64, beta: f64, rule: WeightRule) -> f64 {
    assert!(k_minus > 0.0 && k_plus > 0.0 && beta > 0.0);
    match rule {
        WeightRule::HarmonicSwip => beta * k_minus * k_plus / (k_minus + k_plus),
        WeightRule::Arithmetic => beta * 0.5 * (k_minus + k_plus),
    }
}

fn tri_basis_phys(
    mesh: &Mesh,
    t: usize,
    degree: usize,
    broken: bool,
    p_phys: Vec2,
) -> (usize, [f64; 6], [Vec2; 6]) {
    let [a, b, c] = mesh.tri_vertices(t);
    let lam = barycentric(a, b, c, p_phys);
    let q = Vec2::new(lam[1], lam[2]);
    let (n, vals, ref_grads) = if broken {
        broken_basis(degree, q)
    } else {
        lagrange_basis(degree, q)
    };
    let j = crate::Mat2::from_columns(&[b - a, c - a]);
    let jinv_t = j.try_inverse().unwrap().transpose();
    let mut grads = [Vec2::zeros(); 6];
    for k in 0..n {
        grads[k] = jinv_t * ref_grads[k];
    }
    (n, vals, grads)
}

/// Stiffness + mass matrix of the conforming form `k grad u . grad v + u v`.
pub fn cg_matrix(mesh: &Mesh, k: &[f64], degree: usize) -> CsrMatrix {
    let space = SpaceDescriptor::cg(degree);
    let ndof = space.dof_count(mesh);
    let rule = QuadRule::triangle(2 * degree);
    let blocks: Vec<Vec<(usize, usize, f64)>> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| element_block(mesh, t, k[t], degree, false, &rule, &space))
        .collect();
    let triplets: Vec<(usize, usize, f64)> = blocks.into_iter().flatten().collect();
    CsrMatrix::from_triplets(ndof, &triplets)
}

fn element_block(
    mesh: &Mesh,
    t: usize,
    kt: f64,
    degree: usize,
    broken: bool,
    rule: &QuadRule,
    space: &SpaceDescriptor,
) -> Vec<(usize, usize, f64)> {
    let dofs = space.cell_dofs(mesh, t);
    let nb = dofs.len();
    let [a, b, c] = mesh.tri_vertices(t);
    let jac = 2.0 * mesh.area(t);
    let mut local = vec![0.0; nb * nb];
    for (q, &w) in rule.points.iter().zip(&rule.weights) {
        let p = a + (b - a) * q.x + (c - a) * q.y;
        let (n, vals, grads) = tri_basis_phys(mesh, t, degree, broken, p);
        for i in 0..n {
            for j in 0..n {
                local[i * nb + j] +=
                    w * jac * (kt * grads[i].dot(&grads[j]) + vals[i] * vals[j]);
            }
        }
    }
    let mut out = Vec::with_capacity(nb * nb);
    for i in 0..nb {
        for j in 0..nb {
            out.push((dofs[i], dofs[j], local[i * nb + j]));
        }
    }
    out
}

/// Neumann load vector for the conforming space: `int_bnd g v ds`.
pub fn cg_neumann_rhs(mesh: &Mesh, degree: usize, g: &dyn Fn(Vec2) -> f64) -> Vec<f64> {
    let space = SpaceDescriptor::cg(degree);
    let mut rhs = vec![0.0; space.dof_count(mesh)];
    let quad = QuadRule::edge(9);
    for (e, edge) in mesh.edges.iter().enumerate() {
        if !edge.is_boundary() {
            continue;
        }
        let t = edge.t_minus;
        let dofs = space.cell_dofs(mesh, t);
        let len = mesh.edge_len(e);
        for (&s, &w) in quad.points.iter().zip(&quad.weights) {
            let p = mesh.edge_point(e, s);
            let (n, vals, _) = tri_basis_phys(mesh, t, degree, false, p);
            let gv = g(p);
            for i in 0..n {
                rhs[dofs[i]] += w * len * gv * vals[i];
            }
        }
    }
    rhs
}

/// Volume load vector `int (a . grad v + b v)` with `(a, b) = f(t, x)`.
pub fn volume_rhs(
    mesh: &Mesh,
    degree: usize,
    broken: bool,
    quad_degree: usize,
    f: &(dyn Fn(usize, Vec2) -> (Vec2, f64) + Sync),
) -> Vec<f64> {
    let space = if broken {
        SpaceDescriptor::broken(degree)
    } else {
        SpaceDescriptor::cg(degree)
    };
    let rule = QuadRule::triangle(quad_degree);
    let mut rhs = vec![0.0; space.dof_count(mesh)];
    let per_tri: Vec<(Vec<usize>, Vec<f64>)> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| {
            let dofs = space.cell_dofs(mesh, t);
            let [a, b, c] = mesh.tri_vertices(t);
            let jac = 2.0 * mesh.area(t);
            let mut local = vec![0.0; dofs.len()];
            for (q, &w) in rule.points.iter().zip(&rule.weights) {
                let p = a + (b - a) * q.x + (c - a) * q.y;
                let (n, vals, grads) = tri_basis_phys(mesh, t, degree, broken, p);
                let (av, bv) = f(t, p);
                for i in 0..n {
                    local[i] += w * jac * (av.dot(&grads[i]) + bv * vals[i]);
                }
            }
            (dofs, local)
        })
        .collect();
    for (dofs, local) in per_tri {
        for (d, v) in dofs.into_iter().zip(local) {
            rhs[d] += v;
        }
    }
    rhs
}

/// Boundary dof indices and prescribed values for strong Dirichlet
/// imposition on the conforming space (vertex nodes, plus boundary edge
/// midpoints for P2).
pub fn cg_dirichlet_values(
    mesh: &Mesh,
    degree: usize,
    u_d: &dyn Fn(Vec2) -> f64,
) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for v in 0..mesh.n_vertices() {
        if mesh.boundary_vertex[v] {
            out.push((v, u_d(mesh.vertices[v])));
        }
    }
    if degree == 2 {
        let nv = mesh.n_vertices();
        for (e, edge) in mesh.edges.iter().enumerate() {
            if edge.is_boundary() {
                out.push((nv + e, u_d(mesh.edge_midpoint(e))));
            }
        }
    }
    out
}

/// Symmetric elimination of Dirichlet dofs: constrained rows/columns are
/// replaced by the identity and their couplings moved to the right-hand
/// side. The eliminated matrix depends only on the constrained set, so one
/// factorization serves any number of boundary data vectors.
pub struct DirichletLift {
    pub full: CsrMatrix,
    pub eliminated: CsrMatrix,
    constrained: Vec<usize>,
    mask: Vec<bool>,
}

impl DirichletLift {
    pub fn new(full: CsrMatrix, constrained_dofs: &[usize]) -> DirichletLift {
        let mut constrained = constrained_dofs.to_vec();
        constrained.sort_unstable();
        constrained.dedup();
        let mut mask = vec![false; full.n];
        for &d in &constrained {
            mask[d] = true;
        }
        let mut triplets = Vec::with_capacity(full.nnz() + constrained.len());
        for i in 0..full.n {
            if mask[i] {
                continue;
            }
            for idx in full.indptr[i]..full.indptr[i + 1] {
                let j = full.indices[idx];
                if !mask[j] {
                    triplets.push((i, j, full.data[idx]));
                }
            }
        }
        for &d in &constrained {
            triplets.push((d, d, 1.0));
        }
        let eliminated = CsrMatrix::from_triplets(full.n, &triplets);
        DirichletLift {
            full,
            eliminated,
            constrained,
            mask,
        }
    }

    pub fn constrained(&self) -> &[usize] {
        &self.constrained
    }

    /// Build the eliminated right-hand side from the unconstrained load and
    /// the constrained values (aligned with `constrained()`).
    pub fn rhs(&self, load: &[f64], values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.constrained.len());
        let mut val_of = vec![0.0; self.full.n];
        for (&d, &v) in self.constrained.iter().zip(values) {
            val_of[d] = v;
        }
        let mut out = load.to_vec();
        for i in 0..self.full.n {
            if self.mask[i] {
                out[i] = val_of[i];
                continue;
            }
            for idx in self.full.indptr[i]..self.full.indptr[i + 1] {
                let j = self.full.indices[idx];
                if self.mask[j] {
                    out[i] -= self.full.data[idx] * val_of[j];
                }
            }
        }
        out
    }
}

/// SWIP-dG system matrix for the broken Lagrange space of the given degree.
/// `zeta = 1` for the Neumann variant (no boundary terms), `zeta = 0` for
/// weak Dirichlet imposition.
pub fn dg_matrix(mesh: &Mesh, k: &[f64], degree: usize, zeta: f64, params: &DgParams) -> CsrMatrix {
    let space = SpaceDescriptor::broken(degree);
    let ndof = space.dof_count(mesh);
    let beta = params.beta_for(degree);
    let vol_rule = QuadRule::triangle(2 * degree);
    let mut triplets: Vec<(usize, usize, f64)> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| element_block(mesh, t, k[t], degree, true, &vol_rule, &space))
        .flatten()
        .collect();

    let edge_rule = QuadRule::edge(2 * degree + 1);
    let nb = space.local_dim();
    for (e, edge) in mesh.edges.iter().enumerate() {
        let tm = edge.t_minus;
        let len = mesh.edge_len(e);
        let n_e = mesh.edge_normal(e);
        match edge.t_plus {
            Some(tp) => {
                let (am, ap) = swip_weights(k[tm], k[tp], params.weights).unwrap();
                let gamma = swip_penalty(k[tm], k[tp], beta, params.weights);
                let dofs_m = space.cell_dofs(mesh, tm);
                let dofs_p = space.cell_dofs(mesh, tp);
                let mut local = vec![0.0; 4 * nb * nb];
                for (&s, &w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                    let p = mesh.edge_point(e, s);
                    let (_, vm, gm) = tri_basis_phys(mesh, tm, degree, true, p);
                    let (_, vp, gp) = tri_basis_phys(mesh, tp, degree, true, p);
                    // stacked trace data: jump sign and weighted-average flux
                    let mut jump = [0.0; 12];
                    let mut avg = [0.0; 12];
                    for i in 0..nb {
                        jump[i] = vm[i];
                        jump[nb + i] = -vp[i];
                        avg[i] = am * k[tm] * gm[i].dot(&n_e);
                        avg[nb + i] = ap * k[tp] * gp[i].dot(&n_e);
                    }
                    let ws = w * len;
                    for i in 0..2 * nb {
                        for j in 0..2 * nb {
                            local[i * 2 * nb + j] += ws
                                * (-(avg[j] * jump[i] + jump[j] * avg[i])
                                    + gamma / len * jump[j] * jump[i]);
                        }
                    }
                }
                let all: Vec<usize> = dofs_m.iter().chain(dofs_p.iter()).copied().collect();
                for i in 0..2 * nb {
                    for j in 0..2 * nb {
                        triplets.push((all[i], all[j], local[i * 2 * nb + j]));
                    }
                }
            }
            None => {
                if zeta == 1.0 {
                    continue;
                }
                let gamma = beta * k[tm];
                let dofs = space.cell_dofs(mesh, tm);
                let mut local = vec![0.0; nb * nb];
                for (&s, &w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                    let p = mesh.edge_point(e, s);
                    let (_, v, g) = tri_basis_phys(mesh, tm, degree, true, p);
                    let ws = w * len * (1.0 - zeta);
                    for i in 0..nb {
                        let fi = k[tm] * g[i].dot(&n_e);
                        for j in 0..nb {
                            let fj = k[tm] * g[j].dot(&n_e);
                            local[i * nb + j] +=
                                ws * (-(fj * v[i] + v[j] * fi) + gamma / len * v[j] * v[i]);
                        }
                    }
                }
                for i in 0..nb {
                    for j in 0..nb {
                        triplets.push((dofs[i], dofs[j], local[i * nb + j]));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(ndof, &triplets)
}

/// Neumann load for the broken space.
pub fn dg_neumann_rhs(mesh: &Mesh, degree: usize, g: &dyn Fn(Vec2) -> f64) -> Vec<f64> {
    let space = SpaceDescriptor::broken(degree);
    let mut rhs = vec![0.0; space.dof_count(mesh)];
    let quad = QuadRule::edge(9);
    for (e, edge) in mesh.edges.iter().enumerate() {
        if !edge.is_boundary() {
            continue;
        }
        let t = edge.t_minus;
        let dofs = space.cell_dofs(mesh, t);
        let len = mesh.edge_len(e);
        for (&s, &w) in quad.points.iter().zip(&quad.weights) {
            let p = mesh.edge_point(e, s);
            let (n, vals, _) = tri_basis_phys(mesh, t, degree, true, p);
            for i in 0..n {
                rhs[dofs[i]] += w * len * g(p) * vals[i];
            }
        }
    }
    rhs
}

/// Weak Dirichlet load: `int U_D (gamma_e/|e| v - k grad v . n) ds`.
pub fn dg_dirichlet_rhs(
    mesh: &Mesh,
    k: &[f64],
    degree: usize,
    params: &DgParams,
    u_d: &dyn Fn(Vec2) -> f64,
) -> Vec<f64> {
    let space = SpaceDescriptor::broken(degree);
    let beta = params.beta_for(degree);
    let mut rhs = vec![0.0; space.dof_count(mesh)];
    let quad = QuadRule::edge(9);
    for (e, edge) in mesh.edges.iter().enumerate() {
        if !edge.is_boundary() {
            continue;
        }
        let t = edge.t_minus;
        let gamma = beta * k[t];
        let dofs = space.cell_dofs(mesh, t);
        let len = mesh.edge_len(e);
        let n_e = mesh.edge_normal(e);
        for (&s, &w) in quad.points.iter().zip(&quad.weights) {
            let p = mesh.edge_point(e, s);
            let (n, vals, grads) = tri_basis_phys(mesh, t, degree, true, p);
            let ud = u_d(p);
            for i in 0..n {
                rhs[dofs[i]] +=
                    w * len * ud * (gamma / len * vals[i] - k[t] * grads[i].dot(&n_e));
            }
        }
    }
    rhs
}

/// Assembled conforming system per boundary-condition variant.
pub enum CgBc<'a> {
    Neumann { g: &'a dyn Fn(Vec2) -> f64 },
    Dirichlet { u_d: &'a dyn Fn(Vec2) -> f64 },
}

pub fn assemble_cg(mesh: &Mesh, k: &[f64], degree: usize, bc: CgBc) -> SparseSystem {
    let full = cg_matrix(mesh, k, degree);
    match bc {
        CgBc::Neumann { g } => {
            let rhs = cg_neumann_rhs(mesh, degree, g);
            SparseSystem { matrix: full, rhs }
        }
        CgBc::Dirichlet { u_d } => {
            let bv = cg_dirichlet_values(mesh, degree, u_d);
            let dofs: Vec<usize> = bv.iter().map(|&(d, _)| d).collect();
            let vals: Vec<f64> = bv.iter().map(|&(_, v)| v).collect();
            let lift = DirichletLift::new(full, &dofs);
            let rhs = lift.rhs(&vec![0.0; lift.full.n], &vals);
            SparseSystem {
                matrix: lift.eliminated,
                rhs,
            }
        }
    }
}

pub enum DgBc<'a> {
    Neumann { g: &'a dyn Fn(Vec2) -> f64 },
    Dirichlet { u_d: &'a dyn Fn(Vec2) -> f64 },
}

pub fn assemble_dg(
    mesh: &Mesh,
    k: &[f64],
    degree: usize,
    params: &DgParams,
    bc: DgBc,
) -> SparseSystem {
    match bc {
        DgBc::Neumann { g } => SparseSystem {
            matrix: dg_matrix(mesh, k, degree, 1.0, params),
            rhs: dg_neumann_rhs(mesh, degree, g),
        },
        DgBc::Dirichlet { u_d } => SparseSystem {
            matrix: dg_matrix(mesh, k, degree, 0.0, params),
            rhs: dg_dirichlet_rhs(mesh, k, degree, params, u_d),
        },
    }
}

/// Reusable factorization of an SPD system matrix: sparse Cholesky, with a
/// Jacobi-preconditioned CG fallback if the factorization is refused.
pub struct Factorization {
    matrix: CsrMatrix,
    cholesky: Option<faer::sparse::linalg::solvers::Cholesky<usize, f64>>,
}

const SOLVE_TOL: f64 = 1e-10;

impl Factorization {
    pub fn new(matrix: CsrMatrix) -> Result<Factorization> {
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(matrix.nnz());
        for i in 0..matrix.n {
            for idx in matrix.indptr[i]..matrix.indptr[i + 1] {
                triplets.push((i, matrix.indices[idx], matrix.data[idx]));
            }
        }
        let cholesky = SparseColMat::<usize, f64>::try_new_from_triplets(
            matrix.n,
            matrix.n,
            &triplets,
        )
        .ok()
        .and_then(|a| a.sp_cholesky(faer::Side::Lower).ok());
        Ok(Factorization { matrix, cholesky })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.matrix.n;
        assert_eq!(rhs.len(), n);
        let bnorm = norm(rhs);
        if bnorm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let mut x = match &self.cholesky {
            Some(llt) => {
                let b = faer::Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
                let sol = llt.solve(&b);
                (0..n).map(|i| sol.read(i, 0)).collect::<Vec<f64>>()
            }
            None => vec![0.0; n],
        };
        let mut r = residual(&self.matrix, &x, rhs);
        if norm(&r) > SOLVE_TOL * bnorm {
            // polish (or solve from scratch) with preconditioned CG
            pcg(&self.matrix, rhs, &mut x, SOLVE_TOL * 1e-2)?;
            r = residual(&self.matrix, &x, rhs);
        }
        let rel = norm(&r) / bnorm;
        if rel > SOLVE_TOL {
            return Err(Error::Solve(format!(
                "relative residual {rel:.3e} exceeds {SOLVE_TOL:.1e} (n = {n}, nnz = {}); \
                 if this is a dG system the penalty beta may be too small",
                self.matrix.nnz()
            )));
        }
        Ok(x)
    }
}

/// One-shot solve of an assembled system.
pub fn solve(system: &SparseSystem) -> Result<Vec<f64>> {
    Factorization::new(system.matrix.clone())?.solve(&system.rhs)
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.matvec(x);
    ax.iter().zip(b).map(|(axi, bi)| axi - bi).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64) -> Result<()> {
    let n = a.n;
    let diag = a.diag();
    let minv: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let bnorm = norm(b);
    let mut r = residual(a, x, b);
    for ri in r.iter_mut() {
        *ri = -*ri; // r = b - Ax
    }
    let mut z: Vec<f64> = r.iter().zip(&minv).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let max_iter = 400 * (n as f64).sqrt() as usize + 2000;
    for _ in 0..max_iter {
        if norm(&r) <= tol * bnorm {
            return Ok(());
        }
        let ap = a.matvec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Solve(
                "matrix is not positive definite (dG penalty beta too small?)".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * minv[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if norm(&r) <= tol.max(SOLVE_TOL) * bnorm {
        Ok(())
    } else {
        Err(Error::Solve(format!(
            "PCG stalled at relative residual {:.3e}",
            norm(&r) / bnorm
        )))
    }
}

/// Dense solve of a patch-local saddle system with a residual guard.
pub fn solve_patch_saddle(a: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let scale = a.norm() + rhs.norm();
    let lu = a.clone().lu();
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Solve("singular patch saddle system".into()))?;
    let res = (&a * &x - &rhs).norm();
    if res > 1e-11 * scale.max(1.0) {
        return Err(Error::Solve(format!(
            "patch saddle residual {res:.3e} too large (scale {scale:.3e})"
        )));
    }
    Ok(x)
}

#[cfg(test)]
mod tests;
