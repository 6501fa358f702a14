//! Discrete spaces over a triangulation: continuous Lagrange P1/P2, broken
//! (element-wise) P0/P1/P2, and Raviart-Thomas RT0/RT1, with the projection
//! and interpolation operators the error estimators need.
//!
//! Global RT degrees of freedom are edge moments against the global edge
//! normal `n_e` (from `T-` to `T+`) and, for RT1, the Legendre moment against
//! `2t - 1` in the canonical edge parameter (lower vertex index to higher)
//! plus two interior moments per element. Edge moments seen from an element
//! whose outward normal opposes `n_e` pick up a sign, handled by
//! [`Mesh::edge_sign`].

use crate::mesh::{barycentric, Mesh};
use crate::quad::{EdgeQuad, QuadRule};
use crate::{Mat2, Vec2};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    LagrangeCg,
    Broken,
    RaviartThomas,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    Vector2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpaceDescriptor {
    pub family: Family,
    pub degree: usize,
    pub rank: Rank,
}

impl SpaceDescriptor {
    pub fn cg(degree: usize) -> Self {
        assert!((1..=2).contains(&degree), "Lagrange CG supports degree 1..2");
        SpaceDescriptor {
            family: Family::LagrangeCg,
            degree,
            rank: Rank::Scalar,
        }
    }

    pub fn cg_vec2(degree: usize) -> Self {
        assert!((1..=2).contains(&degree));
        SpaceDescriptor {
            family: Family::LagrangeCg,
            degree,
            rank: Rank::Vector2,
        }
    }

    pub fn broken(degree: usize) -> Self {
        assert!(degree <= 2, "broken spaces support degree 0..2");
        SpaceDescriptor {
            family: Family::Broken,
            degree,
            rank: Rank::Scalar,
        }
    }

    pub fn rt(degree: usize) -> Self {
        assert!(degree <= 1, "Raviart-Thomas supports degree 0..1");
        SpaceDescriptor {
            family: Family::RaviartThomas,
            degree,
            rank: Rank::Scalar,
        }
    }

    /// Scalar basis functions per element (before rank doubling).
    pub fn local_dim(&self) -> usize {
        match (self.family, self.degree) {
            (Family::LagrangeCg, 1) => 3,
            (Family::LagrangeCg, 2) => 6,
            (Family::Broken, 0) => 1,
            (Family::Broken, 1) => 3,
            (Family::Broken, 2) => 6,
            (Family::RaviartThomas, 0) => 3,
            (Family::RaviartThomas, 1) => 8,
            _ => unreachable!(),
        }
    }

    pub fn dof_count(&self, mesh: &Mesh) -> usize {
        let scalar = match (self.family, self.degree) {
            (Family::LagrangeCg, 1) => mesh.n_vertices(),
            (Family::LagrangeCg, 2) => mesh.n_vertices() + mesh.n_edges(),
            (Family::Broken, k) => mesh.n_triangles() * SpaceDescriptor::broken(k).local_dim(),
            (Family::RaviartThomas, 0) => mesh.n_edges(),
            (Family::RaviartThomas, 1) => 2 * mesh.n_edges() + 2 * mesh.n_triangles(),
            _ => unreachable!(),
        };
        match self.rank {
            Rank::Scalar => scalar,
            Rank::Vector2 => 2 * scalar,
        }
    }

    /// Global dof indices of element `t`, in local basis order.
    pub fn cell_dofs(&self, mesh: &Mesh, t: usize) -> Vec<usize> {
        let mut scalar = Vec::with_capacity(self.local_dim());
        match (self.family, self.degree) {
            (Family::LagrangeCg, 1) => scalar.extend_from_slice(&mesh.triangles[t]),
            (Family::LagrangeCg, 2) => {
                scalar.extend_from_slice(&mesh.triangles[t]);
                let nv = mesh.n_vertices();
                for k in 0..3 {
                    scalar.push(nv + mesh.tri_edges[t][k]);
                }
            }
            (Family::Broken, k) => {
                let nb = SpaceDescriptor::broken(k).local_dim();
                scalar.extend(t * nb..(t + 1) * nb);
            }
            (Family::RaviartThomas, 0) => {
                scalar.extend_from_slice(&mesh.tri_edges[t]);
            }
            (Family::RaviartThomas, 1) => {
                for k in 0..3 {
                    let e = mesh.tri_edges[t][k];
                    scalar.push(2 * e);
                    scalar.push(2 * e + 1);
                }
                let base = 2 * mesh.n_edges();
                scalar.push(base + 2 * t);
                scalar.push(base + 2 * t + 1);
            }
            _ => unreachable!(),
        }
        match self.rank {
            Rank::Scalar => scalar,
            Rank::Vector2 => {
                let mut out = Vec::with_capacity(2 * scalar.len());
                for d in scalar {
                    out.push(2 * d);
                    out.push(2 * d + 1);
                }
                out
            }
        }
    }
}

/// Values and reference gradients of the scalar Lagrange basis at a
/// reference point. Order: vertices 0..3, then (for P2) the midpoint node of
/// the edge opposite each vertex.
pub fn lagrange_basis(degree: usize, p: Vec2) -> (usize, [f64; 6], [Vec2; 6]) {
    let lam = [1.0 - p.x - p.y, p.x, p.y];
    let dlam = [Vec2::new(-1.0, -1.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
    let mut vals = [0.0; 6];
    let mut grads = [Vec2::zeros(); 6];
    match degree {
        1 => {
            for k in 0..3 {
                vals[k] = lam[k];
                grads[k] = dlam[k];
            }
            (3, vals, grads)
        }
        2 => {
            for k in 0..3 {
                vals[k] = lam[k] * (2.0 * lam[k] - 1.0);
                grads[k] = dlam[k] * (4.0 * lam[k] - 1.0);
            }
            for k in 0..3 {
                let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                vals[3 + k] = 4.0 * lam[i] * lam[j];
                grads[3 + k] = 4.0 * (dlam[i] * lam[j] + dlam[j] * lam[i]);
            }
            (6, vals, grads)
        }
        _ => panic!("unsupported Lagrange degree {degree}"),
    }
}

/// Broken (modal-free, nodal) basis: P0 is the constant 1, P1/P2 reuse the
/// Lagrange bases element-wise.
pub fn broken_basis(degree: usize, p: Vec2) -> (usize, [f64; 6], [Vec2; 6]) {
    if degree == 0 {
        let mut vals = [0.0; 6];
        vals[0] = 1.0;
        (1, vals, [Vec2::zeros(); 6])
    } else {
        lagrange_basis(degree, p)
    }
}

/// A coefficient vector over a discrete space on a mesh.
#[derive(Clone, Debug)]
pub struct Field {
    pub space: SpaceDescriptor,
    pub mesh: Arc<Mesh>,
    pub coeffs: Vec<f64>,
}

impl Field {
    pub fn zeros(space: SpaceDescriptor, mesh: Arc<Mesh>) -> Field {
        let n = space.dof_count(&mesh);
        Field {
            space,
            mesh,
            coeffs: vec![0.0; n],
        }
    }

    pub fn from_coeffs(space: SpaceDescriptor, mesh: Arc<Mesh>, coeffs: Vec<f64>) -> Field {
        assert_eq!(coeffs.len(), space.dof_count(&mesh));
        Field { space, mesh, coeffs }
    }

    fn affine(&self, t: usize) -> (Vec2, Mat2, Mat2) {
        let [a, b, c] = self.mesh.tri_vertices(t);
        let j = Mat2::from_columns(&[b - a, c - a]);
        let jinv_t = j.try_inverse().expect("degenerate element").transpose();
        (a, j, jinv_t)
    }

    /// Scalar Lagrange/broken evaluation at reference points: value and
    /// physical gradient.
    pub fn eval_scalar(&self, t: usize, ref_pts: &[Vec2]) -> Vec<(f64, Vec2)> {
        assert_eq!(self.space.rank, Rank::Scalar);
        let (_, _, jinv_t) = self.affine(t);
        let dofs = self.space.cell_dofs(&self.mesh, t);
        ref_pts
            .iter()
            .map(|&q| {
                let (n, vals, grads) = match self.space.family {
                    Family::LagrangeCg => lagrange_basis(self.space.degree, q),
                    Family::Broken => broken_basis(self.space.degree, q),
                    Family::RaviartThomas => panic!("use eval_rt for RT fields"),
                };
                let mut v = 0.0;
                let mut g = Vec2::zeros();
                for k in 0..n {
                    let c = self.coeffs[dofs[k]];
                    v += c * vals[k];
                    g += c * (jinv_t * grads[k]);
                }
                (v, g)
            })
            .collect()
    }

    /// Vector-valued Lagrange evaluation: value and Jacobian
    /// (`jac[(i, j)] = d theta_i / d x_j`).
    pub fn eval_vec2(&self, t: usize, ref_pts: &[Vec2]) -> Vec<(Vec2, Mat2)> {
        assert_eq!(self.space.rank, Rank::Vector2);
        let (_, _, jinv_t) = self.affine(t);
        let dofs = self.space.cell_dofs(&self.mesh, t);
        ref_pts
            .iter()
            .map(|&q| {
                let (n, vals, grads) = lagrange_basis(self.space.degree, q);
                let mut v = Vec2::zeros();
                let mut jac = Mat2::zeros();
                for k in 0..n {
                    let g = jinv_t * grads[k];
                    for comp in 0..2 {
                        let c = self.coeffs[dofs[2 * k + comp]];
                        v[comp] += c * vals[k];
                        jac[(comp, 0)] += c * g.x;
                        jac[(comp, 1)] += c * g.y;
                    }
                }
                (v, jac)
            })
            .collect()
    }

    /// Raviart-Thomas evaluation at reference points: vector value and
    /// divergence.
    pub fn eval_rt(&self, t: usize, ref_pts: &[Vec2]) -> Vec<(Vec2, f64)> {
        assert_eq!(self.space.family, Family::RaviartThomas);
        let (a, j, _) = self.affine(t);
        let local = RtLocal::new(&self.mesh, t, self.space.degree);
        let dofs = self.space.cell_dofs(&self.mesh, t);
        let lv = self.local_rt_coeffs(t, &dofs);
        ref_pts
            .iter()
            .map(|&q| {
                let p = a + j * q;
                local.combine(&lv, p)
            })
            .collect()
    }

    /// Same, at physical points inside element `t`.
    pub fn eval_rt_phys(&self, t: usize, pts: &[Vec2]) -> Vec<(Vec2, f64)> {
        assert_eq!(self.space.family, Family::RaviartThomas);
        let local = RtLocal::new(&self.mesh, t, self.space.degree);
        let dofs = self.space.cell_dofs(&self.mesh, t);
        let lv = self.local_rt_coeffs(t, &dofs);
        pts.iter().map(|&p| local.combine(&lv, p)).collect()
    }

    /// Local dof values of an RT field on `t` (edge moments flipped to the
    /// element's outward normal).
    fn local_rt_coeffs(&self, t: usize, dofs: &[usize]) -> Vec<f64> {
        match self.space.degree {
            0 => (0..3)
                .map(|k| self.mesh.edge_sign(t, k) * self.coeffs[dofs[k]])
                .collect(),
            1 => {
                let mut lv = Vec::with_capacity(8);
                for k in 0..3 {
                    let s = self.mesh.edge_sign(t, k);
                    lv.push(s * self.coeffs[dofs[2 * k]]);
                    lv.push(s * self.coeffs[dofs[2 * k + 1]]);
                }
                lv.push(self.coeffs[dofs[6]]);
                lv.push(self.coeffs[dofs[7]]);
                lv
            }
            _ => unreachable!(),
        }
    }

    /// Scalar evaluation at a physical point known to lie in element `t`.
    pub fn eval_scalar_phys(&self, t: usize, p: Vec2) -> (f64, Vec2) {
        let [a, b, c] = self.mesh.tri_vertices(t);
        let lam = barycentric(a, b, c, p);
        self.eval_scalar(t, &[Vec2::new(lam[1], lam[2])])[0]
    }

    pub fn eval_vec2_phys(&self, t: usize, p: Vec2) -> (Vec2, Mat2) {
        let [a, b, c] = self.mesh.tri_vertices(t);
        let lam = barycentric(a, b, c, p);
        self.eval_vec2(t, &[Vec2::new(lam[1], lam[2])])[0]
    }
}

/// Nodal interpolation into a continuous Lagrange space.
pub fn interpolate_cg(mesh: &Arc<Mesh>, degree: usize, f: impl Fn(Vec2) -> f64) -> Field {
    let space = SpaceDescriptor::cg(degree);
    let mut coeffs: Vec<f64> = mesh.vertices.iter().map(|&p| f(p)).collect();
    if degree == 2 {
        coeffs.extend((0..mesh.n_edges()).map(|e| f(mesh.edge_midpoint(e))));
    }
    Field::from_coeffs(space, mesh.clone(), coeffs)
}

/// Element-wise nodal interpolation into a broken Lagrange space (degree >= 1).
pub fn interpolate_broken(mesh: &Arc<Mesh>, degree: usize, f: impl Fn(Vec2) -> f64) -> Field {
    assert!(degree >= 1);
    let space = SpaceDescriptor::broken(degree);
    let mut coeffs = Vec::with_capacity(space.dof_count(mesh));
    for t in 0..mesh.n_triangles() {
        let [a, b, c] = mesh.tri_vertices(t);
        coeffs.push(f(a));
        coeffs.push(f(b));
        coeffs.push(f(c));
        if degree == 2 {
            coeffs.push(f(0.5 * (b + c)));
            coeffs.push(f(0.5 * (c + a)));
            coeffs.push(f(0.5 * (a + b)));
        }
    }
    Field::from_coeffs(space, mesh.clone(), coeffs)
}

/// Element-wise L2 projection onto the broken Pk space.
///
/// `f` receives the element index and a physical point; the quadrature must
/// be exact for `2 kappa + deg f` when `f` is polynomial.
pub fn project_broken(
    mesh: &Arc<Mesh>,
    kappa: usize,
    quad_degree: usize,
    f: impl Fn(usize, Vec2) -> f64,
) -> Field {
    let space = SpaceDescriptor::broken(kappa);
    let rule = QuadRule::triangle(quad_degree.max(2 * kappa));
    let nb = space.local_dim();
    let mut coeffs = vec![0.0; space.dof_count(mesh)];
    for t in 0..mesh.n_triangles() {
        let [a, b, c] = mesh.tri_vertices(t);
        let jac = 2.0 * mesh.area(t);
        let mut mass = DMatrix::<f64>::zeros(nb, nb);
        let mut rhs = DVector::<f64>::zeros(nb);
        for (q, &w) in rule.points.iter().zip(&rule.weights) {
            let p = a + (b - a) * q.x + (c - a) * q.y;
            let (n, vals, _) = broken_basis(kappa, *q);
            let fv = f(t, p);
            for i in 0..n {
                rhs[i] += w * jac * vals[i] * fv;
                for j in 0..n {
                    mass[(i, j)] += w * jac * vals[i] * vals[j];
                }
            }
        }
        let sol = mass.lu().solve(&rhs).expect("element mass matrix is SPD");
        coeffs[t * nb..(t + 1) * nb].copy_from_slice(sol.as_slice());
    }
    Field::from_coeffs(space, mesh.clone(), coeffs)
}

/// L2 projection of an existing broken/CG field onto broken P-kappa.
pub fn project_field_broken(field: &Field, kappa: usize) -> Field {
    let deg = field.space.degree;
    let mesh = field.mesh.clone();
    project_broken(&mesh, kappa, 2 * kappa + deg, |t, p| {
        field.eval_scalar_phys(t, p).0
    })
}

/// Degree-kappa polynomial on an edge in the canonical arclength parameter,
/// Legendre basis {1, 2t - 1}.
#[derive(Clone, Copy, Debug)]
pub struct EdgePolynomial {
    pub edge: usize,
    pub coeffs: [f64; 2],
}

impl EdgePolynomial {
    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs[0] + self.coeffs[1] * (2.0 * t - 1.0)
    }
}

/// Per-edge L2 projection of boundary data onto P-kappa(e), for every
/// external boundary edge. Entries for interior edges are `None`.
pub fn project_boundary(
    mesh: &Mesh,
    kappa: usize,
    quad: &EdgeQuad,
    g: impl Fn(Vec2) -> f64,
) -> Vec<Option<EdgePolynomial>> {
    assert!(kappa <= 1);
    let mut out = vec![None; mesh.n_edges()];
    for (e, edge) in mesh.edges.iter().enumerate() {
        if !edge.is_boundary() {
            continue;
        }
        let mut c0 = 0.0;
        let mut c1 = 0.0;
        for (&t, &w) in quad.points.iter().zip(&quad.weights) {
            let gv = g(mesh.edge_point(e, t));
            c0 += w * gv;
            c1 += w * gv * (2.0 * t - 1.0);
        }
        // ||1||^2 = 1, ||2t-1||^2 = 1/3 in the t parameter
        let coeffs = if kappa == 0 { [c0, 0.0] } else { [c0, 3.0 * c1] };
        out[e] = Some(EdgePolynomial { edge: e, coeffs });
    }
    out
}

/// Projection from the high-order space onto the low-order one, realized as
/// nodal interpolation at the P1 nodes (exact on P1 inputs, idempotent).
pub fn interp_low(field: &Field) -> Field {
    match (field.space.family, field.space.degree) {
        (Family::LagrangeCg, 1) | (Family::Broken, 1) => field.clone(),
        (Family::LagrangeCg, 2) => Field::from_coeffs(
            SpaceDescriptor::cg(1),
            field.mesh.clone(),
            field.coeffs[..field.mesh.n_vertices()].to_vec(),
        ),
        (Family::Broken, 2) => {
            let mesh = field.mesh.clone();
            let mut coeffs = Vec::with_capacity(3 * mesh.n_triangles());
            for t in 0..mesh.n_triangles() {
                coeffs.extend_from_slice(&field.coeffs[6 * t..6 * t + 3]);
            }
            Field::from_coeffs(SpaceDescriptor::broken(1), mesh, coeffs)
        }
        _ => panic!("interp_low expects a degree-1 or degree-2 Lagrange-type field"),
    }
}

/// Dual basis of the Raviart-Thomas dofs on one physical element.
///
/// Local dof order: for each local edge k (opposite vertex k), the moment(s)
/// of the outward normal trace against {1} (RT0) or {1, 2t-1} (RT1, canonical
/// edge parameter); RT1 appends the two interior moments against e_x, e_y.
pub struct RtLocal {
    degree: usize,
    n: usize,
    /// Column i holds the monomial coefficients of dual basis function i.
    coef: DMatrix<f64>,
    center: Vec2,
    scale: f64,
}

impl RtLocal {
    pub fn new(mesh: &Mesh, t: usize, degree: usize) -> RtLocal {
        let [a, b, c] = mesh.tri_vertices(t);
        let center = (a + b + c) / 3.0;
        let scale = ((b - a).norm() + (c - b).norm() + (a - c).norm()) / 3.0;
        let n = if degree == 0 { 3 } else { 8 };
        let verts = [a, b, c];
        let mut v = DMatrix::<f64>::zeros(n, n);
        let edge_rule = QuadRule::edge(5);
        // edge moments
        for k in 0..3 {
            let gp = mesh.triangles[t][(k + 1) % 3];
            let gq = mesh.triangles[t][(k + 2) % 3];
            let p = verts[(k + 1) % 3];
            let q = verts[(k + 2) % 3];
            let d = q - p;
            let len = d.norm();
            let n_out = Vec2::new(d.y, -d.x) / len;
            // canonical parametrization runs lower vertex id -> higher
            let flip = gp > gq;
            for (&s, &w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                let x = p + s * d;
                let t_canon = if flip { 1.0 - s } else { s };
                for (j, (mv, _)) in monomials(center, scale, degree, x).into_iter().enumerate() {
                    let flux = mv.dot(&n_out) * w * len;
                    if degree == 0 {
                        v[(k, j)] += flux;
                    } else {
                        v[(2 * k, j)] += flux;
                        v[(2 * k + 1, j)] += flux * (2.0 * t_canon - 1.0);
                    }
                }
            }
        }
        // interior moments
        if degree == 1 {
            let rule = QuadRule::triangle(2);
            let jac = 2.0 * tri_area(a, b, c);
            for (qp, &w) in rule.points.iter().zip(&rule.weights) {
                let x = a + (b - a) * qp.x + (c - a) * qp.y;
                for (j, (mv, _)) in monomials(center, scale, degree, x).into_iter().enumerate() {
                    v[(6, j)] += w * jac * mv.x;
                    v[(7, j)] += w * jac * mv.y;
                }
            }
        }
        let coef = v
            .lu()
            .solve(&DMatrix::identity(n, n))
            .expect("RT Vandermonde is invertible on non-degenerate elements");
        RtLocal {
            degree,
            n,
            coef,
            center,
            scale,
        }
    }

    /// (value, divergence) of each dual basis function at a physical point.
    pub fn basis_at(&self, p: Vec2) -> Vec<(Vec2, f64)> {
        let mono = monomials(self.center, self.scale, self.degree, p);
        (0..self.n)
            .map(|i| {
                let mut val = Vec2::zeros();
                let mut div = 0.0;
                for (j, &(mv, md)) in mono.iter().enumerate() {
                    let c = self.coef[(j, i)];
                    val += c * mv;
                    div += c * md;
                }
                (val, div)
            })
            .collect()
    }

    /// Combine local dof values into (value, divergence) at a point.
    pub fn combine(&self, local: &[f64], p: Vec2) -> (Vec2, f64) {
        let mono = monomials(self.center, self.scale, self.degree, p);
        let mut dm = vec![0.0; self.n];
        for i in 0..self.n {
            let c = local[i];
            if c == 0.0 {
                continue;
            }
            for j in 0..self.n {
                dm[j] += c * self.coef[(j, i)];
            }
        }
        let mut val = Vec2::zeros();
        let mut div = 0.0;
        for (j, &(mv, md)) in mono.iter().enumerate() {
            val += dm[j] * mv;
            div += dm[j] * md;
        }
        (val, div)
    }
}

/// RT monomial basis in centered/scaled coordinates: (value, divergence).
fn monomials(center: Vec2, scale: f64, degree: usize, p: Vec2) -> Vec<(Vec2, f64)> {
    let xi = (p.x - center.x) / scale;
    let eta = (p.y - center.y) / scale;
    let s = 1.0 / scale;
    if degree == 0 {
        vec![
            (Vec2::new(1.0, 0.0), 0.0),
            (Vec2::new(0.0, 1.0), 0.0),
            (Vec2::new(xi, eta), 2.0 * s),
        ]
    } else {
        vec![
            (Vec2::new(1.0, 0.0), 0.0),
            (Vec2::new(0.0, 1.0), 0.0),
            (Vec2::new(xi, 0.0), s),
            (Vec2::new(0.0, xi), 0.0),
            (Vec2::new(eta, 0.0), 0.0),
            (Vec2::new(0.0, eta), s),
            (Vec2::new(xi * xi, xi * eta), 3.0 * xi * s),
            (Vec2::new(xi * eta, eta * eta), 3.0 * eta * s),
        ]
    }
}

fn tri_area(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    0.5 * (b - a).perp(&(c - a))
}
