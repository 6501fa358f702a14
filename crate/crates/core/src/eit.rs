//! Impedance tomography problem definitions: piecewise-constant conductivity,
//! Neumann/Dirichlet state solves (conforming or SWIP-dG), the Kohn-Vogelius
//! misfit, its volumetric shape derivative, the higher-order adjoint solves,
//! and the H1 descent direction.

use crate::assembly::{
    cg_dirichlet_values, cg_matrix, cg_neumann_rhs, dg_dirichlet_rhs, dg_matrix, dg_neumann_rhs,
    volume_rhs, DgParams, DirichletLift, Factorization,
};
use crate::mesh::{Mesh, Region};
use crate::quad::QuadRule;
use crate::spaces::{Field, SpaceDescriptor};
use crate::validation::AnalyticSolution;
use crate::{Error, Mat2, Result, Vec2};
use rayon::prelude::*;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Discretization {
    Cg,
    Dg,
}

/// Boundary flux data g.
#[derive(Clone, Debug)]
pub enum MeasurementFn {
    /// g = cos(m * theta) in polar coordinates.
    CosM { m: u32 },
    /// g = (x + a y)^b * a^c, with the real power extended oddly to
    /// negative bases.
    Poly { a: f64, b: f64, c: f64 },
}

impl MeasurementFn {
    pub fn eval(&self, p: Vec2) -> f64 {
        match self {
            MeasurementFn::CosM { m } => (*m as f64 * p.y.atan2(p.x)).cos(),
            MeasurementFn::Poly { a, b, c } => signed_pow(p.x + a * p.y, *b) * a.powf(*c),
        }
    }
}

fn signed_pow(base: f64, exp: f64) -> f64 {
    if exp.fract() == 0.0 {
        base.powi(exp as i32)
    } else {
        base.signum() * base.abs().powf(exp)
    }
}

/// The g_j family used by the multi-measurement runs:
/// a_j = 1 + 0.1 j, b_j = (j+1)/2, c_j = j mod 2.
pub fn poly_family(count: usize) -> Vec<MeasurementFn> {
    (0..count)
        .map(|j| MeasurementFn::Poly {
            a: 1.0 + 0.1 * j as f64,
            b: (j as f64 + 1.0) / 2.0,
            c: (j % 2) as f64,
        })
        .collect()
}

/// Potential data U_D on the external boundary.
#[derive(Clone)]
pub enum DirichletData {
    /// Trace of the closed-form reference solution.
    Analytic(Arc<AnalyticSolution>),
    /// Sampled trace of a forward solve, parametrized by boundary angle.
    Sampled(Arc<BoundaryTrace>),
}

impl DirichletData {
    pub fn eval(&self, p: Vec2) -> f64 {
        match self {
            DirichletData::Analytic(sol) => sol.eval(p).expect("point inside the disk").0,
            DirichletData::Sampled(tr) => tr.eval(p),
        }
    }
}

/// Piecewise-linear periodic function of the boundary angle.
#[derive(Clone, Debug)]
pub struct BoundaryTrace {
    angles: Vec<f64>,
    values: Vec<f64>,
}

impl BoundaryTrace {
    /// Sample the boundary vertex values of a P1 CG field.
    pub fn from_boundary_values(mesh: &Mesh, coeffs: &[f64]) -> BoundaryTrace {
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for lp in &mesh.boundary_loops {
            for &v in lp {
                let p = mesh.vertices[v];
                pairs.push((p.y.atan2(p.x), coeffs[v]));
            }
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        pairs.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-14);
        BoundaryTrace {
            angles: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn eval(&self, p: Vec2) -> f64 {
        self.eval_angle(p.y.atan2(p.x))
    }

    pub fn eval_angle(&self, a: f64) -> f64 {
        let n = self.angles.len();
        assert!(n >= 2, "boundary trace needs at least two samples");
        let idx = self.angles.partition_point(|&x| x <= a);
        let two_pi = 2.0 * std::f64::consts::PI;
        let (a0, v0, a1, v1) = if idx == 0 {
            (
                self.angles[n - 1] - two_pi,
                self.values[n - 1],
                self.angles[0],
                self.values[0],
            )
        } else if idx == n {
            (
                self.angles[n - 1],
                self.values[n - 1],
                self.angles[0] + two_pi,
                self.values[0],
            )
        } else {
            (
                self.angles[idx - 1],
                self.values[idx - 1],
                self.angles[idx],
                self.values[idx],
            )
        };
        let t = (a - a0) / (a1 - a0);
        v0 + t.clamp(0.0, 1.0) * (v1 - v0)
    }
}

#[derive(Clone)]
pub struct Measurement {
    pub g: MeasurementFn,
    pub dirichlet: DirichletData,
}

/// Conductivity pair and boundary measurements.
#[derive(Clone)]
pub struct EitCase {
    pub k_inclusion: f64,
    pub k_background: f64,
    pub measurements: Vec<Measurement>,
}

impl EitCase {
    pub fn new(
        k_inclusion: f64,
        k_background: f64,
        measurements: Vec<Measurement>,
    ) -> Result<Self> {
        if k_inclusion <= 0.0 || k_background <= 0.0 {
            return Err(Error::InvalidInput("conductivities must be positive".into()));
        }
        if measurements.is_empty() {
            return Err(Error::InvalidInput("measurement list is empty".into()));
        }
        Ok(EitCase {
            k_inclusion,
            k_background,
            measurements,
        })
    }

    /// Element-wise conductivity on a labeled mesh.
    pub fn conductivity(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.region
            .iter()
            .map(|r| match r {
                Region::Inclusion => self.k_inclusion,
                Region::Background => self.k_background,
            })
            .collect()
    }
}

/// Low-order (P1) Neumann/Dirichlet solutions of one measurement.
#[derive(Clone)]
pub struct StatePair {
    pub u_n: Field,
    pub u_d: Field,
    pub disc: Discretization,
    pub measurement: usize,
}

/// Degree-2 adjoint solutions of one measurement.
#[derive(Clone)]
pub struct AdjointPair {
    pub r_n: Field,
    pub r_d: Field,
    pub disc: Discretization,
}

/// Factorization cache for one (mesh, case, discretization): the four system
/// matrices are shared by every measurement, only right-hand sides change.
pub struct EitSolvers {
    pub mesh: Arc<Mesh>,
    pub k: Vec<f64>,
    pub disc: Discretization,
    pub params: DgParams,
    state_n: Factorization,
    state_d: Factorization,
    state_d_lift: Option<DirichletLift>,
    adj_n: Option<Factorization>,
    adj_d: Option<Factorization>,
    adj_d_lift: Option<DirichletLift>,
}

impl EitSolvers {
    pub fn new(
        mesh: Arc<Mesh>,
        case: &EitCase,
        disc: Discretization,
        params: DgParams,
    ) -> Result<EitSolvers> {
        let mut s = Self::new_states_only(mesh, case, disc, params)?;
        match disc {
            Discretization::Cg => {
                let m2 = cg_matrix(&s.mesh, &s.k, 2);
                let bdofs2: Vec<usize> = cg_dirichlet_values(&s.mesh, 2, &|_| 0.0)
                    .into_iter()
                    .map(|(d, _)| d)
                    .collect();
                let lift2 = DirichletLift::new(m2.clone(), &bdofs2);
                s.adj_n = Some(Factorization::new(m2)?);
                s.adj_d = Some(Factorization::new(lift2.eliminated.clone())?);
                s.adj_d_lift = Some(lift2);
            }
            Discretization::Dg => {
                let n2 = dg_matrix(&s.mesh, &s.k, 2, 1.0, &params);
                let d2 = dg_matrix(&s.mesh, &s.k, 2, 0.0, &params);
                s.adj_n = Some(Factorization::new(n2)?);
                s.adj_d = Some(Factorization::new(d2)?);
            }
        }
        Ok(s)
    }

    /// Factorize only the state systems (line-search trial solves).
    pub fn new_states_only(
        mesh: Arc<Mesh>,
        case: &EitCase,
        disc: Discretization,
        params: DgParams,
    ) -> Result<EitSolvers> {
        let k = case.conductivity(&mesh);
        match disc {
            Discretization::Cg => {
                let m1 = cg_matrix(&mesh, &k, 1);
                let bdofs1: Vec<usize> = cg_dirichlet_values(&mesh, 1, &|_| 0.0)
                    .into_iter()
                    .map(|(d, _)| d)
                    .collect();
                let lift1 = DirichletLift::new(m1.clone(), &bdofs1);
                Ok(EitSolvers {
                    state_n: Factorization::new(m1)?,
                    state_d: Factorization::new(lift1.eliminated.clone())?,
                    state_d_lift: Some(lift1),
                    adj_n: None,
                    adj_d: None,
                    adj_d_lift: None,
                    mesh,
                    k,
                    disc,
                    params,
                })
            }
            Discretization::Dg => {
                let n1 = dg_matrix(&mesh, &k, 1, 1.0, &params);
                let d1 = dg_matrix(&mesh, &k, 1, 0.0, &params);
                Ok(EitSolvers {
                    state_n: Factorization::new(n1)?,
                    state_d: Factorization::new(d1)?,
                    state_d_lift: None,
                    adj_n: None,
                    adj_d: None,
                    adj_d_lift: None,
                    mesh,
                    k,
                    disc,
                    params,
                })
            }
        }
    }

    /// Solve the Neumann and Dirichlet state problems of measurement `j`.
    pub fn solve_states(&self, case: &EitCase, j: usize) -> Result<StatePair> {
        let meas = &case.measurements[j];
        let g = |p: Vec2| meas.g.eval(p);
        let ud = |p: Vec2| meas.dirichlet.eval(p);
        match self.disc {
            Discretization::Cg => {
                let space = SpaceDescriptor::cg(1);
                let rhs_n = cg_neumann_rhs(&self.mesh, 1, &g);
                let u_n = self.state_n.solve(&rhs_n)?;
                let lift = self.state_d_lift.as_ref().unwrap();
                let values: Vec<f64> = lift
                    .constrained()
                    .iter()
                    .map(|&d| ud(self.mesh.vertices[d]))
                    .collect();
                let rhs_d = lift.rhs(&vec![0.0; lift.full.n], &values);
                let u_d = self.state_d.solve(&rhs_d)?;
                Ok(StatePair {
                    u_n: Field::from_coeffs(space, self.mesh.clone(), u_n),
                    u_d: Field::from_coeffs(space, self.mesh.clone(), u_d),
                    disc: self.disc,
                    measurement: j,
                })
            }
            Discretization::Dg => {
                let space = SpaceDescriptor::broken(1);
                let rhs_n = dg_neumann_rhs(&self.mesh, 1, &g);
                let u_n = self.state_n.solve(&rhs_n)?;
                let rhs_d = dg_dirichlet_rhs(&self.mesh, &self.k, 1, &self.params, &ud);
                let u_d = self.state_d.solve(&rhs_d)?;
                Ok(StatePair {
                    u_n: Field::from_coeffs(space, self.mesh.clone(), u_n),
                    u_d: Field::from_coeffs(space, self.mesh.clone(), u_d),
                    disc: self.disc,
                    measurement: j,
                })
            }
        }
    }

    /// Solve all measurements of a case.
    pub fn solve_all_states(&self, case: &EitCase) -> Result<Vec<StatePair>> {
        (0..case.measurements.len())
            .into_par_iter()
            .map(|j| self.solve_states(case, j))
            .collect()
    }

    /// Solve the degree-2 adjoint pair for one state pair at direction
    /// `theta` (a P1 CG vector field on the same mesh).
    pub fn solve_adjoints(&self, states: &StatePair, theta: &Field) -> Result<AdjointPair> {
        let (rhs_n, rhs_d) = match self.disc {
            Discretization::Cg => (
                adjoint_rhs_cg(&self.mesh, &self.k, &states.u_n, theta),
                adjoint_rhs_cg(&self.mesh, &self.k, &states.u_d, theta),
            ),
            Discretization::Dg => (
                adjoint_rhs_dg(&self.mesh, &self.k, &states.u_n, theta, 1.0),
                adjoint_rhs_dg(&self.mesh, &self.k, &states.u_d, theta, 0.0),
            ),
        };
        let space = match self.disc {
            Discretization::Cg => SpaceDescriptor::cg(2),
            Discretization::Dg => SpaceDescriptor::broken(2),
        };
        let adj_n = self.adj_n.as_ref().expect("adjoint factorizations present");
        let adj_d = self.adj_d.as_ref().expect("adjoint factorizations present");
        let r_n = adj_n.solve(&rhs_n)?;
        let r_d = match (&self.adj_d_lift, self.disc) {
            (Some(lift), Discretization::Cg) => {
                let zeros = vec![0.0; lift.constrained().len()];
                let rhs = lift.rhs(&rhs_d, &zeros);
                adj_d.solve(&rhs)?
            }
            _ => adj_d.solve(&rhs_d)?,
        };
        Ok(AdjointPair {
            r_n: Field::from_coeffs(space, self.mesh.clone(), r_n),
            r_d: Field::from_coeffs(space, self.mesh.clone(), r_d),
            disc: self.disc,
        })
    }
}

/// Deformation tensor M(theta) = grad + grad^T - div * Id.
pub fn m_tensor(jac: &Mat2) -> Mat2 {
    let div = jac[(0, 0)] + jac[(1, 1)];
    jac + jac.transpose() - Mat2::identity() * div
}

/// Per-element (constant) M(theta) grad(u) and div(theta).
fn element_theta_data(u: &Field, theta: &Field, t: usize) -> (Vec2, f64) {
    let centroid_ref = [Vec2::new(1.0 / 3.0, 1.0 / 3.0)];
    let (_, jac) = theta.eval_vec2(t, &centroid_ref)[0];
    let m = m_tensor(&jac);
    let div = jac[(0, 0)] + jac[(1, 1)];
    let grad_u = u.eval_scalar(t, &centroid_ref)[0].1;
    (m * grad_u, div)
}

/// Conforming adjoint load: `int k M(theta) grad u . grad v - div(theta) u v`
/// over the P2 space.
pub fn adjoint_rhs_cg(mesh: &Mesh, k: &[f64], u: &Field, theta: &Field) -> Vec<f64> {
    volume_rhs(mesh, 2, false, 4, &|t, p| {
        let (m_grad_u, div) = element_theta_data(u, theta, t);
        let uv = u.eval_scalar_phys(t, p).0;
        (k[t] * m_grad_u, -div * uv)
    })
}

/// SWIP-dG adjoint load: the volume form plus the interface terms pairing
/// the weighted average of k M(theta) grad u with test jumps and its jump
/// with the conjugate-weighted test average, plus the Dirichlet boundary
/// term when `zeta = 0`. These edge terms make the dual weight the error of
/// the full discrete (Lagrangian) shape derivative, whose edge parts the
/// broken states excite.
pub fn adjoint_rhs_dg(mesh: &Mesh, k: &[f64], u: &Field, theta: &Field, zeta: f64) -> Vec<f64> {
    let mut rhs = volume_rhs(mesh, 2, true, 4, &|t, p| {
        let (m_grad_u, div) = element_theta_data(u, theta, t);
        let uv = u.eval_scalar_phys(t, p).0;
        (k[t] * m_grad_u, -div * uv)
    });
    let space = SpaceDescriptor::broken(2);
    let w_elem: Vec<Vec2> = (0..mesh.n_triangles())
        .map(|t| {
            let (m_grad_u, _) = element_theta_data(u, theta, t);
            k[t] * m_grad_u
        })
        .collect();
    let quad = QuadRule::edge(5);
    for (e, edge) in mesh.edges.iter().enumerate() {
        let tm = edge.t_minus;
        let n_e = mesh.edge_normal(e);
        let len = mesh.edge_len(e);
        match edge.t_plus {
            Some(tp) => {
                let (am, ap) = crate::assembly::swip_weights(
                    k[tm],
                    k[tp],
                    crate::assembly::WeightRule::HarmonicSwip,
                )
                .unwrap();
                let avg_flux = (am * w_elem[tm] + ap * w_elem[tp]).dot(&n_e);
                let jump_flux = (w_elem[tm] - w_elem[tp]).dot(&n_e);
                let dofs_m = space.cell_dofs(mesh, tm);
                let dofs_p = space.cell_dofs(mesh, tp);
                for (&s, &w) in quad.points.iter().zip(&quad.weights) {
                    let p = mesh.edge_point(e, s);
                    let ws = w * len;
                    let vm = trace_values(mesh, 2, tm, p);
                    let vp = trace_values(mesh, 2, tp, p);
                    // jump of the test function is + on T-, - on T+; the
                    // conjugate average weights the T- trace by alpha_+
                    for i in 0..dofs_m.len() {
                        rhs[dofs_m[i]] += ws * (-avg_flux * vm[i] - jump_flux * ap * vm[i]);
                    }
                    for i in 0..dofs_p.len() {
                        rhs[dofs_p[i]] += ws * (avg_flux * vp[i] - jump_flux * am * vp[i]);
                    }
                }
            }
            None => {
                if zeta == 1.0 {
                    continue;
                }
                let flux = w_elem[tm].dot(&n_e);
                let dofs = space.cell_dofs(mesh, tm);
                for (&s, &w) in quad.points.iter().zip(&quad.weights) {
                    let p = mesh.edge_point(e, s);
                    let vm = trace_values(mesh, 2, tm, p);
                    for i in 0..dofs.len() {
                        rhs[dofs[i]] -= w * len * (1.0 - zeta) * flux * vm[i];
                    }
                }
            }
        }
    }
    rhs
}

fn trace_values(mesh: &Mesh, degree: usize, t: usize, p: Vec2) -> [f64; 6] {
    let [a, b, c] = mesh.tri_vertices(t);
    let lam = crate::mesh::barycentric(a, b, c, p);
    let (_, vals, _) = crate::spaces::broken_basis(degree, Vec2::new(lam[1], lam[2]));
    vals
}

/// Kohn-Vogelius misfit `1/2 int k |grad(u_N - u_D)|^2 + |u_N - u_D|^2`.
pub fn kohn_vogelius(states: &StatePair, k: &[f64], quad_degree: usize) -> f64 {
    let mesh = &states.u_n.mesh;
    let rule = QuadRule::triangle(quad_degree);
    let diff = Field::from_coeffs(
        states.u_n.space,
        mesh.clone(),
        states
            .u_n
            .coeffs
            .iter()
            .zip(&states.u_d.coeffs)
            .map(|(a, b)| a - b)
            .collect(),
    );
    let mut j = 0.0;
    for t in 0..mesh.n_triangles() {
        let jac = 2.0 * mesh.area(t);
        for (q, &w) in rule.points.iter().zip(&rule.weights) {
            let (v, g) = diff.eval_scalar(t, &[*q])[0];
            j += 0.5 * w * jac * (k[t] * g.norm_squared() + v * v);
        }
    }
    j
}

/// Total misfit over all measurements.
pub fn kohn_vogelius_total(states: &[StatePair], k: &[f64]) -> f64 {
    states.iter().map(|s| kohn_vogelius(s, k, 2)).sum()
}

impl EitSolvers {
    /// Assembled discrete shape-derivative vector: entry (2v + c) is the
    /// exact derivative of the discrete misfit under mesh motion along the
    /// P1 basis field `phi_v e_c`.
    ///
    /// For the conforming path this is the volumetric expression; the
    /// broken path adds the dual-weighted derivatives of the SWIP edge
    /// forms, without which the volume expression misses same-order
    /// contributions excited by the state jumps.
    pub fn shape_gradient_vector(&self, case: &EitCase, states: &[StatePair]) -> Result<Vec<f64>> {
        match self.disc {
            Discretization::Cg => Ok(shape_gradient_vector_volume(&self.mesh, &self.k, states)),
            Discretization::Dg => {
                // exact chain rule: d/dmu J(u(mu); mesh(mu)) =
                //   -<G(w), theta>  (frozen-coefficient part, w = u_N - u_D)
                //   + sum_i s_i a_i(du_i, q_i)
                //   = -<G(w), theta> + sum_i s_i (F_i' - a_i')(q_i)[theta]
                // with duals a_i(v, q_i) = int k grad w . grad v + w v.
                let mut out = vec![0.0; 2 * self.mesh.n_vertices()];
                for pair in states {
                    let w = Field::from_coeffs(
                        pair.u_n.space,
                        self.mesh.clone(),
                        pair.u_n
                            .coeffs
                            .iter()
                            .zip(&pair.u_d.coeffs)
                            .map(|(a, b)| a - b)
                            .collect(),
                    );
                    g_volume_vector(&self.mesh, &self.k, &w, -1.0, &mut out);
                    let rhs = volume_rhs(&self.mesh, 1, true, 2, &|t, p| {
                        let (wv, wg) = w.eval_scalar_phys(t, p);
                        (self.k[t] * wg, wv)
                    });
                    let q_n = Field::from_coeffs(
                        pair.u_n.space,
                        self.mesh.clone(),
                        self.state_n.solve(&rhs)?,
                    );
                    let q_d = Field::from_coeffs(
                        pair.u_n.space,
                        self.mesh.clone(),
                        self.state_d.solve(&rhs)?,
                    );
                    let ud = case.measurements[pair.measurement].dirichlet.clone();
                    self.add_dg_form_derivative(&pair.u_n, &q_n, 1.0, 1.0, None, &mut out);
                    self.add_dg_form_derivative(
                        &pair.u_d,
                        &q_d,
                        0.0,
                        -1.0,
                        Some(&move |p: Vec2| ud.eval(p)),
                        &mut out,
                    );
                }
                Ok(out)
            }
        }
    }

    /// `sign * (F_i'(q)[phi e_c] - a_i'(u, q)[phi e_c])` accumulated into
    /// `out`: the mesh-motion derivatives of the SWIP forms at frozen
    /// coefficients. Trace values ride with the mesh, so only measure,
    /// normal and gradient-pullback variations survive; the penalty term's
    /// length factors cancel exactly.
    fn add_dg_form_derivative(
        &self,
        u: &Field,
        q: &Field,
        zeta: f64,
        sign: f64,
        u_d_data: Option<&dyn Fn(Vec2) -> f64>,
        out: &mut [f64],
    ) {
        let mesh = &self.mesh;
        let k = &self.k;
        let rule = QuadRule::triangle(2);
        let centroid = [Vec2::new(1.0 / 3.0, 1.0 / 3.0)];
        // volume: -a'_vol = + int k M(dtheta) grad u . grad q - div(dtheta) u q
        for t in 0..mesh.n_triangles() {
            let [a, b, c] = mesh.tri_vertices(t);
            let grads = crate::mesh::p1_gradients(a, b, c);
            let area = mesh.area(t);
            let jac = 2.0 * area;
            let gu = u.eval_scalar(t, &centroid)[0].1;
            let gq = q.eval_scalar(t, &centroid)[0].1;
            let mut uq = 0.0;
            for (qp, &w) in rule.points.iter().zip(&rule.weights) {
                let uv = u.eval_scalar(t, &[*qp])[0].0;
                let qv = q.eval_scalar(t, &[*qp])[0].0;
                uq += w * jac * uv * qv;
            }
            for (v_loc, grad_phi) in grads.iter().enumerate() {
                let v = mesh.triangles[t][v_loc];
                for comp in 0..2 {
                    let m_term = grad_phi.dot(&gu) * gq[comp] + gu[comp] * grad_phi.dot(&gq)
                        - grad_phi[comp] * gu.dot(&gq);
                    out[2 * v + comp] +=
                        sign * (k[t] * m_term * area - grad_phi[comp] * uq);
                }
            }
        }
        // edges
        let equad = QuadRule::edge(3);
        for (e, edge) in mesh.edges.iter().enumerate() {
            let tm = edge.t_minus;
            let len = mesh.edge_len(e);
            let n_e = mesh.edge_normal(e);
            match edge.t_plus {
                Some(tp) => {
                    let (am, ap) =
                        crate::assembly::swip_weights(k[tm], k[tp], self.params.weights).unwrap();
                    let gum = u.eval_scalar(tm, &centroid)[0].1;
                    let gup = u.eval_scalar(tp, &centroid)[0].1;
                    let gqm = q.eval_scalar(tm, &centroid)[0].1;
                    let gqp = q.eval_scalar(tp, &centroid)[0].1;
                    let avg_ku = am * k[tm] * gum + ap * k[tp] * gup;
                    let avg_kq = am * k[tm] * gqm + ap * k[tp] * gqp;
                    // edge integrals of the jump/trace combinations
                    let mut ju = 0.0;
                    let mut jq = 0.0;
                    let mut i0 = 0.0; // int n.Y with Y = {{k grad u}}[q] + [u]{{k grad q}}
                    let mut itau = 0.0; // int tau.Y / |e|
                    let (lo, hi) = mesh.edge_canonical(e);
                    let tau = (mesh.vertices[hi] - mesh.vertices[lo]) / len;
                    for (&s, &w) in equad.points.iter().zip(&equad.weights) {
                        let p = mesh.edge_point(e, s);
                        let jus = u.eval_scalar_phys(tm, p).0 - u.eval_scalar_phys(tp, p).0;
                        let jqs = q.eval_scalar_phys(tm, p).0 - q.eval_scalar_phys(tp, p).0;
                        ju += w * len * jus;
                        jq += w * len * jqs;
                        let y = avg_ku * jqs + avg_kq * jus;
                        i0 += w * len * n_e.dot(&y);
                        itau += w * tau.dot(&y);
                    }
                    let i0_avg = i0 / len;
                    // length and normal variations act through the edge
                    // endpoint velocities:
                    // -a' gives +(Ddtheta.tau) I0/|e| - (Ddtheta.n) Itau
                    for (vtx, s_end) in [(lo, -1.0), (hi, 1.0)] {
                        for comp in 0..2 {
                            out[2 * vtx + comp] +=
                                sign * s_end * (tau[comp] * i0_avg - n_e[comp] * itau);
                        }
                    }
                    // gradient pullback on each side
                    for (t_side, alpha, g_side_u, g_side_q) in
                        [(tm, am, gum, gqm), (tp, ap, gup, gqp)]
                    {
                        let [a, b, c] = mesh.tri_vertices(t_side);
                        let grads = crate::mesh::p1_gradients(a, b, c);
                        for (v_loc, grad_phi) in grads.iter().enumerate() {
                            let v = mesh.triangles[t_side][v_loc];
                            let ndphi = n_e.dot(grad_phi);
                            for comp in 0..2 {
                                // -a' gradient part: - alpha k (n.grad phi)
                                //   [ (e_c.grad u) Jq + (e_c.grad q) Ju ]
                                out[2 * v + comp] -= sign
                                    * alpha
                                    * k[t_side]
                                    * ndphi
                                    * (g_side_u[comp] * jq + g_side_q[comp] * ju);
                            }
                        }
                    }
                }
                None => {
                    if zeta == 1.0 {
                        continue;
                    }
                    // Dirichlet boundary: gradient variations of the
                    // consistency terms and of the weak data term
                    let gu_b = u.eval_scalar(tm, &centroid)[0].1;
                    let gq_b = q.eval_scalar(tm, &centroid)[0].1;
                    let mut int_u = 0.0;
                    let mut int_q = 0.0;
                    let mut int_ud = 0.0;
                    for (&s, &w) in equad.points.iter().zip(&equad.weights) {
                        let p = mesh.edge_point(e, s);
                        int_u += w * len * u.eval_scalar_phys(tm, p).0;
                        int_q += w * len * q.eval_scalar_phys(tm, p).0;
                        if let Some(ud) = u_d_data {
                            int_ud += w * len * ud(p);
                        }
                    }
                    let [a, b, c] = mesh.tri_vertices(tm);
                    let grads = crate::mesh::p1_gradients(a, b, c);
                    for (v_loc, grad_phi) in grads.iter().enumerate() {
                        let v = mesh.triangles[tm][v_loc];
                        let ndphi = n_e.dot(grad_phi);
                        for comp in 0..2 {
                            // -a' boundary part
                            out[2 * v + comp] -= sign
                                * k[tm]
                                * ndphi
                                * (gu_b[comp] * int_q + gq_b[comp] * int_u);
                            // +F_D' part
                            out[2 * v + comp] +=
                                sign * k[tm] * ndphi * gq_b[comp] * int_ud;
                        }
                    }
                }
            }
        }
    }

    /// `<d_h J, theta>` for an admissible direction.
    pub fn shape_gradient_action(
        &self,
        case: &EitCase,
        states: &[StatePair],
        theta: &Field,
    ) -> Result<f64> {
        check_admissible(&self.mesh, theta)?;
        let vec = self.shape_gradient_vector(case, states)?;
        Ok(vec.iter().zip(&theta.coeffs).map(|(a, b)| a * b).sum())
    }
}

/// Volumetric shape-derivative vector against the P1 vector basis:
/// entry (2v + c) is `<d_h J, phi_v e_c>`, summed over the given state pairs.
pub fn shape_gradient_vector(mesh: &Mesh, k: &[f64], states: &[StatePair]) -> Vec<f64> {
    shape_gradient_vector_volume(mesh, k, states)
}

fn shape_gradient_vector_volume(mesh: &Mesh, k: &[f64], states: &[StatePair]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * mesh.n_vertices()];
    for pair in states {
        g_volume_vector(mesh, k, &pair.u_n, 1.0, &mut out);
        g_volume_vector(mesh, k, &pair.u_d, -1.0, &mut out);
    }
    out
}

/// Accumulate `sign * <G(field), phi_v e_c>` into `out`.
fn g_volume_vector(mesh: &Mesh, k: &[f64], field: &Field, sign: f64, out: &mut [f64]) {
    let rule = QuadRule::triangle(2);
    let per_tri: Vec<[f64; 6]> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| {
            let [a, b, c] = mesh.tri_vertices(t);
            let grads = crate::mesh::p1_gradients(a, b, c);
            let area = mesh.area(t);
            let jac = 2.0 * area;
            let mut local = [0.0; 6];
            let grad_u = field.eval_scalar(t, &[Vec2::new(1.0 / 3.0, 1.0 / 3.0)])[0].1;
            let mut u2 = 0.0;
            for (q, &w) in rule.points.iter().zip(&rule.weights) {
                let (v, _) = field.eval_scalar(t, &[*q])[0];
                u2 += w * jac * v * v;
            }
            for (v_loc, grad_phi) in grads.iter().enumerate() {
                for comp in 0..2 {
                    // (grad u (x) grad u) : grad(phi e_c) reduces to
                    // du_c (grad u . grad phi)
                    let term1 = k[t] * grad_u[comp] * grad_u.dot(grad_phi) * area;
                    let term2 = 0.5 * grad_phi[comp] * (k[t] * grad_u.norm_squared() * area + u2);
                    local[2 * v_loc + comp] = sign * (term1 - term2);
                }
            }
            local
        })
        .collect();
    for (t, local) in per_tri.iter().enumerate() {
        for (v_loc, &v) in mesh.triangles[t].iter().enumerate() {
            for comp in 0..2 {
                out[2 * v + comp] += local[2 * v_loc + comp];
            }
        }
    }
}

/// `<d_h J, theta>` for an admissible direction (vanishing on the boundary).
pub fn shape_gradient_action(
    mesh: &Mesh,
    k: &[f64],
    states: &[StatePair],
    theta: &Field,
) -> Result<f64> {
    check_admissible(mesh, theta)?;
    let vec = shape_gradient_vector(mesh, k, states);
    Ok(vec.iter().zip(&theta.coeffs).map(|(a, b)| a * b).sum())
}

fn check_admissible(mesh: &Mesh, theta: &Field) -> Result<()> {
    assert_eq!(theta.space, SpaceDescriptor::cg_vec2(1));
    let scale = theta.coeffs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for v in 0..mesh.n_vertices() {
        if mesh.boundary_vertex[v] {
            let mag = theta.coeffs[2 * v].hypot(theta.coeffs[2 * v + 1]);
            if mag > 1e-12 * (1.0 + scale) {
                return Err(Error::InvalidInput(format!(
                    "direction does not vanish on the external boundary (vertex {v})"
                )));
            }
        }
    }
    Ok(())
}

/// A descent direction with its directional-derivative value.
#[derive(Clone)]
pub struct ShapeDirection {
    pub theta: Field,
    /// `<d_h J, theta>`; equals minus the squared H1 norm of theta.
    pub derivative: f64,
    /// Set when the produced direction fails the descent sign (stationary
    /// discrete shape).
    pub degenerate: bool,
}

/// Solve `(theta, v)_H1 + <d_h J, v> = 0` over P1 x P1 vector fields
/// vanishing on the external boundary.
pub fn descent_direction(mesh: &Arc<Mesh>, dhj: &[f64]) -> Result<ShapeDirection> {
    assert_eq!(dhj.len(), 2 * mesh.n_vertices());
    let ones = vec![1.0; mesh.n_triangles()];
    let h1 = cg_matrix(mesh, &ones, 1);
    let bdofs: Vec<usize> = (0..mesh.n_vertices())
        .filter(|&v| mesh.boundary_vertex[v])
        .collect();
    let lift = DirichletLift::new(h1, &bdofs);
    let fact = Factorization::new(lift.eliminated.clone())?;
    let zeros = vec![0.0; lift.constrained().len()];
    let mut coeffs = vec![0.0; 2 * mesh.n_vertices()];
    for comp in 0..2 {
        let load: Vec<f64> = (0..mesh.n_vertices()).map(|v| -dhj[2 * v + comp]).collect();
        let rhs = lift.rhs(&load, &zeros);
        let x = fact.solve(&rhs)?;
        for v in 0..mesh.n_vertices() {
            coeffs[2 * v + comp] = x[v];
        }
    }
    let derivative: f64 = dhj.iter().zip(&coeffs).map(|(a, b)| a * b).sum();
    let theta = Field::from_coeffs(SpaceDescriptor::cg_vec2(1), mesh.clone(), coeffs);
    Ok(ShapeDirection {
        degenerate: derivative >= 0.0,
        theta,
        derivative,
    })
}

/// Synthetic Dirichlet data: boundary traces of Neumann forward solves on a
/// finer mesh of the target geometry (avoids committing an inverse crime).
pub fn synthetic_measurements(
    outer_radius: f64,
    target_loops: &[Vec<Vec2>],
    k_inclusion: f64,
    k_background: f64,
    gs: &[MeasurementFn],
    data_h: f64,
) -> Result<Vec<Measurement>> {
    let mesh = Arc::new(crate::mesh::generate_disk_mesh(
        outer_radius,
        target_loops,
        data_h,
    )?);
    let k: Vec<f64> = mesh
        .region
        .iter()
        .map(|r| match r {
            Region::Inclusion => k_inclusion,
            Region::Background => k_background,
        })
        .collect();
    let fact = Factorization::new(cg_matrix(&mesh, &k, 1))?;
    gs.iter()
        .map(|g| {
            let rhs = cg_neumann_rhs(&mesh, 1, &|p| g.eval(p));
            let u = fact.solve(&rhs)?;
            let trace = BoundaryTrace::from_boundary_values(&mesh, &u);
            Ok(Measurement {
                g: g.clone(),
                dirichlet: DirichletData::Sampled(Arc::new(trace)),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
