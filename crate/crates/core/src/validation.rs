//! Closed-form reference solution on the concentric-disk geometry, the exact
//! shape-gradient error it induces, effectivity indices, and the
//! mesh-refinement convergence study.

use crate::bessel::{bessel_i, bessel_i_prime, bessel_k, bessel_k_prime};
use crate::eit::{
    descent_direction, Discretization, DirichletData, EitCase, EitSolvers,
    Measurement, MeasurementFn, StatePair,
};
use crate::estimator::{error_estimate_cg, error_estimate_dg, CgFluxes, DgFluxes};
use crate::mesh::{circle_polyline, generate_disk_mesh};
use crate::quad::QuadRule;
use crate::spaces::Field;
use crate::{Error, Result, Vec2};
use num_complex::Complex64;
use std::sync::Arc;

/// u = C0 J_M(-i rho / sqrt(k_I)) cos(M theta) inside the inclusion and
/// C1 J_M + C2 Y_M outside, rewritten through the real modified Bessel
/// functions so evaluation stays real.
#[derive(Clone, Debug)]
pub struct AnalyticSolution {
    pub m: u32,
    pub rho_i: f64,
    pub rho_e: f64,
    pub k_i: f64,
    pub k_e: f64,
    pub c0: Complex64,
    pub c1: Complex64,
    pub c2: Complex64,
    /// Real radial coefficients derived from the complex constants.
    a_in: f64,
    a_out_i: f64,
    b_out_k: f64,
}

impl AnalyticSolution {
    pub fn new(
        m: u32,
        rho_i: f64,
        rho_e: f64,
        k_i: f64,
        k_e: f64,
        c0: Complex64,
        c1: Complex64,
        c2: Complex64,
    ) -> AnalyticSolution {
        let i = Complex64::i();
        let minus_i = -i;
        // J_M(-i x) = (-i)^M I_M(x)
        let jm_coeff = minus_i.powu(m);
        // Y_M(-i x) = conj(Y_M(i x)) = conj(i^{M+1}) I_M(x)
        //             - (2/pi) conj(i^{-M}) K_M(x)
        let ym_i_coeff = i.powu(m + 1).conj();
        let ym_k_coeff = -(2.0 / std::f64::consts::PI) * i.powi(-(m as i32)).conj();
        let a_in = (c0 * jm_coeff).re;
        let a_out_i = (c1 * jm_coeff + c2 * ym_i_coeff).re;
        let b_out_k = (c2 * ym_k_coeff).re;
        AnalyticSolution {
            m,
            rho_i,
            rho_e,
            k_i,
            k_e,
            c0,
            c1,
            c2,
            a_in,
            a_out_i,
            b_out_k,
        }
    }

    /// The published constants for the M = 5, rho = (4, 5), k = (10, 1)
    /// configuration.
    pub fn reference() -> AnalyticSolution {
        AnalyticSolution::new(
            5,
            4.0,
            5.0,
            10.0,
            1.0,
            Complex64::new(-6.3e-9, 40.394_910_05),
            Complex64::new(1.301_459_94, 0.325_482_825),
            Complex64::new(1.5e-11, -1.301_459_935),
        )
    }

    /// Imaginary residue of the coefficient combination; the published
    /// constants make this negligible.
    pub fn imaginary_defect(&self) -> f64 {
        let i = Complex64::i();
        let minus_i = -i;
        let jm = minus_i.powu(self.m);
        let ym_i = i.powu(self.m + 1).conj();
        let ym_k = -(2.0 / std::f64::consts::PI) * i.powi(-(self.m as i32)).conj();
        (self.c0 * jm)
            .im
            .abs()
            .max((self.c1 * jm + self.c2 * ym_i).im.abs())
            .max((self.c2 * ym_k).im.abs())
    }

    fn radial(&self, rho: f64) -> (f64, f64) {
        if rho <= self.rho_i {
            let s = self.k_i.sqrt();
            let x = rho / s;
            (
                self.a_in * bessel_i(self.m, x),
                self.a_in * bessel_i_prime(self.m, x) / s,
            )
        } else {
            let s = self.k_e.sqrt();
            let x = rho / s;
            (
                self.a_out_i * bessel_i(self.m, x) + self.b_out_k * bessel_k(self.m, x),
                (self.a_out_i * bessel_i_prime(self.m, x)
                    + self.b_out_k * bessel_k_prime(self.m, x))
                    / s,
            )
        }
    }

    /// Value and gradient at a point inside the disk.
    pub fn eval(&self, p: Vec2) -> Result<(f64, Vec2)> {
        let rho = p.norm();
        if rho > self.rho_e * (1.0 + 1e-9) {
            return Err(Error::InvalidInput(format!(
                "point ({}, {}) lies outside the disk of radius {}",
                p.x, p.y, self.rho_e
            )));
        }
        if rho < 1e-13 {
            return Ok((0.0, Vec2::zeros())); // M >= 2: u and grad u vanish
        }
        let theta = p.y.atan2(p.x);
        let (r, dr) = self.radial(rho);
        let mf = self.m as f64;
        let (c, s) = ((mf * theta).cos(), (mf * theta).sin());
        let u = r * c;
        let e_r = p / rho;
        let e_t = Vec2::new(-e_r.y, e_r.x);
        let grad = dr * c * e_r - (mf / rho) * r * s * e_t;
        Ok((u, grad))
    }

    /// Conductivity at a point of the exact two-phase geometry.
    pub fn conductivity_at(&self, p: Vec2) -> f64 {
        if p.norm() <= self.rho_i {
            self.k_i
        } else {
            self.k_e
        }
    }
}

/// `<G(u), theta>` for a field given by an evaluator `(value, gradient)` at
/// physical points, with element-wise conductivity `k` and P1 direction
/// `theta`; the integrand is 1/2 (k M(theta) grad u . grad u - div theta u^2).
fn g_action(
    mesh: &crate::mesh::Mesh,
    k: &[f64],
    theta: &Field,
    quad_degree: usize,
    mut eval: impl FnMut(usize, Vec2) -> (f64, Vec2),
) -> f64 {
    let rule = QuadRule::triangle(quad_degree);
    let centroid = [Vec2::new(1.0 / 3.0, 1.0 / 3.0)];
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let [a, b, c] = mesh.tri_vertices(t);
        let jac = 2.0 * mesh.area(t);
        let (_, jtheta) = theta.eval_vec2(t, &centroid)[0];
        let m = crate::eit::m_tensor(&jtheta);
        let div = jtheta[(0, 0)] + jtheta[(1, 1)];
        for (q, &w) in rule.points.iter().zip(&rule.weights) {
            let p = a + (b - a) * q.x + (c - a) * q.y;
            let (u, grad) = eval(t, p);
            total += 0.5 * w * jac * (k[t] * (m * grad).dot(&grad) - div * u * u);
        }
    }
    total
}

/// Exact (analytically evaluated) error in the shape gradient:
/// `<dJ - d_h J, theta>` where dJ uses the closed-form states (the Neumann
/// and Dirichlet exact solutions coincide because U_D is the Neumann trace,
/// so the exact volumetric actions cancel) and d_h J is the discrete shape
/// derivative of the given discretization.
pub fn exact_gradient_error(
    solvers: &EitSolvers,
    case: &crate::eit::EitCase,
    states: &StatePair,
    theta: &Field,
    sol: &AnalyticSolution,
) -> Result<f64> {
    let mesh = &states.u_n.mesh;
    for lp in &mesh.boundary_loops {
        for &v in lp {
            let r = mesh.vertices[v].norm();
            if (r - sol.rho_e).abs() > 1e-6 * sol.rho_e {
                return Err(Error::InvalidInput(
                    "mesh boundary does not match the validation geometry".into(),
                ));
            }
        }
    }
    let exact = |_: usize, p: Vec2| sol.eval(p).unwrap();
    let exact_n = g_action(mesh, &solvers.k, theta, 8, exact);
    let exact_d = exact_n; // same closed-form state for both problems
    let discrete = solvers.shape_gradient_action(case, std::slice::from_ref(states), theta)?;
    Ok((exact_n - exact_d) - discrete)
}

/// Effectivity index eta = Ebar / |E^h|.
pub fn effectivity(ebar: f64, exact_error: f64) -> Result<f64> {
    if exact_error.abs() < 1e-15 {
        return Err(Error::InvalidInput(
            "exact error below 1e-15: effectivity undefined".into(),
        ));
    }
    Ok(ebar / exact_error.abs())
}

#[derive(Clone, Debug)]
pub struct LevelRow {
    pub level: usize,
    pub disc: Discretization,
    pub dofs: usize,
    pub exact_error: f64,
    pub estimate: f64,
    pub effectivity: f64,
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub levels: usize,
    pub h0: f64,
    pub dg: crate::assembly::DgParams,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            levels: 4,
            h0: 0.7,
            dg: crate::assembly::DgParams::default(),
        }
    }
}

/// Fixed smooth admissible direction used by the convergence study:
/// a rotating bump that vanishes on the outer circle, interpolated as a P1
/// vector field (mesh-independent up to interpolation).
pub fn study_direction(mesh: &Arc<crate::mesh::Mesh>, rho_e: f64) -> Field {
    let mut coeffs = vec![0.0; 2 * mesh.n_vertices()];
    for (v, p) in mesh.vertices.iter().enumerate() {
        if mesh.boundary_vertex[v] {
            continue;
        }
        let w = (1.0 - (p.norm() / rho_e).powi(2)).max(0.0);
        coeffs[2 * v] = w * (0.5 + 0.3 * (0.6 * p.y).sin());
        coeffs[2 * v + 1] = w * (-0.3 + 0.25 * (0.8 * p.x).cos());
    }
    Field::from_coeffs(
        crate::spaces::SpaceDescriptor::cg_vec2(1),
        mesh.clone(),
        coeffs,
    )
}

/// Build the validation mesh at resolution `h`: both circles resampled so
/// the polygonal geometry error shrinks with the level.
pub fn validation_mesh(sol: &AnalyticSolution, h: f64) -> Result<crate::mesh::Mesh> {
    let n = ((2.0 * std::f64::consts::PI * sol.rho_i / h).ceil() as usize).max(16);
    let inner = circle_polyline(Vec2::zeros(), sol.rho_i, n);
    generate_disk_mesh(sol.rho_e, &[inner], h)
}

/// One validation pass at a fixed mesh: solve, estimate, compare to the
/// closed-form error.
pub fn validation_level(
    sol: &Arc<AnalyticSolution>,
    mesh: Arc<crate::mesh::Mesh>,
    disc: Discretization,
    dg: &crate::assembly::DgParams,
) -> Result<LevelRow> {
    let case = EitCase::new(
        sol.k_i,
        sol.k_e,
        vec![Measurement {
            g: MeasurementFn::CosM { m: sol.m },
            dirichlet: DirichletData::Analytic(sol.clone()),
        }],
    )?;
    let solvers = EitSolvers::new(mesh.clone(), &case, disc, *dg)?;
    let states = solvers.solve_states(&case, 0)?;
    // At the validation configuration the discrete shape gradient is pure
    // discretization noise (the exact gradient vanishes), so its Riesz
    // direction rotates from mesh to mesh. The study therefore pairs every
    // level with the same smooth admissible direction; estimate and exact
    // error are both linear in the direction, so the effectivity it reports
    // is the one the certification relies on.
    let theta = study_direction(&mesh, sol.rho_e);
    let adjoints = solvers.solve_adjoints(&states, &theta)?;
    let g = case.measurements[0].g.clone();
    let gfn = move |p: Vec2| g.eval(p);
    let breakdown = match disc {
        Discretization::Cg => {
            let fluxes = CgFluxes::reconstruct(&solvers, &states, &adjoints, &theta, &gfn)?;
            error_estimate_cg(&solvers, &states, &adjoints, &fluxes, &theta, &gfn)?
        }
        Discretization::Dg => {
            let meas = &case.measurements[0];
            let ud = meas.dirichlet.clone();
            let udfn = move |p: Vec2| ud.eval(p);
            let fluxes = DgFluxes::reconstruct(&solvers, &states, &adjoints, &theta, &gfn, &udfn)?;
            error_estimate_dg(&solvers, &states, &adjoints, &fluxes, &theta, &gfn, &udfn)?
        }
    };
    let exact = exact_gradient_error(&solvers, &case, &states, &theta, sol)?;
    let dofs = states.u_n.space.dof_count(&mesh);
    Ok(LevelRow {
        level: 0,
        disc,
        dofs,
        exact_error: exact,
        estimate: breakdown.bound(),
        effectivity: effectivity(breakdown.bound(), exact)?,
    })
}

/// Uniform-refinement convergence study on the validation geometry, both
/// discretizations per level.
pub fn convergence_study(cfg: &StudyConfig) -> Result<Vec<LevelRow>> {
    let sol = Arc::new(AnalyticSolution::reference());
    let mut rows = Vec::new();
    for level in 0..cfg.levels {
        let h = cfg.h0 / (1 << level) as f64;
        let mesh = Arc::new(validation_mesh(&sol, h)?);
        for disc in [Discretization::Cg, Discretization::Dg] {
            let mut row = validation_level(&sol, mesh.clone(), disc, &cfg.dg)?;
            row.level = level;
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
