//! Equilibrated-flux reconstructions and the goal-oriented bound on the
//! error in the shape gradient.
//!
//! The conforming path solves mixed saddle problems on vertex patches
//! (RT0 for the states, RT1 for the adjoints); the dG path assigns the
//! Raviart-Thomas degrees of freedom directly from edge prescriptions.
//! Both feed the same computable error expression, whose per-element
//! contributions drive the goal-oriented refinement.

mod cg;
mod dg;

pub use cg::{
    error_estimate_cg, reconstruct_adjoint_flux_cg, reconstruct_state_flux_cg, CgFluxes,
};
pub use dg::{
    error_estimate_dg, reconstruct_adjoint_flux_dg, reconstruct_state_flux_dg, DgFluxes,
};

use crate::spaces::Field;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FluxRole {
    StateNeumann,
    StateDirichlet,
    AdjointNeumann,
    AdjointDirichlet,
}

impl FluxRole {
    pub fn is_neumann(&self) -> bool {
        matches!(self, FluxRole::StateNeumann | FluxRole::AdjointNeumann)
    }

    pub fn is_state(&self) -> bool {
        matches!(self, FluxRole::StateNeumann | FluxRole::StateDirichlet)
    }
}

/// An H(div)-conforming reconstructed flux (RT0 for states, RT1 for
/// adjoints).
#[derive(Clone)]
pub struct EquilibratedFlux {
    pub flux: Field,
    pub role: FluxRole,
}

/// Signed per-element contributions to the Neumann and Dirichlet error
/// terms of one measurement; the certified bound is |E_N - E_D|.
#[derive(Clone, Debug)]
pub struct ErrorBreakdown {
    pub element_n: Vec<f64>,
    pub element_d: Vec<f64>,
}

impl ErrorBreakdown {
    pub fn e_n(&self) -> f64 {
        self.element_n.iter().sum()
    }

    pub fn e_d(&self) -> f64 {
        self.element_d.iter().sum()
    }

    /// The certified bound of this measurement's contribution.
    pub fn bound(&self) -> f64 {
        (self.e_n() - self.e_d()).abs()
    }

    /// Nonnegative localization indicators (per element).
    pub fn indicators(&self) -> Vec<f64> {
        self.element_n
            .iter()
            .zip(&self.element_d)
            .map(|(n, d)| (n - d).abs())
            .collect()
    }
}

/// Sum per-measurement breakdowns: the total bound adds the per-measurement
/// bounds, the indicators accumulate element-wise.
pub fn combine_breakdowns(parts: &[ErrorBreakdown]) -> (f64, Vec<f64>) {
    assert!(!parts.is_empty());
    let n = parts[0].element_n.len();
    let mut indicators = vec![0.0; n];
    let mut total = 0.0;
    for b in parts {
        total += b.bound();
        for (acc, v) in indicators.iter_mut().zip(b.indicators()) {
            *acc += v;
        }
    }
    (total, indicators)
}

/// Equilibration defect of a state flux on every element:
/// `|| div sigma + pi_0 u ||_L2(T)`.
pub fn state_equilibration_residuals(flux: &Field, u: &Field) -> Vec<f64> {
    let mesh = &flux.mesh;
    let pi_u = crate::spaces::project_field_broken(u, flux.space.degree);
    let rule = crate::quad::QuadRule::triangle(2 * flux.space.degree.max(1));
    (0..mesh.n_triangles())
        .map(|t| {
            let jac = 2.0 * mesh.area(t);
            let mut r2 = 0.0;
            for (q, &w) in rule.points.iter().zip(&rule.weights) {
                let div = flux.eval_rt(t, &[*q])[0].1;
                let pu = pi_u.eval_scalar(t, &[*q])[0].0;
                r2 += w * jac * (div + pu) * (div + pu);
            }
            r2.sqrt()
        })
        .collect()
}

/// Equilibration defect of an adjoint flux:
/// `|| div xi + pi_1 r + pi_1(div theta u) ||_L2(T)` (the element-wise
/// divergence of k M(theta) grad u vanishes for P1 states and directions).
pub fn adjoint_equilibration_residuals(flux: &Field, r: &Field, u: &Field, theta: &Field) -> Vec<f64> {
    let mesh = &flux.mesh;
    let kappa = flux.space.degree;
    let pi_r = crate::spaces::project_field_broken(r, kappa);
    let centroid = [crate::Vec2::new(1.0 / 3.0, 1.0 / 3.0)];
    let mesh2 = mesh.clone();
    let div_theta_u = crate::spaces::project_broken(&mesh2, kappa, 3, |t, p| {
        let (_, jac) = theta.eval_vec2(t, &centroid)[0];
        let div = jac[(0, 0)] + jac[(1, 1)];
        div * u.eval_scalar_phys(t, p).0
    });
    let rule = crate::quad::QuadRule::triangle(2 * kappa.max(1));
    (0..mesh.n_triangles())
        .map(|t| {
            let jac = 2.0 * mesh.area(t);
            let mut r2 = 0.0;
            for (q, &w) in rule.points.iter().zip(&rule.weights) {
                let div = flux.eval_rt(t, &[*q])[0].1;
                let pr = pi_r.eval_scalar(t, &[*q])[0].0;
                let pdu = div_theta_u.eval_scalar(t, &[*q])[0].0;
                let v = div + pr + pdu;
                r2 += w * jac * v * v;
            }
            r2.sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests;
