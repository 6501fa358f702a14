//! The certified descent driver: solve, build a direction, certify it
//! against the computable error bound (refining the fine mesh until the
//! certificate holds), take an Armijo step, deform the coarse mesh, and
//! rebuild the fine mesh for the next iteration.

use crate::assembly::DgParams;
use crate::eit::{
    descent_direction, kohn_vogelius_total, Discretization, EitCase,
    EitSolvers, ShapeDirection, StatePair,
};
use crate::estimator::{combine_breakdowns, error_estimate_cg, error_estimate_dg, CgFluxes, DgFluxes};
use crate::mesh::{Mesh, MeshPair};
use crate::spaces::{Field, SpaceDescriptor};
use crate::{Error, Result, Vec2};
use std::sync::Arc;

#[derive(Clone, Copy, Debug)]
pub struct ArmijoParams {
    /// Sufficient-decrease constant.
    pub c: f64,
    /// Backtracking factor in (0, 1).
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        ArmijoParams {
            c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CdaConfig {
    /// Stopping tolerance on |<d_h J, theta>| + Ebar.
    pub tol: f64,
    pub disc: Discretization,
    pub dg: DgParams,
    pub armijo: ArmijoParams,
    /// Bulk (Dörfler) marking fraction in (0, 1).
    pub marking_fraction: f64,
    /// Certification budget on the fine-mesh element count.
    pub max_elements: usize,
    pub max_iterations: usize,
    /// Minimum admissible area ratio under deformation.
    pub quality_floor: f64,
}

impl CdaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("tol must be positive".into()));
        }
        if !(self.marking_fraction > 0.0 && self.marking_fraction < 1.0) {
            return Err(Error::InvalidInput(
                "marking fraction must lie in (0, 1)".into(),
            ));
        }
        if !(self.armijo.backtrack > 0.0 && self.armijo.backtrack < 1.0) {
            return Err(Error::InvalidInput(
                "backtrack factor must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

impl Default for CdaConfig {
    fn default() -> Self {
        CdaConfig {
            tol: 1e-6,
            disc: Discretization::Dg,
            dg: DgParams::default(),
            armijo: ArmijoParams::default(),
            marking_fraction: 0.3,
            max_elements: 500_000,
            max_iterations: 60,
            quality_floor: 0.1,
        }
    }
}

/// Per-iteration log row, mirroring the published convergence tables plus
/// the objective and the accepted step.
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Fine-mesh element count at certification.
    pub elements: usize,
    pub j_value: f64,
    pub dhj_theta: f64,
    pub ebar: f64,
    pub certified: bool,
    pub mu: f64,
    pub refine_rounds: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    BudgetExceeded,
    MaxIterations,
    Stationary,
}

pub struct RunResult {
    pub status: RunStatus,
    pub records: Vec<IterationRecord>,
    pub final_coarse: Arc<Mesh>,
    pub final_fine: Arc<Mesh>,
}

/// Everything computed on one certification round.
pub struct IterationState {
    pub solvers: EitSolvers,
    pub states: Vec<StatePair>,
    pub j_value: f64,
    pub direction: ShapeDirection,
    pub theta_fine: Field,
    pub dhj_theta: f64,
    pub ebar: f64,
    pub indicators: Vec<f64>,
}

/// Snapshot handed to the output sink after each accepted iteration.
pub struct IterationArtifacts<'a> {
    pub record: &'a IterationRecord,
    pub pair: &'a MeshPair,
    pub states: &'a [StatePair],
    pub theta_fine: &'a Field,
    pub indicators: &'a [f64],
}

/// Solve states and adjoints on the fine mesh, build the coarse-mesh
/// direction, and evaluate the error bound.
pub fn evaluate_iteration(pair: &MeshPair, case: &EitCase, config: &CdaConfig) -> Result<IterationState> {
    let solvers = EitSolvers::new(pair.fine.clone(), case, config.disc, config.dg)?;
    let states = solvers.solve_all_states(case)?;
    let j_value = kohn_vogelius_total(&states, &solvers.k);
    let dvec_fine = solvers.shape_gradient_vector(case, &states)?;
    let prolong = pair.prolongator();
    let dvec_coarse = prolong.restrict_vec2(&dvec_fine, pair.coarse.n_vertices());
    let direction = descent_direction(&pair.coarse, &dvec_coarse)?;
    let theta_fine = Field::from_coeffs(
        SpaceDescriptor::cg_vec2(1),
        pair.fine.clone(),
        prolong.prolong_vec2(&direction.theta.coeffs),
    );
    let dhj_theta: f64 = dvec_fine
        .iter()
        .zip(&theta_fine.coeffs)
        .map(|(a, b)| a * b)
        .sum();

    let mut breakdowns = Vec::with_capacity(states.len());
    for s in &states {
        let adjoints = solvers.solve_adjoints(s, &theta_fine)?;
        let meas = &case.measurements[s.measurement];
        let gm = meas.g.clone();
        let gfn = move |p: Vec2| gm.eval(p);
        let breakdown = match config.disc {
            Discretization::Cg => {
                let fluxes = CgFluxes::reconstruct(&solvers, s, &adjoints, &theta_fine, &gfn)?;
                error_estimate_cg(&solvers, s, &adjoints, &fluxes, &theta_fine, &gfn)?
            }
            Discretization::Dg => {
                let ud = meas.dirichlet.clone();
                let udfn = move |p: Vec2| ud.eval(p);
                let fluxes =
                    DgFluxes::reconstruct(&solvers, s, &adjoints, &theta_fine, &gfn, &udfn)?;
                error_estimate_dg(&solvers, s, &adjoints, &fluxes, &theta_fine, &gfn, &udfn)?
            }
        };
        breakdowns.push(breakdown);
    }
    let (ebar, indicators) = combine_breakdowns(&breakdowns);

    Ok(IterationState {
        solvers,
        states,
        j_value,
        direction,
        theta_fine,
        dhj_theta,
        ebar,
        indicators,
    })
}

/// Bulk marking: the smallest indicator-sorted prefix carrying `fraction`
/// of the total.
pub fn doerfler_marking(indicators: &[f64], fraction: f64) -> Vec<usize> {
    let total: f64 = indicators.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&a, &b| {
        indicators[b]
            .partial_cmp(&indicators[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut marked = Vec::new();
    let mut acc = 0.0;
    for t in order {
        marked.push(t);
        acc += indicators[t];
        if acc >= fraction * total {
            break;
        }
    }
    marked.sort_unstable();
    marked
}

pub enum StepOutcome {
    Accepted { mu: f64, j_new: f64 },
    ZeroStep,
}

/// Backtracking line search: largest tested `mu = mu0 * rho^k` whose trial
/// objective satisfies the sufficient-decrease test (`None` trials count as
/// quality failures and backtrack).
pub fn armijo_step(
    j_current: f64,
    dhj_theta: f64,
    mu0: f64,
    params: &ArmijoParams,
    eval: &mut dyn FnMut(f64) -> Option<f64>,
) -> StepOutcome {
    assert!(dhj_theta < 0.0, "armijo requires a descent direction");
    let mut mu = mu0;
    for _ in 0..=params.max_backtracks {
        if let Some(j_trial) = eval(mu) {
            if j_trial <= j_current + params.c * mu * dhj_theta {
                return StepOutcome::Accepted { mu, j_new: j_trial };
            }
        }
        mu *= params.backtrack;
    }
    StepOutcome::ZeroStep
}

/// Initial step: caps the largest vertex displacement at half the local
/// minimum edge length.
pub fn initial_step(mesh: &Mesh, theta: &Field) -> f64 {
    let mut mu = f64::INFINITY;
    for v in 0..mesh.n_vertices() {
        let mag = theta.coeffs[2 * v].hypot(theta.coeffs[2 * v + 1]);
        if mag > 0.0 {
            mu = mu.min(0.5 * mesh.min_edge_at_vertex(v) / mag);
        }
    }
    if mu.is_finite() {
        mu
    } else {
        0.0
    }
}

/// Outcome of the certification sub-loop.
pub enum CertifyOutcome {
    Certified {
        state: IterationState,
        pair: MeshPair,
        rounds: usize,
    },
    BudgetExceeded {
        state: IterationState,
        pair: MeshPair,
        rounds: usize,
    },
    Stationary {
        state: IterationState,
        pair: MeshPair,
    },
}

/// Re-solve and refine the fine mesh until `<d_h J, theta> + Ebar < 0`,
/// the element budget is exhausted, or the discrete shape is stationary.
pub fn certify(mut pair: MeshPair, case: &EitCase, config: &CdaConfig) -> Result<CertifyOutcome> {
    let mut rounds = 0;
    loop {
        let state = evaluate_iteration(&pair, case, config)?;
        if state.direction.degenerate {
            return Ok(CertifyOutcome::Stationary { state, pair });
        }
        if state.dhj_theta + state.ebar < 0.0 {
            return Ok(CertifyOutcome::Certified { state, pair, rounds });
        }
        let marked = doerfler_marking(&state.indicators, config.marking_fraction);
        let refined = pair.refine_fine(&marked);
        rounds += 1;
        if refined.fine.n_triangles() > config.max_elements {
            return Ok(CertifyOutcome::BudgetExceeded {
                state,
                pair: refined,
                rounds,
            });
        }
        pair = refined;
    }
}

/// The full descent loop.
pub fn run(
    case: &EitCase,
    initial_coarse: Arc<Mesh>,
    config: &CdaConfig,
    mut sink: Option<&mut dyn FnMut(&IterationArtifacts)>,
) -> Result<RunResult> {
    config.validate()?;
    let mut coarse = initial_coarse;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut last_fine: Option<Arc<Mesh>> = None;

    for iteration in 1..=config.max_iterations {
        let pair = MeshPair::build(coarse.clone(), &[]);
        let outcome = certify(pair, case, config)?;
        let (state, pair, rounds, certified) = match outcome {
            CertifyOutcome::Certified { state, pair, rounds } => (state, pair, rounds, true),
            CertifyOutcome::BudgetExceeded { state, pair, rounds } => {
                records.push(IterationRecord {
                    iteration,
                    elements: pair.fine.n_triangles(),
                    j_value: state.j_value,
                    dhj_theta: state.dhj_theta,
                    ebar: state.ebar,
                    certified: false,
                    mu: 0.0,
                    refine_rounds: rounds,
                });
                return Ok(RunResult {
                    status: RunStatus::BudgetExceeded,
                    records,
                    final_fine: pair.fine.clone(),
                    final_coarse: coarse,
                });
            }
            CertifyOutcome::Stationary { state, pair } => {
                records.push(IterationRecord {
                    iteration,
                    elements: pair.fine.n_triangles(),
                    j_value: state.j_value,
                    dhj_theta: state.dhj_theta,
                    ebar: state.ebar,
                    certified: false,
                    mu: 0.0,
                    refine_rounds: 0,
                });
                return Ok(RunResult {
                    status: RunStatus::Stationary,
                    records,
                    final_fine: pair.fine.clone(),
                    final_coarse: coarse,
                });
            }
        };

        // line search along the certified direction (mesh-moving trial
        // evaluations on the fine mesh)
        let mu0 = initial_step(&pair.coarse, &state.direction.theta);
        let mut eval = |mu: f64| -> Option<f64> {
            let fine = pair
                .fine
                .deform(&state.theta_fine.coeffs, mu, config.quality_floor)
                .ok()?;
            let fine = Arc::new(fine);
            let solvers = EitSolvers::new_states_only(fine, case, config.disc, config.dg).ok()?;
            let states = solvers.solve_all_states(case).ok()?;
            Some(kohn_vogelius_total(&states, &solvers.k))
        };
        let step = armijo_step(
            state.j_value,
            state.dhj_theta,
            mu0,
            &config.armijo,
            &mut eval,
        );
        let (mu, status_zero) = match step {
            StepOutcome::Accepted { mu, .. } => (mu, false),
            StepOutcome::ZeroStep => (0.0, true),
        };

        let record = IterationRecord {
            iteration,
            elements: pair.fine.n_triangles(),
            j_value: state.j_value,
            dhj_theta: state.dhj_theta,
            ebar: state.ebar,
            certified,
            mu,
            refine_rounds: rounds,
        };
        if let Some(sink) = sink.as_deref_mut() {
            sink(&IterationArtifacts {
                record: &record,
                pair: &pair,
                states: &state.states,
                theta_fine: &state.theta_fine,
                indicators: &state.indicators,
            });
        }
        records.push(record);
        last_fine = Some(pair.fine.clone());

        if status_zero {
            return Ok(RunResult {
                status: RunStatus::Stationary,
                records,
                final_fine: pair.fine.clone(),
                final_coarse: coarse,
            });
        }

        coarse = Arc::new(coarse.deform(&state.direction.theta.coeffs, mu, config.quality_floor)?);

        if state.dhj_theta.abs() + state.ebar <= config.tol {
            return Ok(RunResult {
                status: RunStatus::Converged,
                records,
                final_fine: pair.fine.clone(),
                final_coarse: coarse,
            });
        }
    }

    Ok(RunResult {
        status: RunStatus::MaxIterations,
        records,
        final_fine: last_fine.unwrap_or_else(|| coarse.clone()),
        final_coarse: coarse,
    })
}
