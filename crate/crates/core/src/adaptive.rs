//! The fully adaptive loop: Newton iterations inside regularization rounds inside mesh
//! refinement, each controlled by the estimators.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::equilibration::{
    audit, AuditReport, ContactData, EquilibratedStress, EquilibrationConfig, EquilibrationError, Equilibrator,
};
use crate::estimators::{compute_report, guaranteed_upper_bound, EstimatorError, EstimatorReport, LocalEstimators, TraceConstants};
use crate::fem::{DisplacementField, FemError, LagrangeSpace};
use crate::mesh::{refine, MeshError, TriMesh};
use crate::nitsche::{ContactSolver, NitscheError};
use crate::problem::ProblemData;
use crate::verification::{diagnostics, DiagnosticPair, ErrorNorms, Reference, VerificationError};

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error("invalid adaptive configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Nitsche(#[from] NitscheError),
    #[error(transparent)]
    Equilibration(#[from] EquilibrationError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
}

/// Where the Newton and regularization stopping rules are checked.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StoppingMode {
    Global,
    /// Checked on every element with its own factors.
    Local { gamma_reg: f64, gamma_lin: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveConfig {
    pub gamma_reg: f64,
    pub gamma_lin: f64,
    pub delta_init: f64,
    /// δ is multiplied by this after each regularization round.
    pub delta_shrink: f64,
    pub marking_fraction: f64,
    /// Number of refinements; the run visits at most `max_steps + 1` meshes.
    pub max_steps: usize,
    pub mode: StoppingMode,
    /// Stop once max_T η_tot,T ≤ ratio · median_T η_tot,T. `None` runs the full budget.
    pub evenness_ratio: Option<f64>,
    pub gamma0: f64,
    pub degree: usize,
    pub max_newton: usize,
    pub max_rounds: usize,
    pub equilibration: EquilibrationConfig,
    /// Replaces the computed trace constants on Neumann faces.
    pub trace_constant: Option<f64>,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            gamma_reg: 0.04,
            gamma_lin: 0.08,
            delta_init: 1.0,
            delta_shrink: 0.5,
            marking_fraction: 0.06,
            max_steps: 11,
            mode: StoppingMode::Global,
            evenness_ratio: Some(3.0),
            gamma0: 100.0,
            degree: 1,
            max_newton: 50,
            max_rounds: 40,
            equilibration: EquilibrationConfig::default(),
            trace_constant: None,
        }
    }
}

fn in_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<(), AdaptiveError> {
        let bad = |m: &str| Err(AdaptiveError::Config(m.to_string()));
        if !in_unit(self.gamma_reg) || !in_unit(self.gamma_lin) {
            return bad("gamma_reg and gamma_lin must lie in (0, 1)");
        }
        if let StoppingMode::Local { gamma_reg, gamma_lin } = self.mode {
            if !in_unit(gamma_reg) || !in_unit(gamma_lin) {
                return bad("local gamma_reg and gamma_lin must lie in (0, 1)");
            }
        }
        if !(self.marking_fraction > 0.0 && self.marking_fraction <= 1.0) {
            return bad("marking fraction must lie in (0, 1]");
        }
        if !in_unit(self.delta_shrink) {
            return bad("delta_shrink must lie in (0, 1)");
        }
        if !(self.delta_init > 0.0 && self.gamma0 > 0.0) {
            return bad("delta_init and gamma0 must be positive");
        }
        if self.evenness_ratio.is_some_and(|r| !(r >= 1.0)) {
            return bad("evenness ratio must be at least 1");
        }
        if self.max_newton == 0 || self.max_rounds == 0 {
            return bad("iteration budgets must be positive");
        }
        Ok(())
    }
}

fn newton_rhs(l: &LocalEstimators) -> f64 {
    l.osc + l.str + l.neu + l.cnt
}

/// η_lin ≤ γ_lin (η_osc + η_str + η_Neu + η_cnt), globally or on every element.
pub fn stop_newton(report: &EstimatorReport, cfg: &AdaptiveConfig) -> bool {
    match cfg.mode {
        StoppingMode::Global => {
            let g = &report.global;
            g.lin <= cfg.gamma_lin * (g.osc + g.str + g.neu + g.cnt)
        }
        StoppingMode::Local { gamma_lin, .. } => report.local.iter().all(|l| l.lin() <= gamma_lin * newton_rhs(l)),
    }
}

/// η_reg ≤ γ_reg (η_osc + η_str + η_Neu + η_cnt + η_lin), globally or on every element.
pub fn stop_regularization(report: &EstimatorReport, cfg: &AdaptiveConfig) -> bool {
    match cfg.mode {
        StoppingMode::Global => {
            let g = &report.global;
            g.reg <= cfg.gamma_reg * (g.osc + g.str + g.neu + g.cnt + g.lin)
        }
        StoppingMode::Local { gamma_reg, .. } => {
            report.local.iter().all(|l| l.reg() <= gamma_reg * (newton_rhs(l) + l.lin()))
        }
    }
}

/// The ⌈fraction·N⌉ elements with the largest values, ties going to the lower index; ascending.
pub fn mark(values: &[f64], fraction: f64) -> Vec<usize> {
    let n = ((fraction * values.len() as f64).ceil() as usize).min(values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut out = order[..n].to_vec();
    out.sort_unstable();
    out
}

/// max / median of the values; 1 when all vanish.
pub fn spread(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    let max = v[n - 1];
    if max == 0.0 {
        1.0
    } else if median == 0.0 {
        f64::INFINITY
    } else {
        max / median
    }
}

/// Errors against a reference solution for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepErrors {
    pub norms: ErrorNorms,
    pub diagnostics: DiagnosticPair,
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub n_elements: usize,
    pub n_vertices: usize,
    pub n_dofs: usize,
    pub n_reg: usize,
    pub n_lin: usize,
    /// Newton iterations in each regularization round.
    pub newton_per_round: Vec<usize>,
    /// δ of the final state, i.e. the last value that passed the Newton rule.
    pub delta: f64,
    pub report: EstimatorReport,
    pub bound: f64,
    pub spread: f64,
    /// Set when a Newton or regularization budget ran out.
    pub flagged: bool,
    pub marked: Vec<usize>,
    pub errors: Option<StepErrors>,
    /// Equilibration audit of the final reconstruction.
    pub audit: AuditReport,
    /// Wall time, kept out of the CSV so that output is reproducible.
    pub seconds: f64,
    pub mesh: Arc<TriMesh>,
    pub solution: DisplacementField,
    pub stress: EquilibratedStress,
}

#[derive(Clone, Debug, Default)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.16e}"))
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "step,elements,vertices,dofs,n_reg,n_lin,delta,eta_osc,eta_str,eta_neu,eta_cnt,eta_reg,eta_lin,eta_tot,bound,spread,flagged,\
             h1_error,energy_error,lower,upper,i_eff_low,i_eff_up,audit\n",
        );
        for r in &self.steps {
            let g = &r.report.global;
            let e = r.errors.as_ref();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{},{},{},{:.16e}",
                r.step,
                r.n_elements,
                r.n_vertices,
                r.n_dofs,
                r.n_reg,
                r.n_lin,
                r.delta,
                g.osc,
                g.str,
                g.neu,
                g.cnt,
                g.reg,
                g.lin,
                g.tot,
                r.bound,
                r.spread,
                r.flagged,
                opt(e.map(|e| e.norms.h1)),
                opt(e.map(|e| e.norms.energy)),
                opt(e.map(|e| e.diagnostics.lower)),
                opt(e.map(|e| e.diagnostics.upper)),
                opt(e.map(|e| e.diagnostics.i_eff_low)),
                opt(e.map(|e| e.diagnostics.i_eff_up)),
                r.audit.worst(),
            );
        }
        s
    }
}

/// A state at the end of a regularization round, passed to the observer.
pub struct RoundState<'a> {
    pub step: usize,
    pub round: usize,
    pub delta: f64,
    pub newton_iterations: usize,
    pub solution: &'a DisplacementField,
    pub report: &'a EstimatorReport,
    pub data: &'a ProblemData,
    pub gamma0: f64,
}

struct Iterate {
    u: DisplacementField,
    contact: ContactData,
    stress: EquilibratedStress,
    report: EstimatorReport,
}

/// Runs the adaptive loop from `mesh`. When `reference` is given every step records its errors.
/// `observer` sees every state that ends a regularization round.
pub fn run(
    mesh: TriMesh,
    data: &ProblemData,
    cfg: &AdaptiveConfig,
    reference: Option<&Reference>,
    mut observer: impl FnMut(&RoundState),
) -> Result<RunLog, AdaptiveError> {
    cfg.validate()?;
    let mut log = RunLog::default();
    let mut mesh = Arc::new(mesh);
    let mut delta = cfg.delta_init;
    let mut warm: Option<Vec<f64>> = None;
    for step in 0..=cfg.max_steps {
        let clock = Instant::now();
        let space = Arc::new(LagrangeSpace::new(mesh.clone(), cfg.degree)?);
        let solver = ContactSolver::new(space.clone(), data.clone(), cfg.gamma0)?;
        let eq = Equilibrator::new(mesh.clone(), cfg.degree, cfg.equilibration)?;
        let constants = match cfg.trace_constant {
            Some(c) => TraceConstants::uniform(c),
            None => TraceConstants::compute(&mesh)?,
        };
        let mut u = match warm.take() {
            Some(c) => {
                let mut f = solver.field(c);
                for &(d, v) in solver.constraints() {
                    f.coeffs[d] = v;
                }
                f
            }
            None => solver.initial_field(),
        };
        let mut flagged = false;
        let mut per_round = Vec::new();
        let mut last: Option<Iterate> = None;
        for round in 0..cfg.max_rounds {
            let mut k = 0;
            let it = loop {
                k += 1;
                let next = solver.newton_step(&u, delta)?;
                let contact = ContactData::newton(&next, &u, delta, data, cfg.gamma0);
                let (stress, _) = eq.reconstruct(&next, data, &contact)?;
                let report = compute_report(&next, &stress, data, &contact, &constants);
                u = next;
                if stop_newton(&report, cfg) {
                    break Iterate { u: u.clone(), contact, stress, report };
                }
                if k >= cfg.max_newton {
                    log::warn!("step {step}: Newton budget exhausted at δ = {delta:.3e}");
                    flagged = true;
                    break Iterate { u: u.clone(), contact, stress, report };
                }
            };
            per_round.push(k);
            observer(&RoundState {
                step,
                round,
                delta,
                newton_iterations: k,
                solution: &it.u,
                report: &it.report,
                data,
                gamma0: cfg.gamma0,
            });
            let done = stop_regularization(&it.report, cfg);
            last = Some(it);
            if done {
                break;
            }
            if round + 1 == cfg.max_rounds {
                log::warn!("step {step}: regularization budget exhausted");
                flagged = true;
                break;
            }
            delta *= cfg.delta_shrink;
        }
        let it = last.expect("at least one round runs");
        let totals = it.report.local_totals();
        let spr = spread(&totals);
        let errors = match reference {
            Some(r) => {
                let (d, norms) = diagnostics(&it.u, r, it.report.global.tot, data, cfg.gamma0)?;
                Some(StepErrors { norms, diagnostics: d })
            }
            None => None,
        };
        let even = cfg.evenness_ratio.is_some_and(|r| spr <= r);
        // Zero loads and zero boundary data: the exact solution vanishes and nothing is worth refining.
        let trivial = solver.load().iter().all(|&x| x == 0.0) && solver.constraints().iter().all(|c| c.1 == 0.0);
        let last_step = step == cfg.max_steps || even || trivial;
        let marked = if last_step { Vec::new() } else { mark(&totals, cfg.marking_fraction) };
        log::info!(
            "step {step}: {} elements, N_reg = {}, N_lin = {}, δ = {delta:.3e}, η_tot = {:.4e}, spread = {spr:.2}",
            mesh.n_elements(),
            per_round.len() - 1,
            per_round.iter().sum::<usize>(),
            it.report.global.tot
        );
        log.steps.push(StepRecord {
            step,
            n_elements: mesh.n_elements(),
            n_vertices: mesh.n_vertices(),
            n_dofs: space.n_dofs(),
            n_reg: per_round.len() - 1,
            n_lin: per_round.iter().sum(),
            newton_per_round: per_round,
            delta,
            bound: guaranteed_upper_bound(&it.report),
            report: it.report,
            spread: spr,
            flagged,
            marked: marked.clone(),
            errors,
            audit: audit(&it.stress, data, &it.contact),
            seconds: clock.elapsed().as_secs_f64(),
            mesh: mesh.clone(),
            solution: it.u.clone(),
            stress: it.stress,
        });
        if last_step {
            break;
        }
        let refined = refine(&mesh, &marked)?;
        if cfg.degree == 1 {
            warm = Some(refined.prolong_vertex_values(&it.u.coeffs, 2));
        }
        mesh = Arc::new(refined.mesh);
    }
    let steps = &log.steps;
    let decreasing = steps.windows(2).filter(|w| w[1].report.global.tot <= w[0].report.global.tot).count();
    if steps.len() > 1 {
        log::info!("η_tot non-increasing on {decreasing} of {} refinements", steps.len() - 1);
    }
    Ok(log)
}
