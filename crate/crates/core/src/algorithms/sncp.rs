//! Successive non-convex penalty loop.
//!
//! Drives an inner solver round by round, multiplying the orthogonality
//! penalty ρ by a fixed factor whenever the normalized objective change
//! falls below a trigger threshold, and stopping once it falls below the
//! final threshold (or the round budget runs out). The solver state and,
//! for gradient sharing, the server accumulators persist across penalty
//! stages, so each stage warm-starts from the previous one.

use crate::error::Result;
use crate::metrics::RoundTrace;
use crate::model::{FactorState, Problem};

use super::{FedCAvgRun, FedCGdsRun, FedConfig, PalmRun, RoundSolver};

/// Penalty growth schedule.
#[derive(Debug, Clone)]
pub struct SncpSchedule {
    pub rho0: f64,
    /// Multiplicative update applied to ρ at each trigger; must exceed 1.
    pub factor: f64,
    /// Raise ρ whenever the round's ε drops below this.
    pub trigger_eps: f64,
    /// Stop the whole loop once ε drops below this; must be below the trigger.
    pub final_eps: f64,
    /// Fixed Tikhonov penalty ν.
    pub nu: f64,
}

impl SncpSchedule {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if !(self.factor > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "penalty factor must exceed 1, got {}",
                self.factor
            )));
        }
        if !(self.final_eps < self.trigger_eps) {
            return Err(Error::InvalidArgument(format!(
                "final threshold {} must be below the trigger {}",
                self.final_eps, self.trigger_eps
            )));
        }
        if self.rho0 < 0.0 || self.nu < 0.0 {
            return Err(Error::InvalidArgument(
                "penalties must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Inner solver selector for the penalty loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    FedCAvg,
    FedCGds,
    Palm,
}

#[derive(Debug, Clone)]
pub struct SncpOutput {
    pub state: FactorState,
    /// Traces across all stages; the round column keeps counting up, so it
    /// doubles as the accumulated round count.
    pub traces: Vec<RoundTrace>,
    /// ρ after each trigger, starting with the initial value.
    pub rho_stages: Vec<f64>,
    pub uplink_total: u64,
    pub final_accuracy: Option<f64>,
}

/// Runs the penalty loop; `cfg.rounds` caps the accumulated rounds across
/// all stages.
pub fn run_sncp(
    problem: &Problem,
    inner: SolverKind,
    schedule: &SncpSchedule,
    cfg: FedConfig,
) -> Result<SncpOutput> {
    schedule.validate()?;
    let rounds = cfg.rounds;
    let mut solver: Box<dyn RoundSolver + '_> = match inner {
        SolverKind::FedCAvg => Box::new(FedCAvgRun::new(problem, cfg)?),
        SolverKind::FedCGds => Box::new(FedCGdsRun::new(problem, cfg)?),
        SolverKind::Palm => Box::new(PalmRun::new(problem, cfg)?),
    };
    let mut rho = schedule.rho0;
    solver.set_penalties(rho, schedule.nu);
    let mut rho_stages = vec![rho];
    let mut traces = Vec::new();
    for _ in 0..rounds {
        let trace = solver.step_round()?;
        let eps = trace.epsilon;
        traces.push(trace);
        if eps < schedule.final_eps {
            break;
        }
        if eps < schedule.trigger_eps {
            rho *= schedule.factor;
            rho_stages.push(rho);
            solver.set_penalties(rho, schedule.nu);
        }
    }
    let state = solver.state();
    let final_accuracy = super::state_accuracy(problem, &state.h);
    Ok(SncpOutput {
        state,
        traces,
        rho_stages,
        uplink_total: solver.uplink_total(),
        final_accuracy,
    })
}
