//! Solvers: model-averaging FedCAvg, gradient-sharing FedCGds, the naive
//! FedCPALM baseline, centralized PALM, K-means++, and the SNCP penalty loop.
//!
//! Each federated solver is a struct advanced one communication round at a
//! time, so callers can inspect state between rounds; `run_*` helpers drive
//! a full run with the configured stopping rule.

mod fedcavg;
mod fedcgds;
mod fedcpalm;
mod kmeans;
mod palm;
mod sncp;

pub use fedcavg::{run_fedcavg, AvgEpochRecord, FedCAvgRun};
pub use fedcgds::{run_fedcgds, FedCGdsRun, GdsRoundRecord};
pub use fedcpalm::{run_fedcpalm, FedCPalmRun};
pub use kmeans::{run_kmeanspp, KmeansOutput};
pub use palm::{run_palm_centralized, PalmRun};
pub use sncp::{run_sncp, SncpOutput, SncpSchedule, SolverKind};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng, StreamTag};
use crate::metrics::{assign_labels, clustering_accuracy, RoundTrace};
use crate::model::{FactorState, HStepRule, Problem, WStepRule};

/// Per-round count of W epochs: constant, or decaying as `⌊q̂/s⌋ + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Q2Schedule {
    Constant(u32),
    Diminishing { q_hat: u32 },
}

impl Q2Schedule {
    /// Epoch count for round `s >= 1`.
    pub fn at(&self, s: u32) -> u32 {
        match *self {
            Q2Schedule::Constant(q) => q,
            Q2Schedule::Diminishing { q_hat } => q_hat / s + 1,
        }
    }
}

/// Hyperparameters shared by the federated solvers.
#[derive(Debug, Clone)]
pub struct FedConfig {
    /// Safety factor for the Lipschitz-scaled step rules; must exceed 1 there.
    pub gamma: f64,
    /// H epochs per round.
    pub q1: u32,
    /// W epochs per round.
    pub q2: Q2Schedule,
    /// Active clients per round (gradient sharing); model averaging requires
    /// full participation.
    pub m: usize,
    /// Round budget.
    pub rounds: u32,
    /// Stop once the normalized objective change drops below this.
    pub eps_stop: f64,
    pub step_rule_h: HStepRule,
    pub step_rule_w: WStepRule,
    pub seed: u64,
}

impl FedConfig {
    /// Practical spectral step rules and full participation over `p` clients.
    pub fn practical(p: usize, seed: u64) -> Self {
        FedConfig {
            gamma: 1.5,
            q1: 1,
            q2: Q2Schedule::Constant(1),
            m: p,
            rounds: 100,
            eps_stop: 1e-6,
            step_rule_h: HStepRule::HalfSpectral,
            step_rule_w: WStepRule::Spectral,
            seed,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.q1 < 1 {
            return Err(Error::InvalidArgument("q1 must be at least 1".into()));
        }
        if let Q2Schedule::Constant(q2) = self.q2 {
            if q2 < 1 {
                return Err(Error::InvalidArgument("q2 must be at least 1".into()));
            }
        }
        if self.m == 0 || self.m > p {
            return Err(Error::BadSampleSize { m: self.m, p });
        }
        if !(self.eps_stop > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "eps_stop must be positive, got {}",
                self.eps_stop
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("round budget must be positive".into()));
        }
        let needs_gamma = self.step_rule_h == HStepRule::ScaledLipschitz
            || self.step_rule_w == WStepRule::ScaledLipschitz;
        if needs_gamma && self.gamma <= 1.0 {
            return Err(Error::GammaTooSmall(self.gamma));
        }
        Ok(())
    }
}

/// Raw sums backing the empirical descent measures: per-epoch weighted
/// squared iterate changes of the assignment and centroid blocks.
#[derive(Debug, Clone, Default)]
pub struct DescentMeasure {
    /// `Σ_s Σ_t Σ_p ω_p L_{H_p}^s ‖H_p^{s,t} − H_p^{s,t−1}‖_F²`
    pub h_term: f64,
    /// `Σ_s Σ_t L_W^s ‖W^{s,t} − W^{s,t−1}‖_F²` (the averaged model for
    /// model averaging, the server model for gradient sharing)
    pub w_term: f64,
    /// `Σ_s (Q1 + Q2^s)`, the per-client gradient-evaluation count.
    pub epochs: u64,
}

impl DescentMeasure {
    /// Model-averaging average: `(1/T)[(γ−1)/2 · h_term + ½ · w_term]`.
    pub fn model_averaging_average(&self, gamma: f64) -> f64 {
        (0.5 * (gamma - 1.0) * self.h_term + 0.5 * self.w_term) / self.epochs as f64
    }

    /// Gradient-sharing average: `(1/T)[(m/P) · h_term + w_term]`.
    pub fn gradient_sharing_average(&self, m: usize, p: usize) -> f64 {
        ((m as f64 / p as f64) * self.h_term + self.w_term) / self.epochs as f64
    }
}

/// A full solver run: final factors, per-round traces, descent statistics.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: FactorState,
    pub traces: Vec<RoundTrace>,
    pub descent: DescentMeasure,
}

/// Round-stepped solver surface shared by the federated and centralized
/// solvers; lets the SNCP loop drive any of them uniformly.
pub trait RoundSolver {
    fn step_round(&mut self) -> Result<RoundTrace>;
    /// Swap the assignment penalties for subsequent rounds (warm start).
    fn set_penalties(&mut self, rho: f64, nu: f64);
    fn state(&self) -> FactorState;
    fn uplink_total(&self) -> u64;
}

/// Seeded common starting point: W uniform in the centroid box, assignment
/// columns uniform nonnegative then projected feasible. The same seed yields
/// the same initial point for every solver.
pub fn init_state(problem: &Problem, seed: u64) -> FactorState {
    let (lo, hi) = problem.w_box();
    let mut rng_w = Rng::for_stream(seed, StreamTag::InitW);
    let w = Matrix::from_fn(problem.features(), problem.clusters(), |_, _| {
        rng_w.uniform(lo, hi)
    });
    let h = (0..problem.num_clients())
        .map(|p| {
            let mut rng = Rng::for_client_stream(seed, StreamTag::InitH, p);
            let mut hp = Matrix::from_fn(
                problem.clusters(),
                problem.shard(p).n_samples(),
                |_, _| rng.unit(),
            );
            problem.h_constraint().project_in_place(&mut hp);
            hp
        })
        .collect();
    FactorState { w, h }
}

/// Runs `solver` until the stopping rule fires or the budget is spent.
pub(crate) fn drive(
    solver: &mut dyn RoundSolver,
    rounds: u32,
    eps_stop: f64,
) -> Result<Vec<RoundTrace>> {
    let mut traces = Vec::new();
    for _ in 0..rounds {
        let trace = solver.step_round()?;
        let eps = trace.epsilon;
        traces.push(trace);
        if eps < eps_stop {
            break;
        }
    }
    Ok(traces)
}

/// Permutation-matched accuracy of the current assignments, when every shard
/// carries ground-truth labels.
pub(crate) fn state_accuracy(problem: &Problem, h: &[Matrix]) -> Option<f64> {
    let truth = problem.concatenated_labels()?;
    let mut pred = Vec::with_capacity(problem.total_samples());
    for hp in h {
        pred.extend(assign_labels(hp));
    }
    clustering_accuracy(&pred, &truth, problem.clusters()).ok()
}

/// Epsilon for the trace: `+inf` on the first round, 0 once the objective
/// hits exact zero (already optimal), the normalized change otherwise.
pub(crate) fn trace_epsilon(f_prev: Option<f64>, f_cur: f64) -> Result<f64> {
    match f_prev {
        None => Ok(f64::INFINITY),
        Some(fp) if fp > 0.0 => crate::metrics::epsilon(fp, f_cur),
        Some(_) => Ok(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HConstraint;

    #[test]
    fn q2_schedule_values() {
        let sched = Q2Schedule::Diminishing { q_hat: 3 };
        let got: Vec<u32> = (1..=4).map(|s| sched.at(s)).collect();
        assert_eq!(got, vec![4, 2, 2, 1]);
        assert_eq!(Q2Schedule::Constant(7).at(100), 7);
    }

    #[test]
    fn config_validation() {
        let mut cfg = FedConfig::practical(10, 0);
        cfg.validate(10).unwrap();
        cfg.m = 11;
        assert!(cfg.validate(10).is_err());
        cfg.m = 10;
        cfg.step_rule_h = HStepRule::ScaledLipschitz;
        cfg.gamma = 1.0;
        assert!(matches!(cfg.validate(10), Err(Error::GammaTooSmall(_))));
        cfg.gamma = 1.5;
        cfg.validate(10).unwrap();
        cfg.eps_stop = 0.0;
        assert!(cfg.validate(10).is_err());
    }

    #[test]
    fn init_state_is_seed_deterministic_and_feasible() {
        let mut rng = Rng::from_seed(1);
        let x0 = Matrix::from_fn(6, 9, |_, _| rng.uniform(-1.0, 3.0));
        let x1 = Matrix::from_fn(6, 7, |_, _| rng.uniform(-1.0, 3.0));
        let problem = Problem::from_matrices(
            vec![(x0, None), (x1, None)],
            3,
            0.0,
            0.0,
            HConstraint::Nonneg,
        )
        .unwrap();
        let a = init_state(&problem, 42);
        let b = init_state(&problem, 42);
        assert_eq!(a, b);
        let c = init_state(&problem, 43);
        assert_ne!(a, c);
        a.validate(&problem).unwrap();
        let (lo, hi) = problem.w_box();
        assert!(a.w.data().iter().all(|&v| v >= lo && v <= hi));
        assert!(a.h.iter().all(|h| h.data().iter().all(|&v| v >= 0.0)));
    }
}
