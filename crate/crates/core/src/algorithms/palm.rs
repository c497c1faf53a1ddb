//! Centralized alternating projected-gradient baseline.
//!
//! Works on the concatenated data `X = [X_1 … X_P]` and a single assignment
//! block; each iteration takes one projected gradient step on H followed by
//! one projected gradient step on W, with the configured step rules.

use std::time::Instant;

use crate::error::Result;
use crate::linalg::{lambda_max_psd, Matrix, LAMBDA_MAX_ITER, LAMBDA_TOL};
use crate::metrics::RoundTrace;
use crate::model::{
    objective_local, pgd_step_h, pgd_step_w, step_h_from_lambda, step_w_from_lambda, DataShard,
    FactorState, HGradCache, Problem, WGradCache,
};

use super::{drive, init_state, state_accuracy, trace_epsilon, FedConfig, RoundSolver, RunOutput};

pub struct PalmRun<'a> {
    problem: &'a Problem,
    cfg: FedConfig,
    rho: f64,
    nu: f64,
    /// All shards column-stacked, with unit weight.
    data: DataShard,
    w: Matrix,
    h: Matrix,
    iter: u32,
    f_prev: Option<f64>,
}

impl<'a> PalmRun<'a> {
    pub fn new(problem: &'a Problem, cfg: FedConfig) -> Result<Self> {
        let state = init_state(problem, cfg.seed);
        Self::from_state(problem, cfg, state)
    }

    pub fn from_state(problem: &'a Problem, cfg: FedConfig, state: FactorState) -> Result<Self> {
        state.validate(problem)?;
        let xs: Vec<&Matrix> = problem.shards().iter().map(|s| s.x()).collect();
        let x_cat = Matrix::hstack(&xs)?;
        let hs: Vec<&Matrix> = state.h.iter().collect();
        let h_cat = Matrix::hstack(&hs)?;
        Ok(Self {
            problem,
            rho: problem.rho(),
            nu: problem.nu(),
            data: DataShard::new(x_cat, 1.0, None)?,
            w: state.w,
            h: h_cat,
            iter: 1,
            f_prev: None,
            cfg,
        })
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    /// Splits the concatenated assignment block back into per-shard blocks.
    fn split_h(&self) -> Vec<Matrix> {
        let k = self.problem.clusters();
        let mut out = Vec::with_capacity(self.problem.num_clients());
        let mut at = 0usize;
        for shard in self.problem.shards() {
            let np = shard.n_samples();
            let mut hp = Matrix::zeros(k, np);
            for j in 0..np {
                hp.col_mut(j).copy_from_slice(self.h.col(at + j));
            }
            out.push(hp);
            at += np;
        }
        out
    }
}

impl RoundSolver for PalmRun<'_> {
    fn step_round(&mut self) -> Result<RoundTrace> {
        let started = Instant::now();
        let t = self.iter;
        let problem = self.problem;
        let n = problem.total_samples();
        let k = problem.clusters();
        let (lo, hi) = problem.w_box();

        let lambda_wtw = lambda_max_psd(&self.w.gram(), LAMBDA_TOL, LAMBDA_MAX_ITER)?;
        let c = step_h_from_lambda(
            lambda_wtw,
            n,
            1.0,
            k,
            self.cfg.step_rule_h,
            self.cfg.gamma,
            self.rho,
            self.nu,
        )?;
        let g = HGradCache::new(&self.w, &self.data, self.rho, self.nu).grad(&self.h);
        pgd_step_h(&mut self.h, &g, c, problem.h_constraint());

        let lambda_hht = lambda_max_psd(&self.h.outer_gram(), LAMBDA_TOL, LAMBDA_MAX_ITER)?;
        let d = step_w_from_lambda(lambda_hht, t, self.cfg.step_rule_w, self.cfg.gamma, n)?;
        let g = WGradCache::new(&self.h, &self.data).grad(&self.w);
        pgd_step_w(&mut self.w, &g, d, lo, hi)?;

        let f = objective_local(&self.w, &self.h, &self.data, self.rho, self.nu)?;
        let eps = trace_epsilon(self.f_prev, f)?;
        self.f_prev = Some(f);
        let h_split = self.split_h();
        let trace = RoundTrace {
            round: t,
            objective: f,
            epsilon: eps,
            uplink_cumulative: 0,
            active_count: 0,
            wall_time_s: started.elapsed().as_secs_f64(),
            accuracy: state_accuracy(problem, &h_split),
        };
        self.iter += 1;
        Ok(trace)
    }

    fn set_penalties(&mut self, rho: f64, nu: f64) {
        self.rho = rho;
        self.nu = nu;
    }

    fn state(&self) -> FactorState {
        FactorState {
            w: self.w.clone(),
            h: self.split_h(),
        }
    }

    fn uplink_total(&self) -> u64 {
        0
    }
}

/// Runs the centralized baseline; `cfg.rounds` is the iteration budget.
pub fn run_palm_centralized(problem: &Problem, cfg: FedConfig) -> Result<RunOutput> {
    let rounds = cfg.rounds;
    let eps_stop = cfg.eps_stop;
    let mut solver = PalmRun::new(problem, cfg)?;
    let traces = drive(&mut solver, rounds, eps_stop)?;
    Ok(RunOutput {
        state: solver.state(),
        traces,
        descent: super::DescentMeasure::default(),
    })
}
