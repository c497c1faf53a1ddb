//! Naive baseline: clients run full local alternating minimization between
//! averaging rounds.
//!
//! Per round every client applies `Q/2` complete alternating steps (one
//! projected H step, one *projected* W step) to its own local problem before
//! uploading its centroid model. Solving the local problems this accurately
//! turns out to hurt global convergence on heterogeneous data, which is why
//! it stays a baseline.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fedruntime::{run_round, CostMeter, InMemoryTransport, MessageBody};
use crate::linalg::{lambda_max_psd, project_box_in_place, Matrix, LAMBDA_MAX_ITER, LAMBDA_TOL};
use crate::metrics::RoundTrace;
use crate::model::{
    pgd_step_h, pgd_step_w, step_h_from_lambda, step_w_from_lambda, FactorState, HGradCache,
    Problem, WGradCache,
};

use super::{
    drive, init_state, state_accuracy, trace_epsilon, FedConfig, Q2Schedule, RoundSolver,
    RunOutput,
};

pub struct FedCPalmRun<'a> {
    problem: &'a Problem,
    cfg: FedConfig,
    rho: f64,
    nu: f64,
    q_half: u32,
    w_clients: Vec<Matrix>,
    h: Vec<Matrix>,
    round: u32,
    f_prev: Option<f64>,
    transport: InMemoryTransport,
    meter: CostMeter,
}

impl<'a> FedCPalmRun<'a> {
    pub fn new(problem: &'a Problem, cfg: FedConfig) -> Result<Self> {
        let state = init_state(problem, cfg.seed);
        Self::from_state(problem, cfg, state)
    }

    pub fn from_state(problem: &'a Problem, cfg: FedConfig, state: FactorState) -> Result<Self> {
        cfg.validate(problem.num_clients())?;
        if cfg.m != problem.num_clients() {
            return Err(Error::InvalidArgument(format!(
                "local alternating baseline requires full participation (m = {}), got m = {}",
                problem.num_clients(),
                cfg.m
            )));
        }
        let q2 = match cfg.q2 {
            Q2Schedule::Constant(q2) => q2,
            Q2Schedule::Diminishing { .. } => {
                return Err(Error::InvalidArgument(
                    "local alternating baseline needs a constant epoch count".into(),
                ))
            }
        };
        let q = cfg.q1 + q2;
        if q % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "total epoch count must be even to alternate locally, got {q}"
            )));
        }
        state.validate(problem)?;
        let p = problem.num_clients();
        Ok(Self {
            problem,
            rho: problem.rho(),
            nu: problem.nu(),
            q_half: q / 2,
            w_clients: vec![state.w; p],
            h: state.h,
            round: 1,
            f_prev: None,
            transport: InMemoryTransport::new(p),
            meter: CostMeter::new(),
            cfg,
        })
    }

    pub fn meter(&self) -> &CostMeter {
        &self.meter
    }

    fn averaged_w(&self) -> Result<Matrix> {
        let (lo, hi) = self.problem.w_box();
        let mut w = Matrix::zeros(self.problem.features(), self.problem.clusters());
        for (shard, wp) in self.problem.shards().iter().zip(&self.w_clients) {
            w.add_scaled(shard.omega(), wp);
        }
        project_box_in_place(&mut w, lo, hi)?;
        Ok(w)
    }
}

impl RoundSolver for FedCPalmRun<'_> {
    fn step_round(&mut self) -> Result<RoundTrace> {
        let started = Instant::now();
        let s = self.round;
        let problem = self.problem;
        let p_count = problem.num_clients();
        let k = problem.clusters();
        let n = problem.total_samples();
        let (lo, hi) = problem.w_box();

        let w_s = self.averaged_w()?;

        // Lockstep local alternating iterations. The H step size is local;
        // the W step size is the globally synchronized spectral quantity,
        // like the plain model-averaging solver uses.
        let mut w_loc: Vec<Matrix> = vec![w_s.clone(); p_count];
        let mut h_loc: Vec<Matrix> = self.h.clone();
        for _ in 0..self.q_half {
            for (p, shard) in problem.shards().iter().enumerate() {
                let lambda_wtw = lambda_max_psd(&w_loc[p].gram(), LAMBDA_TOL, LAMBDA_MAX_ITER)?;
                let c = step_h_from_lambda(
                    lambda_wtw,
                    shard.n_samples(),
                    shard.omega(),
                    k,
                    self.cfg.step_rule_h,
                    self.cfg.gamma,
                    self.rho,
                    self.nu,
                )?;
                let g = HGradCache::new(&w_loc[p], shard, self.rho, self.nu).grad(&h_loc[p]);
                pgd_step_h(&mut h_loc[p], &g, c, problem.h_constraint());
            }
            let mut gram = Matrix::zeros(k, k);
            for hp in &h_loc {
                gram.add_scaled(1.0, &hp.outer_gram());
            }
            let lambda_hht = lambda_max_psd(&gram, LAMBDA_TOL, LAMBDA_MAX_ITER)?;
            let d = step_w_from_lambda(lambda_hht, s, self.cfg.step_rule_w, self.cfg.gamma, n)?;
            for (p, shard) in problem.shards().iter().enumerate() {
                let g = WGradCache::new(&h_loc[p], shard).grad(&w_loc[p]);
                pgd_step_w(&mut w_loc[p], &g, d, lo, hi)?;
            }
        }

        // Message round: upload the locally solved models, average at server.
        let active: Vec<usize> = (0..p_count).collect();
        let w_loc_ref = &w_loc;
        let mut client_step =
            |p: usize, _w: &Matrix| -> Result<MessageBody> { Ok(MessageBody::UploadW(w_loc_ref[p].clone())) };
        let mut server_step = |uploads: Vec<(usize, MessageBody)>| -> Result<Vec<Matrix>> {
            let mut out: Vec<Option<Matrix>> = vec![None; p_count];
            for (p, body) in uploads {
                match body {
                    MessageBody::UploadW(w) => out[p] = Some(w),
                    _ => return Err(Error::Protocol(format!("client {p} sent a non-model upload"))),
                }
            }
            out.into_iter()
                .enumerate()
                .map(|(p, w)| {
                    w.ok_or_else(|| Error::Protocol(format!("missing upload from client {p}")))
                })
                .collect()
        };
        self.w_clients = run_round(
            &mut self.transport,
            &mut self.meter,
            s,
            &w_s,
            &active,
            &mut client_step,
            &mut server_step,
        )?;
        self.h = h_loc;

        let w_tilde = self.averaged_w()?;
        let f = crate::model::objective_global_parts(&w_tilde, &self.h, problem, self.rho, self.nu)?;
        let eps = trace_epsilon(self.f_prev, f)?;
        self.f_prev = Some(f);
        let trace = RoundTrace {
            round: s,
            objective: f,
            epsilon: eps,
            uplink_cumulative: self.meter.uplink_total(),
            active_count: p_count,
            wall_time_s: started.elapsed().as_secs_f64(),
            accuracy: state_accuracy(problem, &self.h),
        };
        self.round += 1;
        Ok(trace)
    }

    fn set_penalties(&mut self, rho: f64, nu: f64) {
        self.rho = rho;
        self.nu = nu;
    }

    fn state(&self) -> FactorState {
        FactorState {
            w: self.averaged_w().expect("box is validated at construction"),
            h: self.h.clone(),
        }
    }

    fn uplink_total(&self) -> u64 {
        self.meter.uplink_total()
    }
}

/// Runs the local-alternating baseline to the configured stop rule.
pub fn run_fedcpalm(problem: &Problem, cfg: FedConfig) -> Result<RunOutput> {
    let rounds = cfg.rounds;
    let eps_stop = cfg.eps_stop;
    let mut solver = FedCPalmRun::new(problem, cfg)?;
    let traces = drive(&mut solver, rounds, eps_stop)?;
    Ok(RunOutput {
        state: solver.state(),
        traces,
        descent: super::DescentMeasure::default(),
    })
}
