//! Gradient-sharing federated clustering with differential uploads and
//! partial participation.
//!
//! The server keeps additive gradient statistics `G1 = Σ_p (2/N) H_p H_pᵀ`
//! and `G2 = Σ_p (2/N) X_p H_pᵀ`. Each round it samples an active set,
//! broadcasts the centroid model to those clients only; active clients run
//! `Q1` projected gradient epochs on their assignments and upload the
//! *change* in their statistics, from which the server reconstructs
//! `∇_W F = W G1 − G2` exactly and takes `Q2` projected gradient epochs.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fedruntime::{
    run_round, CostMeter, Endpoint, InMemoryTransport, Message, MessageBody, Participation,
};
use crate::linalg::{
    frob_dist_sq, lambda_max_psd, Matrix, Rng, StreamTag, LAMBDA_MAX_ITER, LAMBDA_TOL,
};
use crate::metrics::RoundTrace;
use crate::model::{
    lipschitz_h, lipschitz_w, pgd_step_h, pgd_step_w, step_h_from_lambda, step_w_from_lambda,
    FactorState, HGradCache, Problem,
};

use super::{
    drive, init_state, state_accuracy, trace_epsilon, DescentMeasure, FedConfig, RoundSolver,
    RunOutput,
};

/// Snapshot of one gradient-sharing round, for inspection and testing.
#[derive(Debug, Clone)]
pub struct GdsRoundRecord {
    pub round: u32,
    pub active: Vec<usize>,
    /// Accumulators after this round's uploads were applied.
    pub g1: Matrix,
    pub g2: Matrix,
    /// Server model before each W epoch, in epoch order.
    pub w_before: Vec<Matrix>,
    /// Every client's assignment block after this round's H phase.
    pub h_after: Vec<Matrix>,
}

pub struct FedCGdsRun<'a> {
    problem: &'a Problem,
    cfg: FedConfig,
    rho: f64,
    nu: f64,
    w: Matrix,
    h: Vec<Matrix>,
    g1: Matrix,
    g2: Matrix,
    participation: Participation,
    transport: InMemoryTransport,
    meter: CostMeter,
    descent: DescentMeasure,
    round: u32,
    f_prev: Option<f64>,
    round_log: Option<Vec<GdsRoundRecord>>,
}

impl<'a> FedCGdsRun<'a> {
    pub fn new(problem: &'a Problem, cfg: FedConfig) -> Result<Self> {
        let state = init_state(problem, cfg.seed);
        Self::from_state(problem, cfg, state)
    }

    pub fn from_state(problem: &'a Problem, cfg: FedConfig, state: FactorState) -> Result<Self> {
        cfg.validate(problem.num_clients())?;
        state.validate(problem)?;
        let p = problem.num_clients();
        let k = problem.clusters();
        let n = problem.total_samples() as f64;
        let rng = Rng::for_stream(cfg.seed, StreamTag::Participation);
        let participation = Participation::new(p, cfg.m, rng)?;
        let mut transport = InMemoryTransport::new(p);
        let mut meter = CostMeter::new();

        // Bootstrap: every client uploads its full statistics once so the
        // server can seed the accumulators; metered as round 0.
        let mut g1 = Matrix::zeros(k, k);
        let mut g2 = Matrix::zeros(problem.features(), k);
        for (p_idx, (shard, hp)) in problem.shards().iter().zip(&state.h).enumerate() {
            let body = MessageBody::UploadDiff {
                u: hp.outer_gram(),
                v: shard.x().mul_transpose(hp),
            };
            transport.send(
                Endpoint::Server,
                Message {
                    round: 0,
                    sender: p_idx as u32,
                    body,
                },
            )?;
        }
        while let Some(msg) = transport.recv(Endpoint::Server) {
            meter.record(0, msg.body.real_value_count());
            match msg.body {
                MessageBody::UploadDiff { u, v } => {
                    g1.add_scaled(2.0 / n, &u);
                    g2.add_scaled(2.0 / n, &v);
                }
                _ => unreachable!("bootstrap only sends differentials"),
            }
        }

        Ok(Self {
            problem,
            rho: problem.rho(),
            nu: problem.nu(),
            w: state.w,
            h: state.h,
            g1,
            g2,
            participation,
            transport,
            meter,
            descent: DescentMeasure::default(),
            round: 1,
            f_prev: None,
            round_log: None,
            cfg,
        })
    }

    pub fn enable_round_log(&mut self) {
        self.round_log = Some(Vec::new());
    }

    pub fn round_log(&self) -> Option<&[GdsRoundRecord]> {
        self.round_log.as_deref()
    }

    pub fn descent(&self) -> &DescentMeasure {
        &self.descent
    }

    pub fn meter(&self) -> &CostMeter {
        &self.meter
    }

    pub fn transport_mut(&mut self) -> &mut InMemoryTransport {
        &mut self.transport
    }

    pub fn participation_schedule(&self) -> &[Vec<usize>] {
        self.participation.schedule()
    }

    pub fn accumulators(&self) -> (&Matrix, &Matrix) {
        (&self.g1, &self.g2)
    }
}

impl RoundSolver for FedCGdsRun<'_> {
    fn step_round(&mut self) -> Result<RoundTrace> {
        let started = Instant::now();
        let s = self.round;
        let problem = self.problem;
        let p_count = problem.num_clients();
        let k = problem.clusters();
        let n = problem.total_samples();
        let n_f = n as f64;
        let (lo, hi) = problem.w_box();
        let active = self.participation.draw()?.to_vec();

        let lambda_wtw = lambda_max_psd(&self.w.gram(), LAMBDA_TOL, LAMBDA_MAX_ITER)?;
        let q1 = self.cfg.q1;
        let q2 = self.cfg.q2.at(s);
        let (rho, nu) = (self.rho, self.nu);
        let constraint = problem.h_constraint();
        let rule_h = self.cfg.step_rule_h;
        let rule_w = self.cfg.step_rule_w;
        let gamma = self.cfg.gamma;

        let h_cur = &self.h;
        let mut h_next: Vec<Option<Matrix>> = vec![None; p_count];
        let mut h_descent = 0.0;
        let h_next_ref = &mut h_next;
        let h_descent_ref = &mut h_descent;
        let mut client_step = |p: usize, w_recv: &Matrix| -> Result<MessageBody> {
            let shard = problem.shard(p);
            let c_p = step_h_from_lambda(
                lambda_wtw,
                shard.n_samples(),
                shard.omega(),
                k,
                rule_h,
                gamma,
                rho,
                nu,
            )?;
            let l_hp = lipschitz_h(lambda_wtw, shard.n_samples(), shard.omega(), rho, nu, k);
            let cache = HGradCache::new(w_recv, shard, rho, nu);
            let mut hp = h_cur[p].clone();
            let u0 = hp.outer_gram();
            let v0 = shard.x().mul_transpose(&hp);
            for _ in 0..q1 {
                let g = cache.grad(&hp);
                let prev = hp.clone();
                pgd_step_h(&mut hp, &g, c_p, constraint);
                *h_descent_ref += shard.omega() * l_hp * frob_dist_sq(&hp, &prev);
            }
            let mut u = hp.outer_gram();
            u.add_scaled(-1.0, &u0);
            let mut v = shard.x().mul_transpose(&hp);
            v.add_scaled(-1.0, &v0);
            h_next_ref[p] = Some(hp);
            Ok(MessageBody::UploadDiff { u, v })
        };

        let broadcast = self.w.clone();
        let g1 = &mut self.g1;
        let g2 = &mut self.g2;
        let w = &mut self.w;
        let mut server_step =
            |uploads: Vec<(usize, MessageBody)>| -> Result<(Vec<Matrix>, f64)> {
                for (p, body) in uploads {
                    match body {
                        MessageBody::UploadDiff { u, v } => {
                            g1.add_scaled(2.0 / n_f, &u);
                            g2.add_scaled(2.0 / n_f, &v);
                        }
                        _ => {
                            return Err(Error::Protocol(format!(
                                "client {p} sent a non-differential upload"
                            )))
                        }
                    }
                }
                // The accumulators already hold (2/N) Σ H_p H_pᵀ, so the
                // spectral quantity for the step size comes for free.
                let gram_est = g1.scaled(n_f / 2.0);
                let lambda_hht = lambda_max_psd(&gram_est, LAMBDA_TOL, LAMBDA_MAX_ITER)?;
                let d = step_w_from_lambda(lambda_hht, s, rule_w, gamma, n)?;
                let l_w = lipschitz_w(lambda_hht, n);
                let mut w_before = Vec::with_capacity(q2 as usize);
                let mut w_descent = 0.0;
                for _ in 0..q2 {
                    w_before.push(w.clone());
                    let mut grad = w.mul(g1);
                    grad.add_scaled(-1.0, g2);
                    let prev = w.clone();
                    pgd_step_w(w, &grad, d, lo, hi)?;
                    w_descent += l_w * frob_dist_sq(w, &prev);
                }
                Ok((w_before, w_descent))
            };

        let (w_before, w_descent) = run_round(
            &mut self.transport,
            &mut self.meter,
            s,
            &broadcast,
            &active,
            &mut client_step,
            &mut server_step,
        )?;

        for (p, hp) in h_next.into_iter().enumerate() {
            if let Some(hp) = hp {
                self.h[p] = hp;
            }
        }
        self.descent.h_term += h_descent;
        self.descent.w_term += w_descent;
        self.descent.epochs += (q1 + q2) as u64;

        if let Some(log) = &mut self.round_log {
            log.push(GdsRoundRecord {
                round: s,
                active: active.clone(),
                g1: self.g1.clone(),
                g2: self.g2.clone(),
                w_before,
                h_after: self.h.clone(),
            });
        }

        // Metrics-only side channel: the global objective uses every
        // client's current assignments and never feeds back into the run.
        let f = crate::model::objective_global_parts(&self.w, &self.h, problem, self.rho, self.nu)?;
        let eps = trace_epsilon(self.f_prev, f)?;
        self.f_prev = Some(f);
        let trace = RoundTrace {
            round: s,
            objective: f,
            epsilon: eps,
            uplink_cumulative: self.meter.uplink_total(),
            active_count: active.len(),
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
            w: self.w.clone(),
            h: self.h.clone(),
        }
    }

    fn uplink_total(&self) -> u64 {
        self.meter.uplink_total()
    }
}

/// Runs gradient-sharing federated clustering to the configured stop rule.
pub fn run_fedcgds(problem: &Problem, cfg: FedConfig) -> Result<RunOutput> {
    let rounds = cfg.rounds;
    let eps_stop = cfg.eps_stop;
    let mut solver = FedCGdsRun::new(problem, cfg)?;
    let traces = drive(&mut solver, rounds, eps_stop)?;
    Ok(RunOutput {
        state: solver.state(),
        traces,
        descent: solver.descent.clone(),
    })
}
