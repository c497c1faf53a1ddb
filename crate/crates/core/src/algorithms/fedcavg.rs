//! Model-averaging federated clustering.
//!
//! Per round: the server averages the client centroid models with weights
//! `ω_p` and projects into the box; every client then runs `Q1` projected
//! gradient epochs on its assignment block (centroid held fixed) followed by
//! `Q2` *unprojected* gradient epochs on its local centroid copy (assignments
//! held fixed), and uploads the result. Projection of the centroid happens
//! only at the server.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fedruntime::{run_round, CostMeter, InMemoryTransport, MessageBody};
use crate::linalg::{
    frob_dist_sq, frob_norm_sq, lambda_max_psd, project_box_in_place, Matrix, LAMBDA_MAX_ITER,
    LAMBDA_TOL,
};
use crate::metrics::RoundTrace;
use crate::model::{
    gd_step_w, lipschitz_h, lipschitz_w, pgd_step_h, step_h_from_lambda, step_w_from_lambda,
    FactorState, HGradCache, Problem, WGradCache,
};

use super::{
    drive, init_state, state_accuracy, trace_epsilon, DescentMeasure, FedConfig, RoundSolver,
    RunOutput,
};

/// Per-epoch record of the averaged model during the W phase, for
/// inspecting how far the per-client models drift from their average.
#[derive(Debug, Clone)]
pub struct AvgEpochRecord {
    pub round: u32,
    /// W epoch offset within the round, starting at 1.
    pub epoch: u32,
    /// `max_p ‖W̃^{s,t} − W_p^{s,t}‖_F`
    pub drift_max: f64,
    /// `max_p ‖∇_W F_p‖_F` over the gradients applied at this epoch.
    pub grad_norm_max: f64,
    pub d: f64,
}

pub struct FedCAvgRun<'a> {
    problem: &'a Problem,
    cfg: FedConfig,
    rho: f64,
    nu: f64,
    /// Client models uploaded at the end of the previous round.
    w_clients: Vec<Matrix>,
    h: Vec<Matrix>,
    round: u32,
    f_prev: Option<f64>,
    transport: InMemoryTransport,
    meter: CostMeter,
    descent: DescentMeasure,
    epoch_log: Option<Vec<AvgEpochRecord>>,
}

impl<'a> FedCAvgRun<'a> {
    pub fn new(problem: &'a Problem, cfg: FedConfig) -> Result<Self> {
        let state = init_state(problem, cfg.seed);
        Self::from_state(problem, cfg, state)
    }

    pub fn from_state(problem: &'a Problem, cfg: FedConfig, state: FactorState) -> Result<Self> {
        cfg.validate(problem.num_clients())?;
        if cfg.m != problem.num_clients() {
            return Err(Error::InvalidArgument(format!(
                "model averaging requires full participation (m = {}), got m = {}",
                problem.num_clients(),
                cfg.m
            )));
        }
        state.validate(problem)?;
        let p = problem.num_clients();
        Ok(Self {
            problem,
            rho: problem.rho(),
            nu: problem.nu(),
            w_clients: vec![state.w; p],
            h: state.h,
            round: 1,
            f_prev: None,
            transport: InMemoryTransport::new(p),
            meter: CostMeter::new(),
            descent: DescentMeasure::default(),
            epoch_log: None,
            cfg,
        })
    }

    pub fn enable_epoch_log(&mut self) {
        self.epoch_log = Some(Vec::new());
    }

    pub fn epoch_log(&self) -> Option<&[AvgEpochRecord]> {
        self.epoch_log.as_deref()
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

    /// Weighted, box-projected average of the current client models.
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

impl RoundSolver for FedCAvgRun<'_> {
    fn step_round(&mut self) -> Result<RoundTrace> {
        let started = Instant::now();
        let s = self.round;
        let problem = self.problem;
        let p_count = problem.num_clients();
        let k = problem.clusters();
        let n = problem.total_samples();
        let (lo, hi) = problem.w_box();

        // Server: average the previous round's uploads and project.
        let w_s = self.averaged_w()?;

        // One spectral estimate per round serves every client's H step size.
        let lambda_wtw = lambda_max_psd(&w_s.gram(), LAMBDA_TOL, LAMBDA_MAX_ITER)?;

        // H phase: Q1 projected gradient epochs per client, centroid fixed.
        let mut h_new: Vec<Matrix> = Vec::with_capacity(p_count);
        for (p, shard) in problem.shards().iter().enumerate() {
            let c_p = step_h_from_lambda(
                lambda_wtw,
                shard.n_samples(),
                shard.omega(),
                k,
                self.cfg.step_rule_h,
                self.cfg.gamma,
                self.rho,
                self.nu,
            )?;
            let l_hp = lipschitz_h(
                lambda_wtw,
                shard.n_samples(),
                shard.omega(),
                self.rho,
                self.nu,
                k,
            );
            let cache = HGradCache::new(&w_s, shard, self.rho, self.nu);
            let mut hp = self.h[p].clone();
            for _ in 0..self.cfg.q1 {
                let g = cache.grad(&hp);
                let prev = hp.clone();
                pgd_step_h(&mut hp, &g, c_p, problem.h_constraint());
                self.descent.h_term += shard.omega() * l_hp * frob_dist_sq(&hp, &prev);
            }
            h_new.push(hp);
        }

        // Global W step size from the post-H assignment blocks.
        let mut gram = Matrix::zeros(k, k);
        for hp in &h_new {
            gram.add_scaled(1.0, &hp.outer_gram());
        }
        let lambda_hht = lambda_max_psd(&gram, LAMBDA_TOL, LAMBDA_MAX_ITER)?;
        let d = step_w_from_lambda(lambda_hht, s, self.cfg.step_rule_w, self.cfg.gamma, n)?;
        let l_w = lipschitz_w(lambda_hht, n);
        let q2 = self.cfg.q2.at(s);

        // W phase, run through the message round: each client takes Q2
        // unprojected gradient steps on its own centroid copy and uploads it.
        let active: Vec<usize> = (0..p_count).collect();
        let mut w_traj: Vec<Vec<Matrix>> = (0..p_count).map(|_| Vec::new()).collect();
        let mut grad_norms: Vec<Vec<f64>> = (0..p_count).map(|_| Vec::new()).collect();
        let h_ref = &h_new;
        let traj_ref = &mut w_traj;
        let norms_ref = &mut grad_norms;
        let mut client_step = |p: usize, w_recv: &Matrix| -> Result<MessageBody> {
            let shard = problem.shard(p);
            let cache = WGradCache::new(&h_ref[p], shard);
            let mut wp = w_recv.clone();
            traj_ref[p].push(wp.clone());
            for _ in 0..q2 {
                let g = cache.grad(&wp);
                norms_ref[p].push(frob_norm_sq(&g).sqrt());
                gd_step_w(&mut wp, &g, d);
                traj_ref[p].push(wp.clone());
            }
            Ok(MessageBody::UploadW(wp))
        };
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

        // Epoch-wise averaged model: descent statistic and drift log.
        let mut w_tilde = w_s;
        for t in 0..q2 as usize {
            let mut w_bar = Matrix::zeros(problem.features(), k);
            for (shard, traj) in problem.shards().iter().zip(w_traj.iter()) {
                w_bar.add_scaled(shard.omega(), &traj[t + 1]);
            }
            project_box_in_place(&mut w_bar, lo, hi)?;
            self.descent.w_term += l_w * frob_dist_sq(&w_bar, &w_tilde);
            if let Some(log) = &mut self.epoch_log {
                let drift_max = w_traj
                    .iter()
                    .map(|traj| frob_dist_sq(&w_bar, &traj[t + 1]).sqrt())
                    .fold(0.0, f64::max);
                let grad_norm_max = grad_norms
                    .iter()
                    .map(|ns| ns[t])
                    .fold(0.0, f64::max);
                log.push(AvgEpochRecord {
                    round: s,
                    epoch: t as u32 + 1,
                    drift_max,
                    grad_norm_max,
                    d,
                });
            }
            w_tilde = w_bar;
        }

        self.h = h_new;
        self.descent.epochs += (self.cfg.q1 + q2) as u64;

        // Trace the averaged model against the post-round assignments.
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

/// Runs model-averaging federated clustering to the configured stop rule.
pub fn run_fedcavg(problem: &Problem, cfg: FedConfig) -> Result<RunOutput> {
    let rounds = cfg.rounds;
    let eps_stop = cfg.eps_stop;
    let mut solver = FedCAvgRun::new(problem, cfg)?;
    let traces = drive(&mut solver, rounds, eps_stop)?;
    Ok(RunOutput {
        state: solver.state(),
        traces,
        descent: solver.descent.clone(),
    })
}
