//! Iterative training-shaped workload: compute, report progress part way,
//! finish computing, then average a parameter vector.

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use papred_comm::{compare, AllreduceContext, Communicator, InProcConfig, Monitor, MonitorConfig};
use papred_core::{serial_fold, Algorithm, ReduceOp};

use crate::bench::iteration_data;
use crate::error::{BenchError, Result};
use crate::launcher::run_inproc;

/// Parameter count of the reference model.
pub const DEMO_PARAMS: usize = 145_578;

#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub algorithms: Vec<Algorithm>,
    pub ranks: usize,
    pub iters: usize,
    pub size: usize,
    pub compute_ms: f64,
    /// Extra compute for rank 1 on every iteration.
    pub skew_ms: f64,
    pub edge_fraction: f64,
    pub tau_ms: f64,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            algorithms: vec![Algorithm::Ring, Algorithm::Prr],
            ranks: 4,
            iters: 10,
            size: DEMO_PARAMS,
            compute_ms: 40.0,
            skew_ms: 20.0,
            edge_fraction: 0.56,
            tau_ms: 0.5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoResult {
    pub algorithm: Algorithm,
    /// Average over iterations and ranks.
    pub mean_elapsed_ms: f64,
    pub total_ms: f64,
}

fn rank_loop(comm: Arc<Communicator>, cfg: &DemoConfig, algorithm: Algorithm) -> Result<(Vec<f64>, f64)> {
    let rank = comm.rank();
    let monitor = Arc::new(Monitor::spawn(comm.transport().clone(), MonitorConfig::default())?);
    let mut ctx = AllreduceContext::new(comm.clone(), algorithm)?
        .with_monitor(monitor.clone())
        .with_tau(Duration::from_secs_f64(cfg.tau_ms / 1e3));
    let mut elapsed = Vec::with_capacity(cfg.iters);
    comm.barrier()?;
    let start = Instant::now();
    for it in 0..cfg.iters {
        let compute = cfg.compute_ms + if rank == 1 { cfg.skew_ms } else { 0.0 };
        let compute = Duration::from_secs_f64(compute / 1e3);
        let mut params = iteration_data(cfg.seed, rank, it, cfg.size);
        monitor.phase_start()?;
        let head = compute.mul_f64(cfg.edge_fraction);
        thread::sleep(head);
        monitor.edge(cfg.edge_fraction)?;
        thread::sleep(compute.saturating_sub(head));
        monitor.phase_end()?;
        let input = params.clone();
        let out = ctx.allreduce(&mut params, ReduceOp::Sum)?;
        elapsed.push(out.elapsed().as_secs_f64() * 1e3);

        // every rank derives the same inputs from the seed
        let inputs: Vec<Vec<f32>> = (0..comm.size()).map(|r| iteration_data(cfg.seed, r, it, cfg.size)).collect();
        debug_assert_eq!(inputs[rank], input);
        let rep = compare(&params, &serial_fold(&inputs, ReduceOp::Sum)?, ReduceOp::Sum);
        if !rep.pass {
            return Err(BenchError::Correctness {
                iteration: it,
                rank,
                detail: format!("worst relative error {:.3e}", rep.worst_error),
            });
        }
    }
    comm.barrier()?;
    Ok((elapsed, start.elapsed().as_secs_f64() * 1e3))
}

pub fn run_demo(cfg: &DemoConfig) -> Result<Vec<DemoResult>> {
    if cfg.ranks < 2 || cfg.iters == 0 || cfg.size < cfg.ranks {
        return Err(BenchError::Config("demo needs >= 2 ranks, >= 1 iteration and size >= ranks".into()));
    }
    let mut results = Vec::new();
    for &alg in &cfg.algorithms {
        if !alg.supports(cfg.ranks) {
            return Err(BenchError::Config(format!("{alg} does not support {} ranks", cfg.ranks)));
        }
        let c = cfg.clone();
        let per_rank = run_inproc(cfg.ranks, &InProcConfig::default(), move |comm| rank_loop(comm, &c, alg))?;
        let all: Vec<f64> = per_rank.iter().flat_map(|(e, _)| e.iter().copied()).collect();
        let total = per_rank.iter().map(|(_, t)| *t).fold(0.0, f64::max);
        results.push(DemoResult {
            algorithm: alg,
            mean_elapsed_ms: all.iter().sum::<f64>() / all.len() as f64,
            total_ms: total,
        });
    }
    Ok(results)
}
