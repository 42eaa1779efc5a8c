//! Parameter sweeps over the tau-model simulator.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::schedule::{build_schedule, Algorithm};
use crate::sim::{simulate, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DelayMode {
    /// Rank 1 arrives `delay` late.
    OneLate,
    /// Every rank arrives uniform(0..delay)/2 late.
    RandLate,
}

impl DelayMode {
    pub fn name(self) -> &'static str {
        match self {
            DelayMode::OneLate => "one-late",
            DelayMode::RandLate => "rand-late",
        }
    }
}

impl fmt::Display for DelayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DelayMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-late" => Ok(DelayMode::OneLate),
            "rand-late" => Ok(DelayMode::RandLate),
            other => Err(CoreError::InvalidArgument(format!("unknown delay mode {other:?}"))),
        }
    }
}

/// Arrival pattern in tau units for one sweep cell.
pub fn delay_pattern(p: usize, mode: DelayMode, delay: f64, seed: u64) -> Vec<f64> {
    match mode {
        DelayMode::OneLate => {
            let mut a = vec![0.0; p];
            a[1 % p] = delay;
            a
        }
        DelayMode::RandLate => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (p as u64).rotate_left(32));
            (0..p).map(|_| if delay > 0.0 { rng.gen_range(0.0..delay) / 2.0 } else { 0.0 }).collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub algorithms: Vec<Algorithm>,
    pub ranks: Vec<usize>,
    pub delays: Vec<f64>,
    pub mode: DelayMode,
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    /// The delay grid used for the large-scale comparison, read in tau.
    pub fn default_delays() -> Vec<f64> {
        vec![0.0, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub p: usize,
    pub mode: DelayMode,
    pub delay_tau: f64,
    pub seed: u64,
    pub total_tau: f64,
    pub mean_elapsed_tau: f64,
    pub speedup_vs_ring: f64,
}

fn run_cell(alg: Algorithm, pap: &[f64]) -> std::result::Result<(f64, f64), SimError> {
    let schedule = build_schedule(alg, pap, 1.0).map_err(SimError::BadPattern)?;
    let t = simulate(&schedule, pap)?;
    let e = t.elapsed();
    Ok((t.total, e.iter().sum::<f64>() / e.len() as f64))
}

/// Run every (P, delay, seed) cell; algorithms that do not support a P are
/// skipped. Speedup compares mean elapsed time against ring on the same PAP.
pub fn run_sweep(cfg: &SweepConfig) -> std::result::Result<Vec<SweepRow>, SimError> {
    let mut cells = Vec::new();
    for &p in &cfg.ranks {
        for &delay in &cfg.delays {
            let seeds: &[u64] = if cfg.mode == DelayMode::OneLate { &cfg.seeds[..cfg.seeds.len().min(1)] } else { &cfg.seeds };
            for &seed in seeds {
                cells.push((p, delay, seed));
            }
        }
    }
    let per_cell: Vec<Vec<SweepRow>> = cells
        .par_iter()
        .map(|&(p, delay, seed)| {
            let pap = delay_pattern(p, cfg.mode, delay, seed);
            let (_, ring_mean) = run_cell(Algorithm::Ring, &pap)?;
            let mut rows = Vec::new();
            for &alg in cfg.algorithms.iter().filter(|a| a.supports(p)) {
                let (total, mean) = run_cell(alg, &pap)?;
                rows.push(SweepRow {
                    algorithm: alg,
                    p,
                    mode: cfg.mode,
                    delay_tau: delay,
                    seed,
                    total_tau: total,
                    mean_elapsed_tau: mean,
                    speedup_vs_ring: ring_mean / mean,
                });
            }
            Ok(rows)
        })
        .collect::<std::result::Result<_, SimError>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

pub const SWEEP_HEADER: [&str; 8] =
    ["algorithm", "P", "mode", "delay_tau", "seed", "total_tau", "mean_elapsed_tau", "speedup_vs_ring"];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.algorithm.name().to_string(),
            r.p.to_string(),
            r.mode.name().to_string(),
            r.delay_tau.to_string(),
            r.seed.to_string(),
            r.total_tau.to_string(),
            format!("{:.6}", r.mean_elapsed_tau),
            format!("{:.6}", r.speedup_vs_ring),
        ])?;
    }
    w.flush()?;
    Ok(())
}
