//! The synthetic compute-then-reduce benchmark loop.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use papred_comm::{
    calibrate_tau, compare, AllreduceContext, Communicator, Monitor, MonitorConfig,
};
use papred_core::{decode_elements, encode_elements, partition_segments, serial_fold, Algorithm, DelayMode, ReduceOp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub algorithm: Algorithm,
    pub size: usize,
    pub iters: usize,
    pub mode: DelayMode,
    pub max_delay_ms: f64,
    pub ranks: usize,
    pub seed: u64,
    /// Compute time of a balanced iteration.
    pub base_ms: f64,
    pub edge_fraction: f64,
    /// Fixed segment time for pre-step derivation; calibrated when `None`.
    pub tau_ms: Option<f64>,
    pub op: ReduceOp,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            algorithm: Algorithm::Ring,
            size: 128 * 1024,
            iters: 64,
            mode: DelayMode::OneLate,
            max_delay_ms: 0.0,
            ranks: 4,
            seed: 1,
            base_ms: 100.0,
            edge_fraction: 0.5,
            tau_ms: None,
            op: ReduceOp::Sum,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ranks < 2 {
            return Err(BenchError::Config("need at least 2 ranks".into()));
        }
        if !self.algorithm.supports(self.ranks) {
            return Err(BenchError::Config(format!("{} does not support {} ranks", self.algorithm, self.ranks)));
        }
        if self.size < self.ranks {
            return Err(BenchError::Config(format!("size {} is below rank count {}", self.size, self.ranks)));
        }
        if self.iters == 0 {
            return Err(BenchError::Config("need at least one iteration".into()));
        }
        if !(self.max_delay_ms >= 0.0 && self.base_ms >= 0.0) {
            return Err(BenchError::Config("delays must be non-negative".into()));
        }
        if !(self.edge_fraction > 0.0 && self.edge_fraction <= 1.0) {
            return Err(BenchError::Config("edge fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Sleep before the progress report; the same amount follows it.
    ///
    /// One-late adds the full delay to both halves for rank 1; rand-late
    /// adds half of a uniform draw from `[0, max_delay]`.
    pub fn half_time_ms(&self, rank: usize, rng: &mut impl Rng) -> f64 {
        let mut half = (self.max_delay_ms + self.base_ms) / 2.0;
        match self.mode {
            DelayMode::OneLate => {
                if rank == 1 {
                    half += self.max_delay_ms;
                }
            }
            DelayMode::RandLate => {
                if self.max_delay_ms > 0.0 {
                    half += rng.gen_range(0.0..=self.max_delay_ms) / 2.0;
                }
            }
        }
        half
    }
}

pub fn iteration_data(seed: u64, rank: usize, iteration: usize, size: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((rank as u64) << 40) ^ ((iteration as u64) << 8));
    (0..size).map(|_| rng.gen::<f32>()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub iteration: usize,
    pub rank: usize,
    pub arrival_ms: f64,
    pub finish_ms: f64,
    pub elapsed_ms: f64,
    pub mean_elapsed_ms: f64,
}

pub const BENCH_HEADER: [&str; 6] = ["iteration", "rank", "arrival_ms", "finish_ms", "elapsed_ms", "mean_elapsed_ms"];

/// Append rows to `path`, writing the header only when the file is new or empty.
pub fn append_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let fresh = file.metadata()?.len() == 0;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    if fresh {
        w.write_record(BENCH_HEADER)?;
    }
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.rank.to_string(),
            format!("{:.4}", r.arrival_ms),
            format!("{:.4}", r.finish_ms),
            format!("{:.4}", r.elapsed_ms),
            format!("{:.4}", r.mean_elapsed_ms),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != BENCH_HEADER {
        return Err(BenchError::Config(format!("{}: unexpected header {:?}", path.display(), headers)));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| BenchError::Config(format!("{}: bad number {:?}", path.display(), &rec[i])))
        };
        rows.push(BenchRow {
            iteration: num(0)? as usize,
            rank: num(1)? as usize,
            arrival_ms: num(2)?,
            finish_ms: num(3)?,
            elapsed_ms: num(4)?,
            mean_elapsed_ms: num(5)?,
        });
    }
    Ok(rows)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn agree_on_tau(comm: &Communicator, cfg: &BenchConfig, monitor: &Monitor) -> Result<Duration> {
    if let Some(t) = cfg.tau_ms {
        return Ok(Duration::from_secs_f64(t / 1e3));
    }
    let succ = (comm.rank() + 1) % comm.size();
    let mut rtts: Vec<Duration> = comm.warmup(&[succ]).into_iter().filter_map(|(_, r)| r).collect();
    rtts.extend(monitor.rtt_samples());
    let seg = partition_segments(cfg.size, comm.size())?.seg_len(0);
    let local = calibrate_tau::<f32>(&rtts, seg, cfg.op);
    let all = comm.allgather((local.as_nanos() as u64).to_le_bytes().to_vec())?;
    let max_ns = all.iter().map(|b| u64::from_le_bytes(b[..8].try_into().unwrap_or([0; 8]))).max().unwrap_or(0);
    Ok(Duration::from_nanos(max_ns.max(1)))
}

/// Run the benchmark on one rank. Rank 0 returns the rows of every rank;
/// the others return an empty vector.
pub fn run_rank(comm: Arc<Communicator>, cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    if comm.size() != cfg.ranks {
        return Err(BenchError::Config(format!("communicator has {} ranks, config says {}", comm.size(), cfg.ranks)));
    }
    let rank = comm.rank();
    let monitor = Arc::new(Monitor::spawn(comm.transport().clone(), MonitorConfig::default())?);
    let tau = agree_on_tau(&comm, cfg, &monitor)?;
    log::info!("rank {rank}: tau = {tau:?}");
    let mut ctx = AllreduceContext::new(comm.clone(), cfg.algorithm)?.with_monitor(monitor.clone()).with_tau(tau);
    let mut delay_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(rank as u64));
    let mut rows = Vec::new();

    for it in 0..cfg.iters {
        let mut data = iteration_data(cfg.seed, rank, it, cfg.size);
        let half = Duration::from_secs_f64(cfg.half_time_ms(rank, &mut delay_rng) / 1e3);
        comm.barrier()?;
        comm.barrier()?;
        let epoch = Instant::now();
        monitor.phase_start()?;
        // edge(f) after f of the compute, the rest afterwards
        let total = half * 2;
        let before = total.mul_f64(cfg.edge_fraction);
        thread::sleep(before);
        monitor.edge(cfg.edge_fraction)?;
        thread::sleep(total.saturating_sub(before));
        monitor.phase_end()?;

        let original = data.clone();
        let outcome = ctx.allreduce(&mut data, cfg.op)?;

        let verdict = check_against_root(&comm, &original, &data, cfg.op)?;
        let mut mine = Vec::with_capacity(25);
        for v in [ms(outcome.arrival - epoch), ms(outcome.finish - epoch), ms(outcome.elapsed())] {
            mine.extend_from_slice(&v.to_le_bytes());
        }
        mine.push(u8::from(verdict.is_none()));
        let all = comm.allgather(mine)?;
        let parsed: Vec<([f64; 3], bool)> = all
            .iter()
            .map(|b| {
                let f = |i: usize| f64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().unwrap());
                ([f(0), f(1), f(2)], b[24] == 1)
            })
            .collect();
        if let Some(bad) = parsed.iter().position(|(_, ok)| !ok) {
            let detail = if bad == rank { verdict.unwrap_or_default() } else { "see that rank's log".into() };
            return Err(BenchError::Correctness { iteration: it, rank: bad, detail });
        }
        let mean = parsed.iter().map(|(v, _)| v[2]).sum::<f64>() / parsed.len() as f64;
        if rank == 0 {
            rows.extend(parsed.iter().enumerate().map(|(r, (v, _))| BenchRow {
                iteration: it,
                rank: r,
                arrival_ms: v[0],
                finish_ms: v[1],
                elapsed_ms: v[2],
                mean_elapsed_ms: mean,
            }));
        }
    }
    comm.barrier()?;
    Ok(rows)
}

/// Gather the inputs at rank 0, fold them serially, and let every rank
/// compare its own output. Returns a diagnostic on mismatch.
fn check_against_root(comm: &Communicator, original: &[f32], result: &[f32], op: ReduceOp) -> Result<Option<String>> {
    let gathered = comm.gather(0, encode_elements(original))?;
    let expected_bytes = match gathered {
        Some(parts) => {
            let inputs: Vec<Vec<f32>> = parts
                .iter()
                .map(|b| {
                    let mut v = vec![0f32; original.len()];
                    decode_elements(b, &mut v).then_some(v).ok_or_else(|| {
                        BenchError::Config("ranks disagree on the vector size".into())
                    })
                })
                .collect::<Result<_>>()?;
            Some(encode_elements(&serial_fold(&inputs, op)?))
        }
        None => None,
    };
    let bytes = comm.broadcast(0, expected_bytes)?;
    let mut expected = vec![0f32; result.len()];
    if !decode_elements(&bytes, &mut expected) {
        return Ok(Some("reference has the wrong length".into()));
    }
    let rep = compare(result, &expected, op);
    Ok((!rep.pass).then(|| format!("worst relative error {:.3e} at element {:?}", rep.worst_error, rep.worst_index)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_time_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = BenchConfig { max_delay_ms: 50.0, ..Default::default() };
        assert_eq!(cfg.half_time_ms(0, &mut rng), 75.0);
        assert_eq!(cfg.half_time_ms(1, &mut rng), 125.0);
        let cfg = BenchConfig { max_delay_ms: 0.0, ..Default::default() };
        assert_eq!(cfg.half_time_ms(1, &mut rng), 50.0);
        let cfg = BenchConfig { mode: DelayMode::RandLate, max_delay_ms: 40.0, ..Default::default() };
        for r in 0..50 {
            let h = cfg.half_time_ms(r, &mut rng);
            assert!((70.0..=90.0).contains(&h), "{h}");
        }
    }

    #[test]
    fn config_checks() {
        assert!(BenchConfig::default().validate().is_ok());
        assert!(BenchConfig { ranks: 6, algorithm: Algorithm::Rabenseifner, ..Default::default() }.validate().is_err());
        assert!(BenchConfig { size: 3, ..Default::default() }.validate().is_err());
        assert!(BenchConfig { edge_fraction: 0.0, ..Default::default() }.validate().is_err());
        assert!(BenchConfig { iters: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn data_is_seeded() {
        assert_eq!(iteration_data(3, 1, 2, 10), iteration_data(3, 1, 2, 10));
        assert_ne!(iteration_data(3, 1, 2, 10), iteration_data(3, 2, 2, 10));
        assert!(iteration_data(3, 1, 2, 100).iter().all(|&x| (0.0..1.0).contains(&x)));
    }
}
