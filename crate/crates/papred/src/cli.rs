use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use papred_comm::{InProcConfig, Roster};
use papred_core::{run_sweep, write_sweep_csv, Algorithm, DelayMode, ReduceOp, SweepConfig};

use crate::bench::{append_csv, run_rank, BenchConfig};
use crate::demo::{run_demo, DemoConfig, DEMO_PARAMS};
use crate::error::{BenchError, Result};
use crate::launcher::{join_tcp, prepare_roster, run_inproc, spawn_ranks};
use crate::report::{load_inputs, summarize, write_summary};

#[derive(Debug, Parser)]
#[command(name = "papred", version, about = "Arrival-pattern aware all-reduce benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute/all-reduce benchmark on real transports.
    Bench(BenchArgs),
    /// Tau-model simulator sweep, written as CSV.
    SimSweep(SweepArgs),
    /// Iterative workload comparing algorithms in one process.
    Demo(DemoArgs),
    /// Summarise bench CSVs given as label=path.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportKind {
    Tcp,
    Inproc,
}

fn parse_alg(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: papred_core::CoreError| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<DelayMode, String> {
    s.parse().map_err(|e: papred_core::CoreError| e.to_string())
}

fn parse_op(s: &str) -> std::result::Result<ReduceOp, String> {
    s.parse().map_err(|e: papred_core::CoreError| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_parser = parse_alg, default_value = "ring")]
    pub algorithm: Algorithm,
    #[arg(long, default_value_t = 128 * 1024)]
    pub size: usize,
    #[arg(long, default_value_t = 64)]
    pub iters: usize,
    #[arg(long, value_parser = parse_mode, default_value = "one-late")]
    pub mode: DelayMode,
    /// Milliseconds. In one-late mode rank 1 adds this to both halves of
    /// its compute, so it enters about twice this late.
    #[arg(long, default_value_t = 0.0)]
    pub max_delay: f64,
    #[arg(long, default_value_t = 4)]
    pub ranks: usize,
    /// `rank:host:port` per line. Without `--rank` a missing file is created
    /// with free loopback ports.
    #[arg(long)]
    pub roster: Option<PathBuf>,
    /// Join as this rank instead of launching all ranks locally.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long, value_enum, default_value = "tcp")]
    pub transport: TransportKind,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
    /// Balanced compute time per iteration, milliseconds.
    #[arg(long, default_value_t = 100.0)]
    pub base_ms: f64,
    /// Segment time used for pre-steps; measured when omitted.
    #[arg(long)]
    pub tau_ms: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub edge_fraction: f64,
    #[arg(long, value_parser = parse_op, default_value = "sum")]
    pub op: ReduceOp,
}

impl BenchArgs {
    pub fn config(&self) -> BenchConfig {
        BenchConfig {
            algorithm: self.algorithm,
            size: self.size,
            iters: self.iters,
            mode: self.mode,
            max_delay_ms: self.max_delay,
            ranks: self.ranks,
            seed: self.seed,
            base_ms: self.base_ms,
            edge_fraction: self.edge_fraction,
            tau_ms: self.tau_ms,
            op: self.op,
        }
    }

    /// Arguments for a child rank, minus `--rank` and `--roster`.
    pub fn child_args(&self) -> Vec<String> {
        let mut a = vec![
            "bench".to_string(),
            "--algorithm".into(),
            self.algorithm.name().into(),
            "--size".into(),
            self.size.to_string(),
            "--iters".into(),
            self.iters.to_string(),
            "--mode".into(),
            self.mode.name().into(),
            "--max-delay".into(),
            self.max_delay.to_string(),
            "--ranks".into(),
            self.ranks.to_string(),
            "--seed".into(),
            self.seed.to_string(),
            "--out".into(),
            self.out.display().to_string(),
            "--base-ms".into(),
            self.base_ms.to_string(),
            "--edge-fraction".into(),
            self.edge_fraction.to_string(),
            "--op".into(),
            self.op.to_string(),
        ];
        if let Some(t) = self.tau_ms {
            a.push("--tau-ms".into());
            a.push(t.to_string());
        }
        a
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_alg, default_value = "ring,linear,slt,prr")]
    pub algorithms: Vec<Algorithm>,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,48")]
    pub ranks: Vec<usize>,
    /// Delays in tau units; defaults to the standard grid.
    #[arg(long, value_delimiter = ',')]
    pub delays: Vec<f64>,
    #[arg(long, value_parser = parse_mode, default_value = "one-late")]
    pub mode: DelayMode,
    /// Number of random seeds per cell (rand-late only).
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_alg, default_value = "ring,prr")]
    pub algorithms: Vec<Algorithm>,
    #[arg(long, default_value_t = 4)]
    pub ranks: usize,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = DEMO_PARAMS)]
    pub size: usize,
    #[arg(long, default_value_t = 40.0)]
    pub compute_ms: f64,
    #[arg(long, default_value_t = 20.0)]
    pub skew_ms: f64,
    #[arg(long, default_value_t = 0.56)]
    pub edge_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    pub tau_ms: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// `label=path` or a bare path labelled by its file stem.
    #[arg(required = true)]
    pub inputs: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench(a) => bench(a),
        Command::SimSweep(a) => sweep(a),
        Command::Demo(a) => demo(a),
        Command::Report(a) => report(a),
    }
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = a.config();
    cfg.validate()?;
    match (a.transport, a.rank) {
        (TransportKind::Inproc, Some(_)) => Err(BenchError::Config("--rank needs the tcp transport".into())),
        (TransportKind::Inproc, None) => {
            let c = cfg.clone();
            let mut per_rank = run_inproc(cfg.ranks, &InProcConfig::default(), move |comm| run_rank(comm, &c))?;
            append_csv(&a.out, &per_rank.swap_remove(0))?;
            log::info!("wrote {}", a.out.display());
            Ok(())
        }
        (TransportKind::Tcp, Some(rank)) => {
            let path = a.roster.as_ref().ok_or_else(|| BenchError::Config("--rank needs --roster".into()))?;
            let roster = Roster::load(path)?;
            if roster.len() != cfg.ranks {
                return Err(BenchError::Config(format!("roster has {} ranks, --ranks is {}", roster.len(), cfg.ranks)));
            }
            let comm = join_tcp(rank, &roster)?;
            let rows = run_rank(comm, &cfg)?;
            if rank == 0 {
                append_csv(&a.out, &rows)?;
                log::info!("wrote {}", a.out.display());
            }
            Ok(())
        }
        (TransportKind::Tcp, None) => {
            let roster = prepare_roster(cfg.ranks, a.roster.as_deref())?;
            let exe = std::env::current_exe()?;
            let result = spawn_ranks(&exe, &a.child_args(), cfg.ranks, &roster);
            if a.roster.is_none() {
                let _ = std::fs::remove_file(&roster);
            }
            result
        }
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = SweepConfig {
        algorithms: a.algorithms,
        ranks: a.ranks,
        delays: if a.delays.is_empty() { SweepConfig::default_delays() } else { a.delays },
        mode: a.mode,
        seeds: (0..a.seeds.max(1)).collect(),
    };
    let rows = run_sweep(&cfg)?;
    match a.out {
        Some(p) => write_sweep_csv(&rows, std::fs::File::create(p)?)?,
        None => write_sweep_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn demo(a: DemoArgs) -> Result<()> {
    let cfg = DemoConfig {
        algorithms: a.algorithms,
        ranks: a.ranks,
        iters: a.iters,
        size: a.size,
        compute_ms: a.compute_ms,
        skew_ms: a.skew_ms,
        edge_fraction: a.edge_fraction,
        tau_ms: a.tau_ms,
        seed: a.seed,
    };
    let mut out = std::io::stdout().lock();
    writeln!(out, "algorithm,mean_elapsed_ms,total_ms")?;
    for r in run_demo(&cfg)? {
        writeln!(out, "{},{:.4},{:.4}", r.algorithm, r.mean_elapsed_ms, r.total_ms)?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let rows = summarize(&load_inputs(&a.inputs)?)?;
    match a.out {
        Some(p) => write_summary(std::fs::File::create(p)?, &rows),
        None => write_summary(std::io::stdout().lock(), &rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn child_args_round_trip() {
        let cli = Cli::try_parse_from([
            "papred", "bench", "--algorithm", "prr", "--size", "1000", "--mode", "rand-late", "--max-delay", "12.5",
            "--tau-ms", "0.25", "--op", "max",
        ])
        .unwrap();
        let Command::Bench(a) = cli.command else { panic!() };
        let mut args = vec!["papred".to_string()];
        args.extend(a.child_args());
        let Command::Bench(b) = Cli::try_parse_from(args).unwrap().command else { panic!() };
        assert_eq!(format!("{:?}", a.config()), format!("{:?}", b.config()));
    }

    #[test]
    fn bad_algorithm_is_rejected() {
        assert!(Cli::try_parse_from(["papred", "bench", "--algorithm", "tree"]).is_err());
    }
}
