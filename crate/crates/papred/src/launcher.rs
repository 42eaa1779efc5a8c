//! Starting a group of ranks: threads over the in-process transport, or
//! child processes over TCP loopback.

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};
use std::sync::Arc;
use std::thread;

use papred_comm::{inproc_group, CommConfig, Communicator, InProcConfig, Roster, TcpConfig, TcpTransport, Transport};

use crate::error::{BenchError, Result};

/// Run `f` on `p` threads, one per rank, joined through the in-process
/// transport. Results come back in rank order; the first error wins.
pub fn run_inproc<T, F>(p: usize, transport: &InProcConfig, f: F) -> Result<Vec<T>>
where
    T: Send + 'static,
    F: Fn(Arc<Communicator>) -> Result<T> + Send + Sync + 'static,
{
    let f = Arc::new(f);
    let handles: Vec<_> = inproc_group(p, transport)
        .into_iter()
        .map(|t| {
            let f = f.clone();
            let comm = Arc::new(Communicator::new(t as Arc<dyn Transport>, CommConfig::default()));
            thread::spawn(move || f(comm))
        })
        .collect();
    let mut out = Vec::with_capacity(p);
    let mut first_err = None;
    for h in handles {
        match h.join() {
            Ok(Ok(v)) => out.push(v),
            Ok(Err(e)) => {
                first_err.get_or_insert(e);
            }
            Err(_) => {
                first_err.get_or_insert(BenchError::Config("rank thread panicked".into()));
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Join the TCP mesh described by `roster` as `rank`.
pub fn join_tcp(rank: usize, roster: &Roster) -> Result<Arc<Communicator>> {
    let t = TcpTransport::establish(rank, roster, &TcpConfig::default())?;
    Ok(Arc::new(Communicator::new(Arc::new(t), CommConfig::default())))
}

/// Reserve `p` free loopback ports. The listeners are released before the
/// children bind them, so a port can in principle be stolen in between.
pub fn free_loopback_roster(p: usize) -> Result<Roster> {
    let listeners: Vec<TcpListener> = (0..p).map(|_| TcpListener::bind("127.0.0.1:0")).collect::<std::io::Result<_>>()?;
    let ports: Vec<u16> = listeners.iter().map(|l| l.local_addr().map(|a| a.port())).collect::<std::io::Result<_>>()?;
    Ok(Roster::loopback(&ports))
}

/// Resolve the roster for a local launch: an existing file is used as is,
/// otherwise fresh loopback ports are written to `path` (or a temp file).
pub fn prepare_roster(p: usize, path: Option<&Path>) -> Result<PathBuf> {
    if let Some(path) = path {
        if path.exists() {
            let roster = Roster::load(path)?;
            if roster.len() != p {
                return Err(BenchError::Config(format!("{} lists {} ranks, expected {p}", path.display(), roster.len())));
            }
            return Ok(path.to_path_buf());
        }
    }
    let roster = free_loopback_roster(p)?;
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => std::env::temp_dir().join(format!("papred-roster-{}.txt", std::process::id())),
    };
    std::fs::write(&path, roster.to_text())?;
    Ok(path)
}

/// Spawn `p` copies of `exe`, each with `args` plus `--rank i --roster path`,
/// and wait for all of them.
pub fn spawn_ranks(exe: &Path, args: &[String], p: usize, roster: &Path) -> Result<()> {
    let mut children: Vec<(usize, Child)> = Vec::with_capacity(p);
    for rank in 0..p {
        let child = Command::new(exe)
            .args(args)
            .arg("--rank")
            .arg(rank.to_string())
            .arg("--roster")
            .arg(roster)
            .spawn()?;
        children.push((rank, child));
    }
    let mut failed = Vec::new();
    for (rank, mut c) in children {
        let status = c.wait()?;
        if !status.success() {
            failed.push(format!("rank {rank}: {status}"));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(BenchError::Config(format!("child processes failed: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inproc_results_in_rank_order() {
        let v = run_inproc(4, &InProcConfig::default(), |c| Ok(c.rank() * 10)).unwrap();
        assert_eq!(v, vec![0, 10, 20, 30]);
    }

    #[test]
    fn inproc_reports_errors() {
        let r = run_inproc(3, &InProcConfig::default(), |c| {
            if c.rank() == 2 {
                Err(BenchError::Config("boom".into()))
            } else {
                Ok(())
            }
        });
        assert!(r.is_err());
    }

    #[test]
    fn roster_file_is_created_then_reused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.txt");
        let p1 = prepare_roster(3, Some(&path)).unwrap();
        let first = std::fs::read_to_string(&p1).unwrap();
        assert_eq!(Roster::parse(&first).unwrap().len(), 3);
        prepare_roster(3, Some(&path)).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), first);
        assert!(prepare_roster(4, Some(&path)).is_err());
    }
}
