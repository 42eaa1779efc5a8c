//! Summaries over one or more benchmark CSV files.

use std::io::Write;
use std::path::Path;

use papred_core::mean_std;

use crate::bench::{read_csv, BenchRow};
use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub iterations: usize,
    pub mean_elapsed_ms: f64,
    /// `None` with a single iteration.
    pub std_ms: Option<f64>,
    pub speedup_vs_ring: Option<f64>,
}

impl SummaryRow {
    pub fn band(&self) -> Option<(f64, f64)> {
        self.std_ms.map(|s| (self.mean_elapsed_ms - 2.0 * s, self.mean_elapsed_ms + 2.0 * s))
    }
}

pub const SUMMARY_HEADER: [&str; 7] =
    ["label", "iterations", "mean_elapsed_ms", "std_ms", "speedup_vs_ring", "minus_2sigma_ms", "plus_2sigma_ms"];

/// One value per iteration: the rank-averaged elapsed time.
pub fn per_iteration_means(rows: &[BenchRow]) -> Vec<f64> {
    let mut by_iter: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for r in rows {
        by_iter.insert(r.iteration, r.mean_elapsed_ms);
    }
    by_iter.into_values().collect()
}

/// Summarise labelled row sets. The label `ring` (case-insensitive) is the
/// speedup reference when present.
pub fn summarize(cells: &[(String, Vec<BenchRow>)]) -> Result<Vec<SummaryRow>> {
    let mut out = Vec::with_capacity(cells.len());
    for (label, rows) in cells {
        let means = per_iteration_means(rows);
        let (mean, std) =
            mean_std(&means).ok_or_else(|| BenchError::Config(format!("{label}: no completed iterations")))?;
        out.push(SummaryRow { label: label.clone(), iterations: means.len(), mean_elapsed_ms: mean, std_ms: std, speedup_vs_ring: None });
    }
    if let Some(ring) = out.iter().find(|r| r.label.eq_ignore_ascii_case("ring")).map(|r| r.mean_elapsed_ms) {
        for r in &mut out {
            if r.mean_elapsed_ms > 0.0 {
                r.speedup_vs_ring = Some(ring / r.mean_elapsed_ms);
            }
        }
    }
    Ok(out)
}

/// Parse `label=path` (or a bare path, labelled by its file stem).
pub fn parse_input(arg: &str) -> (String, &Path) {
    match arg.split_once('=') {
        Some((l, p)) if !l.is_empty() => (l.to_string(), Path::new(p)),
        _ => {
            let p = Path::new(arg);
            (p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| arg.to_string()), p)
        }
    }
}

pub fn load_inputs(specs: &[String]) -> Result<Vec<(String, Vec<BenchRow>)>> {
    specs
        .iter()
        .map(|s| {
            let (label, path) = parse_input(s);
            Ok((label, read_csv(path)?))
        })
        .collect()
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(SUMMARY_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for r in rows {
        let band = r.band();
        w.write_record([
            r.label.clone(),
            r.iterations.to_string(),
            format!("{:.4}", r.mean_elapsed_ms),
            opt(r.std_ms),
            opt(r.speedup_vs_ring),
            opt(band.map(|b| b.0)),
            opt(band.map(|b| b.1)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(means: &[f64]) -> Vec<BenchRow> {
        means
            .iter()
            .enumerate()
            .flat_map(|(i, &m)| {
                (0..2).map(move |rank| BenchRow {
                    iteration: i,
                    rank,
                    arrival_ms: 0.0,
                    finish_ms: m,
                    elapsed_ms: m,
                    mean_elapsed_ms: m,
                })
            })
            .collect()
    }

    #[test]
    fn single_iteration_has_no_sigma() {
        let s = summarize(&[("x".into(), rows(&[3.0]))]).unwrap();
        assert_eq!(s[0].iterations, 1);
        assert_eq!(s[0].std_ms, None);
        let mut buf = Vec::new();
        write_summary(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "x,1,3.0000,,,,");
    }

    #[test]
    fn identical_results_have_zero_sigma() {
        let s = summarize(&[("x".into(), rows(&[2.0, 2.0, 2.0]))]).unwrap();
        assert_eq!(s[0].std_ms, Some(0.0));
        assert_eq!(s[0].band(), Some((2.0, 2.0)));
    }

    #[test]
    fn speedup_against_ring() {
        let s = summarize(&[("ring".into(), rows(&[10.0])), ("prr".into(), rows(&[5.0]))]).unwrap();
        assert_eq!(s[0].speedup_vs_ring, Some(1.0));
        assert_eq!(s[1].speedup_vs_ring, Some(2.0));
        let s = summarize(&[("prr".into(), rows(&[5.0]))]).unwrap();
        assert_eq!(s[0].speedup_vs_ring, None);
    }

    #[test]
    fn input_labels() {
        assert_eq!(parse_input("a=b/c.csv"), ("a".to_string(), Path::new("b/c.csv")));
        assert_eq!(parse_input("dir/prr.csv"), ("prr".to_string(), Path::new("dir/prr.csv")));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(summarize(&[("x".into(), vec![])]).is_err());
    }
}
