//! Comparison tables and plot-data files from metric summaries.

use std::fmt::Write as _;

use vmbeam_core::metrics::{ConfigSummary, Interval};

use crate::error::{CliError, Result};

/// Metric columns in table order; PESQ is reserved but not computed.
pub const METRICS: [&str; 3] = ["si_sdr_db", "snr_db", "stoi"];
pub const UNAVAILABLE: &str = "n/a";

pub fn metric(s: &ConfigSummary, name: &str) -> Interval {
    match name {
        "si_sdr_db" => s.si_sdr_db,
        "snr_db" => s.snr_db,
        "stoi" => s.stoi,
        other => unreachable!("unknown metric {other}"),
    }
}

fn cell(i: Interval, name: &str) -> String {
    if name == "stoi" {
        format!("{:.3} [{:.3}, {:.3}]", i.mean, i.lo, i.hi)
    } else {
        format!("{:.2} [{:.2}, {:.2}]", i.mean, i.lo, i.hi)
    }
}

/// Mean differences `config - baseline` per metric.
pub fn deltas(summaries: &[ConfigSummary], baseline: &str) -> Result<Vec<[f64; 3]>> {
    let base = summaries
        .iter()
        .find(|s| s.config == baseline)
        .ok_or_else(|| CliError::Config(format!("baseline config '{baseline}' is not in the input")))?;
    Ok(summaries
        .iter()
        .map(|s| METRICS.map(|m| metric(s, m).mean - metric(base, m).mean))
        .collect())
}

/// Aligned text table: one row per config, `mean [lo, hi]` cells, a PESQ
/// column marked unavailable and optional delta columns.
pub fn table(summaries: &[ConfigSummary], baseline: Option<&str>) -> Result<String> {
    let mut header = vec!["config".to_string(), "n".to_string()];
    header.extend(["si_sdr_db", "snr_db", "pesq", "stoi"].map(String::from));
    let delta = match baseline {
        Some(b) => {
            header.extend(METRICS.map(|m| format!("d_{m} vs {b}")));
            Some(deltas(summaries, b)?)
        }
        None => None,
    };
    let mut rows = vec![header];
    for (k, s) in summaries.iter().enumerate() {
        let mut row = vec![s.config.clone(), s.count.to_string()];
        row.push(cell(s.si_sdr_db, "si_sdr_db"));
        row.push(cell(s.snr_db, "snr_db"));
        row.push(UNAVAILABLE.to_string());
        row.push(cell(s.stoi, "stoi"));
        if let Some(d) = &delta {
            row.extend(d[k].iter().zip(METRICS).map(|(v, m)| {
                if m == "stoi" {
                    format!("{v:+.3}")
                } else {
                    format!("{v:+.2}")
                }
            }));
        }
        rows.push(row);
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
        }
    }
    Ok(out)
}

/// `config,mean,lo,hi` rows for one metric.
pub fn plot_data(summaries: &[ConfigSummary], name: &str) -> String {
    let mut out = String::from("config,mean,lo,hi\n");
    for s in summaries {
        let i = metric(s, name);
        let _ = writeln!(out, "{},{},{},{}", s.config, i.mean, i.lo, i.hi);
    }
    out
}
