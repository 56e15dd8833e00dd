//! CSV output for bound sweeps and estimator summaries.
//!
//! Each file starts with one comment line carrying the config hash and master
//! seed, followed by a header row and the data rows. Floats are written in
//! Rust's shortest round-trip form, so identical results give identical bytes.

use std::io::{self, Write};

use crate::bounds::BoundReport;
use crate::runner::EstimatorSummary;

/// Provenance written as the first line of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputHeader {
    pub config_hash: String,
    pub master_seed: u64,
}

impl OutputHeader {
    fn write<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(
            out,
            "# config_hash={} master_seed={}",
            self.config_hash, self.master_seed
        )
    }
}

pub const BOUND_COLUMNS: [&str; 9] = [
    "k",
    "L",
    "old_bound",
    "new_bound",
    "replicate_sd_old",
    "replicate_sd_new",
    "Q",
    "replicates",
    "vacuous_flag",
];

pub fn write_bound_csv<W: Write>(report: &BoundReport, header: &OutputHeader, mut out: W) -> io::Result<()> {
    header.write(&mut out)?;
    let with_tv = report.has_tv_exact();
    let mut w = csv::Writer::from_writer(out);
    let mut columns: Vec<&str> = BOUND_COLUMNS.to_vec();
    if with_tv {
        columns.push("tv_exact");
    }
    w.write_record(&columns)?;
    for row in &report.rows {
        let mut record = vec![
            row.k.to_string(),
            row.lag.to_string(),
            row.old_bound.to_string(),
            row.new_bound.to_string(),
            row.replicate_sd_old.to_string(),
            row.replicate_sd_new.to_string(),
            row.processes.to_string(),
            row.replicates.to_string(),
            row.vacuous_flag().to_string(),
        ];
        if with_tv {
            record.push(row.tv_exact.map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&record)?;
    }
    w.flush()
}

pub const ESTIMATOR_COLUMNS: [&str; 10] = [
    "estimator",
    "k",
    "r",
    "L",
    "coordinate",
    "mean",
    "se",
    "variance",
    "traces",
    "rrv",
];

/// One row per estimator and coordinate. `rrv` is empty for plain
/// estimators and where the plain variance is zero.
pub fn write_estimator_csv<W: Write>(
    summaries: &[EstimatorSummary],
    header: &OutputHeader,
    mut out: W,
) -> io::Result<()> {
    header.write(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATOR_COLUMNS)?;
    for s in summaries {
        for (i, name) in s.coordinates.iter().enumerate() {
            let rrv = s
                .rrv
                .as_ref()
                .and_then(|v| v[i])
                .map(|v| v.to_string())
                .unwrap_or_default();
            w.write_record([
                s.kind.name().to_string(),
                s.k.to_string(),
                s.r.to_string(),
                s.lag.to_string(),
                name.clone(),
                s.mean[i].to_string(),
                s.se[i].to_string(),
                s.variance[i].to_string(),
                s.traces.to_string(),
                rrv,
            ])?;
        }
    }
    w.flush()
}

/// The file contents without `#` comment lines.
pub fn data_section(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}
