//! CSV reports. Every file starts with a `# manifest <hash>` comment line
//! followed by a header row; floats use shortest round-trip formatting.

use std::io::{Read, Write};

use anyhow::{anyhow, Context};
use safari_core::metrics::MetricResult;
use safari_core::RunTrace;

use crate::experiment::Summary;

pub const METRICS_COLUMNS: [&str; 3] = ["item", "psnr", "ssim"];
pub const SWEEP_COLUMNS: [&str; 7] = ["axis", "value", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "manifest"];

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r)
}

/// Extracts the hash from a leading `# manifest <hash>` line.
pub fn manifest_of(text: &str) -> Option<&str> {
    text.lines().next()?.strip_prefix("# manifest ")
}

pub fn write_trace_csv<W: Write>(mut w: W, hash: &str, trace: &RunTrace) -> anyhow::Result<()> {
    writeln!(w, "# manifest {hash}")?;
    trace.write_csv(w)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    /// Item index, or `mean` / `std` for the summary rows.
    pub label: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn from_summary(items: &[(usize, MetricResult)], summary: &Summary) -> Self {
        let mut rows: Vec<MetricRow> = items
            .iter()
            .map(|(i, m)| MetricRow {
                label: i.to_string(),
                psnr: m.psnr,
                ssim: m.ssim,
            })
            .collect();
        rows.push(MetricRow {
            label: "mean".into(),
            psnr: summary.psnr_mean,
            ssim: summary.ssim_mean,
        });
        rows.push(MetricRow {
            label: "std".into(),
            psnr: summary.psnr_std,
            ssim: summary.ssim_std,
        });
        Self { rows }
    }

    pub fn write<W: Write>(&self, mut w: W, hash: &str) -> anyhow::Result<()> {
        writeln!(w, "# manifest {hash}")?;
        let mut wtr = writer(w);
        wtr.write_record(METRICS_COLUMNS)?;
        for r in &self.rows {
            wtr.write_record([r.label.clone(), r.psnr.to_string(), r.ssim.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> anyhow::Result<Self> {
        let mut rdr = reader(r);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).ok_or_else(|| anyhow!("short metrics row"));
            rows.push(MetricRow {
                label: field(0)?.to_string(),
                psnr: field(1)?.parse().context("psnr")?,
                ssim: field(2)?.parse().context("ssim")?,
            });
        }
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    /// Manifest hash of the configuration evaluated on this row.
    pub manifest: String,
}

pub fn write_sweep_csv<W: Write>(mut w: W, hash: &str, rows: &[SweepRow]) -> anyhow::Result<()> {
    writeln!(w, "# manifest {hash}")?;
    let mut wtr = writer(w);
    wtr.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        wtr.write_record([
            r.axis.clone(),
            r.value.to_string(),
            r.psnr_mean.to_string(),
            r.psnr_std.to_string(),
            r.ssim_mean.to_string(),
            r.ssim_std.to_string(),
            r.manifest.clone(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(r: R) -> anyhow::Result<Vec<SweepRow>> {
    let mut rdr = reader(r);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| anyhow!("short sweep row"));
        let num = |i: usize| -> anyhow::Result<f64> { Ok(field(i)?.parse()?) };
        rows.push(SweepRow {
            axis: field(0)?.to_string(),
            value: num(1)?,
            psnr_mean: num(2)?,
            psnr_std: num(3)?,
            ssim_mean: num(4)?,
            ssim_std: num(5)?,
            manifest: field(6)?.to_string(),
        });
    }
    Ok(rows)
}
