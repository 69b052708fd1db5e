//! File renderings of evaluation results. Column orders are fixed:
//!
//! - summary CSV: [`SUMMARY_COLUMNS`], macro averages
//! - per-dataset CSV: [`PER_DATASET_COLUMNS`]
//! - sweep CSV: [`SWEEP_COLUMNS`]
//! - pool CSV: [`POOL_COLUMNS`], empty router cells when no router ran
//! - ablation CSV: [`ABLATION_COLUMNS`], `-` for untimed variants
//! - plot TSV: `series`, `x`, `y`

use std::io::Write;
use std::path::Path;

use super::{AblationRow, EvalReport, PoolRow, SweepRow};
use crate::error::Result;

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "router",
    "scenario",
    "alpha",
    "performance",
    "cost",
    "score",
    "queries",
    "catalog_hash",
];
pub const PER_DATASET_COLUMNS: [&str; 7] = ["router", "scenario", "alpha", "dataset", "performance", "cost", "score"];
pub const SWEEP_COLUMNS: [&str; 5] = ["alpha", "router", "performance", "cost", "score"];
pub const POOL_COLUMNS: [&str; 9] = [
    "size",
    "added",
    "oracle_performance",
    "oracle_cost",
    "oracle_score",
    "best_candidate_score",
    "router_performance",
    "router_cost",
    "router_score",
];
pub const ABLATION_COLUMNS: [&str; 7] = ["variant", "seed", "scenario", "performance", "cost", "score", "time_ms"];

fn f(v: f64) -> String {
    v.to_string()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

pub fn write_summary_csv(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in reports {
        let m = r.macro_avg;
        w.write_record([
            r.router.clone(),
            r.scenario.label(),
            f(r.scenario.alpha),
            f(m.performance),
            f(m.cost),
            f(m.score),
            r.queries.to_string(),
            r.metadata.catalog_hash.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_per_dataset_csv(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(PER_DATASET_COLUMNS)?;
    for r in reports {
        for (tag, m) in &r.per_dataset {
            w.write_record([
                r.router.clone(),
                r.scenario.label(),
                f(r.scenario.alpha),
                tag.clone(),
                f(m.performance),
                f(m.cost),
                f(m.score),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        w.write_record([f(r.alpha), r.router.clone(), f(r.performance), f(r.cost), f(r.score)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pool_csv(path: impl AsRef<Path>, rows: &[PoolRow]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(POOL_COLUMNS)?;
    for r in rows {
        let (rp, rc, rs) = match r.router {
            Some(m) => (f(m.performance), f(m.cost), f(m.score)),
            None => Default::default(),
        };
        w.write_record([
            r.size.to_string(),
            r.added.clone(),
            f(r.oracle.performance),
            f(r.oracle.cost),
            f(r.oracle.score),
            f(r.best_candidate.score),
            rp,
            rc,
            rs,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ablation_csv(path: impl AsRef<Path>, rows: &[AblationRow]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(ABLATION_COLUMNS)?;
    for r in rows {
        let m = r.report.macro_avg;
        w.write_record([
            r.variant.clone(),
            r.seed.to_string(),
            r.report.scenario.label(),
            f(m.performance),
            f(m.cost),
            f(m.score),
            r.time_ms.map_or_else(|| "-".to_string(), |t| format!("{t:.3}")),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let mut s = serde_json::to_string_pretty(reports)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<Vec<EvalReport>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Plot source: one `(series, x, y)` line per point.
pub fn write_plot_tsv(path: impl AsRef<Path>, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "series\tx\ty")?;
    for (name, points) in series {
        for (x, y) in points {
            writeln!(out, "{name}\t{x}\t{y}")?;
        }
    }
    out.flush()?;
    Ok(())
}
