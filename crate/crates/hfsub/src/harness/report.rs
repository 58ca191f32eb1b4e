//! Long-format CSV and JSON summaries of experiment results.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{
    summarize, EstimatorChoice, ExperimentResult, Record, Summary, SCHEMA_VERSION,
};
use super::kde::{kde, linspace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Row {
    schema_version: u32,
    cell: usize,
    model: String,
    noise: String,
    n: usize,
    theta: f64,
    subsamples: usize,
    block: usize,
    rep: usize,
    estimator: String,
    estimates: String,
    targets: String,
    tstats: String,
    min_eigenvalue: f64,
    condition_number: f64,
    psd: bool,
    positive_definite: bool,
    ill_conditioned: bool,
    jump_var: Option<f64>,
    jump_z: Option<f64>,
    error: String,
}

fn join(v: impl Iterator<Item = String>) -> String {
    v.collect::<Vec<_>>().join(";")
}

fn split_f64(s: &str, line: usize) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|x| {
            x.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad number '{x}'"),
            })
        })
        .collect()
}

fn estimator_from(s: &str, line: usize) -> Result<EstimatorChoice> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| Error::Parse {
        line,
        msg: format!("unknown estimator '{s}'"),
    })
}

fn tag<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

/// Writes `replications.csv` and `summary.json` into `dir`.
pub fn write_outputs(result: &ExperimentResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("replications.csv"))?;
    for c in &result.cells {
        for r in &c.records {
            w.serialize(Row {
                schema_version: SCHEMA_VERSION,
                cell: c.cell.id,
                model: tag(&c.cell.model),
                noise: tag(&c.cell.noise),
                n: c.cell.n,
                theta: c.cell.theta,
                subsamples: c.cell.subsamples,
                block: c.cell.block,
                rep: r.rep,
                estimator: r.estimator.as_str().to_string(),
                estimates: join(r.estimates.iter().map(|v| v.to_string())),
                targets: join(r.targets.iter().map(|v| v.to_string())),
                tstats: join(
                    r.tstats
                        .iter()
                        .map(|v| v.map_or(String::new(), |x| x.to_string())),
                ),
                min_eigenvalue: r.min_eigenvalue,
                condition_number: r.condition_number,
                psd: r.psd,
                positive_definite: r.positive_definite,
                ill_conditioned: r.ill_conditioned,
                jump_var: r.jump_var,
                jump_z: r.jump_z,
                error: r.error.clone().unwrap_or_default(),
            })?;
        }
    }
    w.flush()?;
    let cells: Vec<serde_json::Value> = result
        .cells
        .iter()
        .map(|c| serde_json::json!({ "cell": c.cell, "error": c.error }))
        .collect();
    let summary = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "seed": result.seed,
        "n_sim": result.n_sim,
        "cells": cells,
        "summaries": result.summary(),
    });
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

/// Reads records back from a `replications.csv`.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i + 2;
        let row = row?;
        if row.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse {
                line,
                msg: format!("schema version {}", row.schema_version),
            });
        }
        let tstats = if row.tstats.is_empty() {
            Vec::new()
        } else {
            row.tstats
                .split(';')
                .map(|x| {
                    if x.is_empty() {
                        Ok(None)
                    } else {
                        x.parse().map(Some).map_err(|_| Error::Parse {
                            line,
                            msg: format!("bad number '{x}'"),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?
        };
        out.push(Record {
            cell: row.cell,
            rep: row.rep,
            estimator: estimator_from(&row.estimator, line)?,
            estimates: split_f64(&row.estimates, line)?,
            targets: split_f64(&row.targets, line)?,
            tstats,
            min_eigenvalue: row.min_eigenvalue,
            condition_number: row.condition_number,
            psd: row.psd,
            positive_definite: row.positive_definite,
            ill_conditioned: row.ill_conditioned,
            jump_var: row.jump_var,
            jump_z: row.jump_z,
            error: (!row.error.is_empty()).then_some(row.error),
        });
    }
    Ok(out)
}

/// Aggregates a replications file into `table.csv` and `kde.csv` in `dir`.
pub fn report(replications: impl AsRef<Path>, dir: impl AsRef<Path>) -> Result<Vec<Summary>> {
    let records = read_records(replications)?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let summaries = summarize(&records);
    let mut w = csv::Writer::from_path(dir.join("table.csv"))?;
    w.write_record([
        "cell",
        "estimator",
        "replications",
        "failures",
        "frac_not_pd",
        "frac_jump_var_nonpositive",
        "frac_ill_conditioned",
        "tstat_std",
        "jump_coverage",
    ])?;
    for s in &summaries {
        w.write_record([
            s.cell.to_string(),
            s.estimator.as_str().to_string(),
            s.replications.to_string(),
            s.failures.to_string(),
            s.frac_not_pd.to_string(),
            s.frac_jump_var_nonpositive
                .map_or(String::new(), |v| v.to_string()),
            s.frac_ill_conditioned.to_string(),
            join(s.tstat_std.iter().map(|v| v.to_string())),
            s.jump_coverage.map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush()?;
    let grid = linspace(-5.0, 5.0, 201);
    let mut k = csv::Writer::from_path(dir.join("kde.csv"))?;
    k.write_record(["cell", "estimator", "component", "x", "density"])?;
    for s in &summaries {
        let dim = s.tstat_std.len();
        for c in 0..dim {
            let xs: Vec<f64> = records
                .iter()
                .filter(|r| r.cell == s.cell && r.estimator == s.estimator && r.error.is_none())
                .filter_map(|r| r.tstats.get(c).copied().flatten())
                .collect();
            let Ok(dens) = kde(&xs, &grid) else { continue };
            for (x, d) in grid.iter().zip(dens) {
                k.write_record([
                    s.cell.to_string(),
                    s.estimator.as_str().to_string(),
                    c.to_string(),
                    x.to_string(),
                    d.to_string(),
                ])?;
            }
        }
    }
    k.flush()?;
    Ok(summaries)
}
