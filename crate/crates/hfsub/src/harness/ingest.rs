//! CSV price ingestion and export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TickSeries;

/// Where the columns are and what the price column holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    /// Timestamp column; `None` for single-column files.
    pub time: Option<usize>,
    pub price: usize,
    /// The price column already holds log-prices.
    pub log_prices: bool,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            time: Some(0),
            price: 1,
            log_prices: false,
        }
    }
}

impl ColumnMap {
    pub fn single() -> Self {
        Self {
            time: None,
            price: 0,
            log_prices: false,
        }
    }
}

/// Reads prices from a comma-separated file.
///
/// A first line whose price field is not a number is treated as a header.
/// Repeated timestamps keep the last price; decreasing timestamps are rejected.
pub fn ingest_csv(path: impl AsRef<Path>, map: ColumnMap) -> Result<TickSeries> {
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<f64> = Vec::new();
    let mut last_time: Option<f64> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let field = |c: usize| {
            fields.get(c).copied().ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("missing column {c}"),
            })
        };
        let raw = field(map.price)?;
        let value: f64 = match raw.parse() {
            Ok(v) => v,
            Err(_) if idx == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("bad price '{raw}'"),
                })
            }
        };
        let logp = if map.log_prices {
            if !value.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "non-finite log-price".into(),
                });
            }
            value
        } else {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositivePrice(lineno));
            }
            value.ln()
        };
        if let Some(tc) = map.time {
            let t: f64 = field(tc)?.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad timestamp '{}'", fields[tc]),
            })?;
            match last_time {
                Some(prev) if t < prev => return Err(Error::NonMonotoneTime(lineno)),
                Some(prev) if t == prev => {
                    *out.last_mut().expect("previous tick exists") = logp;
                    continue;
                }
                _ => last_time = Some(t),
            }
        }
        out.push(logp);
    }
    TickSeries::from_log_prices(out)
}

/// Writes `index,log_price` rows that [`ingest_csv`] reads back exactly with
/// `log_prices = true`.
pub fn export_csv(path: impl AsRef<Path>, prices: &TickSeries) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "index,log_price")?;
    for (i, p) in prices.log_prices().iter().enumerate() {
        writeln!(w, "{i},{p}")?;
    }
    w.flush()?;
    Ok(())
}
