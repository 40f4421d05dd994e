//! Demand-trace text format: one demand vector per line, values separated by
//! commas and/or whitespace. Blank lines and lines starting with `#` are
//! skipped. Every vector must have the same length and hold finite,
//! nonnegative values.

use crate::error::{Error, Result};

pub fn parse_demand_trace(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for tok in line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
        {
            let v: f64 = tok.parse().map_err(|_| Error::Trace {
                line: line_no,
                msg: format!("not a number: {tok:?}"),
            })?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Trace {
                    line: line_no,
                    msg: format!("demand must be finite and nonnegative, got {v}"),
                });
            }
            row.push(v);
        }
        if let Some(first) = out.first() {
            if first.len() != row.len() {
                return Err(Error::Trace {
                    line: line_no,
                    msg: format!("expected {} values, found {}", first.len(), row.len()),
                });
            }
        }
        out.push(row);
    }
    Ok(out)
}
