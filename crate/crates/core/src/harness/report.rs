//! Report emission: canonical JSON (sorted keys, floats at 6 significant
//! digits) and aligned plain-text tables with percentages at 2 decimals.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;

use super::metrics::MetricsReport;

pub const SIGNIFICANT_DIGITS: usize = 6;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v)
        .parse()
        .unwrap_or(v)
}

fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let f = round_sig(n.as_f64().unwrap());
            serde_json::Number::from_f64(f).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        Value::Object(m) => {
            Value::Object(m.into_iter().map(|(k, v)| (k, canonicalize(v))).collect())
        }
        other => other,
    }
}

/// Pretty JSON with sorted keys and rounded floats; byte-stable for equal input.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = canonicalize(serde_json::to_value(value)?);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Per-object and overall accuracy table for one report.
pub fn metrics_table(report: &MetricsReport) -> String {
    let mut rows: Vec<(String, String)> = report
        .acc_o
        .iter()
        .map(|(o, acc)| (o.clone(), format!("{acc:.2}")))
        .collect();
    rows.push(("Acc_i".into(), format!("{:.2}", report.acc_i)));
    let width = rows
        .iter()
        .map(|(k, _)| k.len())
        .max()
        .unwrap_or(0)
        .max("object".len());
    let mut out = String::new();
    let c = &report.config;
    let _ = write!(
        out,
        "mode={} R={} head={}",
        c.reduction.mode,
        c.reduction.effective_order(),
        c.head.head
    );
    if let Some(p) = c.protocol {
        let _ = write!(out, " protocol={p}");
    }
    if let Some(s) = c.split {
        let _ = write!(out, " split={s}");
    }
    if let Some(s) = c.seed {
        let _ = write!(out, " seed={s}");
    }
    out.push('\n');
    let _ = writeln!(out, "{:<width$}  {:>6}", "object", "Acc_o");
    for (i, (k, v)) in rows.iter().enumerate() {
        if i + 1 == rows.len() {
            let _ = writeln!(out, "{}", "-".repeat(width + 8));
        }
        let _ = writeln!(out, "{k:<width$}  {v:>6}");
    }
    out
}

/// Generic aligned table; the first column is left-aligned, the rest right.
pub fn aligned_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, cell) in cells.iter().enumerate().take(cols) {
            if i == 0 {
                let _ = write!(s, "{cell:<w$}", w = widths[0]);
            } else {
                let _ = write!(s, "  {cell:>w$}", w = widths[i]);
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(header);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_to_six_digits() {
        assert_eq!(round_sig(77.083333333), 77.0833);
        assert_eq!(round_sig(0.000123456789), 0.000123457);
        assert_eq!(round_sig(100.0), 100.0);
        assert_eq!(round_sig(0.0), 0.0);
    }

    #[test]
    fn canonical_json_sorts_and_rounds() {
        #[derive(Serialize)]
        struct T {
            z: f64,
            a: u64,
            m: Vec<f64>,
        }
        let s = to_canonical_json(&T {
            z: 1.0 / 3.0,
            a: 7,
            m: vec![2.0 / 3.0],
        })
        .unwrap();
        assert_eq!(
            s,
            "{\n  \"a\": 7,\n  \"m\": [\n    0.666667\n  ],\n  \"z\": 0.333333\n}\n"
        );
    }

    #[test]
    fn table_alignment() {
        let t = aligned_table(
            &["method".into(), "2".into()],
            &[vec!["ProtoNet".into(), "68.84".into()]],
        );
        assert_eq!(t, "method        2\n---------------\nProtoNet  68.84\n");
    }
}
