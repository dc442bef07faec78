//! Benchmark rows, CSV and table output.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io;

use crate::error::{BenchError, Result};

/// Footer of every rendered table.
pub const BASELINE_NOTE: &str =
    "baselines are the in-repo tiled integer kernels, not an optimized vendor library";

pub const CSV_HEADER: [&str; 8] = [
    "layer",
    "precision",
    "baseline",
    "baseline_ns",
    "bitserial_ns",
    "speedup",
    "popcount_word_ops",
    "checksum_ok",
];

/// One (workload, precision, baseline) measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchRow {
    /// Layer number, or `mm<size>` for square matmuls.
    pub layer: String,
    pub precision: String,
    pub baseline: String,
    pub baseline_ns: u64,
    pub bitserial_ns: u64,
    pub popcount_word_ops: u64,
    pub checksum_ok: bool,
}

impl BenchRow {
    /// `baseline_ns / bitserial_ns`; `None` when the checksum failed.
    pub fn speedup(&self) -> Option<f64> {
        if !self.checksum_ok || self.bitserial_ns == 0 {
            return None;
        }
        Some(self.baseline_ns as f64 / self.bitserial_ns as f64)
    }
}

fn layer_key(layer: &str) -> (u8, u64, &str) {
    match layer.parse::<u64>() {
        Ok(n) => (0, n, layer),
        Err(_) => {
            let digits: String = layer.chars().filter(char::is_ascii_digit).collect();
            (1, digits.parse().unwrap_or(0), layer)
        }
    }
}

fn row_order(a: &BenchRow, b: &BenchRow) -> Ordering {
    layer_key(&a.layer)
        .cmp(&layer_key(&b.layer))
        .then_with(|| a.precision.cmp(&b.precision))
        .then_with(|| a.baseline.cmp(&b.baseline))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BenchReport {
    rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn new(mut rows: Vec<BenchRow>) -> Self {
        rows.sort_by(row_order);
        BenchReport { rows }
    }

    pub fn push(&mut self, row: BenchRow) {
        let at = self
            .rows
            .partition_point(|r| row_order(r, &row) != Ordering::Greater);
        self.rows.insert(at, row);
    }

    pub fn rows(&self) -> &[BenchRow] {
        &self.rows
    }

    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.checksum_ok)
    }

    pub fn find(&self, layer: &str, precision: &str) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.layer == layer && r.precision == precision)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.layer.clone(),
                r.precision.clone(),
                r.baseline.clone(),
                r.baseline_ns.to_string(),
                r.bitserial_ns.to_string(),
                r.speedup().map(|s| format!("{s:.3}")).unwrap_or_default(),
                r.popcount_word_ops.to_string(),
                r.checksum_ok.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Parses CSV written by [`BenchReport::write_csv`]. The speedup column
    /// must agree with the nanosecond fields to 3 decimals.
    pub fn parse_csv<R: io::Read>(input: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let header = rd.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(BenchError::CsvParse {
                line: 1,
                message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec?;
            let err = |message: String| BenchError::CsvParse { line, message };
            let num = |j: usize| {
                rec[j].parse::<u64>().map_err(|_| {
                    err(format!(
                        "{} is not an integer: {:?}",
                        CSV_HEADER[j], &rec[j]
                    ))
                })
            };
            let row = BenchRow {
                layer: rec[0].to_string(),
                precision: rec[1].to_string(),
                baseline: rec[2].to_string(),
                baseline_ns: num(3)?,
                bitserial_ns: num(4)?,
                popcount_word_ops: num(6)?,
                checksum_ok: rec[7]
                    .parse()
                    .map_err(|_| err(format!("checksum_ok is not a boolean: {:?}", &rec[7])))?,
            };
            let expected = row.speedup().map(|s| format!("{s:.3}")).unwrap_or_default();
            if rec[5] != expected {
                return Err(err(format!(
                    "speedup {:?} does not match the timings ({expected:?})",
                    &rec[5]
                )));
            }
            rows.push(row);
        }
        Ok(BenchReport::new(rows))
    }

    /// Fixed-width table for terminals.
    pub fn render_table(&self) -> String {
        let head = [
            "layer",
            "precision",
            "baseline",
            "baseline_ms",
            "bitserial_ms",
            "speedup",
            "popcount_ops",
            "ok",
        ];
        let ms = |ns: u64| format!("{:.3}", ns as f64 / 1e6);
        let cells: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.layer.clone(),
                    r.precision.clone(),
                    r.baseline.clone(),
                    ms(r.baseline_ns),
                    ms(r.bitserial_ns),
                    r.speedup().map_or("-".to_string(), |s| format!("{s:.2}x")),
                    r.popcount_word_ops.to_string(),
                    if r.checksum_ok { "yes" } else { "NO" }.to_string(),
                ]
            })
            .collect();
        let mut widths = head.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[&str]| {
            let parts: Vec<String> = row
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i < 3 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &head);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        let _ = writeln!(out, "{}", rule.join("  "));
        for row in &cells {
            let refs: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut out, &refs);
        }
        out.push_str(BASELINE_NOTE);
        out.push('\n');
        out
    }
}
