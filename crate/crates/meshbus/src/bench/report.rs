//! Report output: CSV, an aligned table, and gnuplot-ready series.

use std::io::{self, Read, Write};

use super::{BenchRecord, BenchResult};

pub const CSV_COLUMNS: [&str; 7] = [
    "mode",
    "size_bytes",
    "n",
    "mean_us",
    "median_us",
    "p99_us",
    "throughput_mbps",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Table,
    PlotData,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "table" => Ok(ReportFormat::Table),
            "plot-data" | "plot" => Ok(ReportFormat::PlotData),
            other => Err(format!("unknown format {other:?}; use csv, table or plot-data")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

pub fn emit_report(result: &BenchResult, format: ReportFormat, out: &mut dyn Write) -> Result<(), ReportError> {
    match format {
        ReportFormat::Csv => write_csv(&result.records, out),
        ReportFormat::Table => write_table(result, out),
        ReportFormat::PlotData => write_plot_data(result, out),
    }
}

fn write_csv(records: &[BenchRecord], out: &mut dyn Write) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record([
            r.mode.clone(),
            r.size_bytes.to_string(),
            r.n.to_string(),
            r.mean_us.to_string(),
            r.median_us.to_string(),
            r.p99_us.to_string(),
            r.throughput_mbps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`emit_report`]. Floats are written with
/// shortest round-trip formatting, so values come back bit-identical.
pub fn parse_csv(input: impl Read) -> Result<Vec<BenchRecord>, ReportError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(ReportError::Row {
            row: 0,
            message: format!("expected header {}", CSV_COLUMNS.join(",")),
        });
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let bad = |col: &str| ReportError::Row {
            row: i + 1,
            message: format!("bad {col}"),
        };
        let float = |idx: usize| row[idx].parse::<f64>().map_err(|_| bad(CSV_COLUMNS[idx]));
        records.push(BenchRecord {
            mode: row[0].to_string(),
            size_bytes: row[1].parse().map_err(|_| bad("size_bytes"))?,
            n: row[2].parse().map_err(|_| bad("n"))?,
            mean_us: float(3)?,
            median_us: float(4)?,
            p99_us: float(5)?,
            throughput_mbps: float(6)?,
        });
    }
    Ok(records)
}

fn write_table(result: &BenchResult, out: &mut dyn Write) -> Result<(), ReportError> {
    writeln!(out, "# {}", result.convention)?;
    writeln!(
        out,
        "{:<12} {:>12} {:>6} {:>12} {:>12} {:>12} {:>14}",
        "mode", "size_bytes", "n", "mean_us", "median_us", "p99_us", "throughput_MB/s"
    )?;
    for r in &result.records {
        writeln!(
            out,
            "{:<12} {:>12} {:>6} {:>12.2} {:>12.2} {:>12.2} {:>14.2}",
            r.mode, r.size_bytes, r.n, r.mean_us, r.median_us, r.p99_us, r.throughput_mbps
        )?;
    }
    Ok(())
}

/// One whitespace-separated block per mode, blocks separated by two blank
/// lines so gnuplot can address them with `index`.
fn write_plot_data(result: &BenchResult, out: &mut dyn Write) -> Result<(), ReportError> {
    writeln!(out, "# {}", result.convention)?;
    let mut modes: Vec<&str> = Vec::new();
    for r in &result.records {
        if !modes.contains(&r.mode.as_str()) {
            modes.push(&r.mode);
        }
    }
    for (i, mode) in modes.iter().enumerate() {
        if i > 0 {
            writeln!(out, "\n")?;
        }
        writeln!(out, "# mode {mode}")?;
        writeln!(out, "# size_bytes n mean_us median_us p99_us throughput_mbps")?;
        for r in result.records.iter().filter(|r| r.mode == *mode) {
            writeln!(
                out,
                "{} {} {} {} {} {}",
                r.size_bytes, r.n, r.mean_us, r.median_us, r.p99_us, r.throughput_mbps
            )?;
        }
    }
    Ok(())
}
