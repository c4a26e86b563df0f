//! Telemetry ingestion, synthesis, chronological splits, quantile
//! transformation, and sliding-window batching.

mod ingest;
mod synth;
mod transform;
mod window;

pub use ingest::{ingest_csv, IngestOptions, IngestReport};
pub use synth::{synthesize, Burst, SynthConfig};
pub use transform::{QuantileTransform, DEFAULT_N_QUANTILES};
pub use window::{make_windows, Window, WindowSet, DEFAULT_HISTORY, DEFAULT_HORIZON};

use std::io::{BufRead, Write};
use std::ops::Range;

use chrono::{DateTime, TimeZone, Utc};
use ndarray::Array2;
use thiserror::Error;

/// Sampling cadence of the telemetry grid, in seconds.
pub const SAMPLE_PERIOD_SECS: i64 = 30;

/// Number of modeled metrics per component.
pub const METRIC_COUNT: usize = 21;

/// The 21 modeled metric names, grouped cpu / disk / load / memory / network.
pub const METRIC_NAMES: [&str; METRIC_COUNT] = [
    "cpu.idle_perc",
    "cpu.system_perc",
    "cpu.wait_perc",
    "disk.inode_used_perc",
    "disk.space_used_perc",
    "io.read_kbytes_sec",
    "io.read_req_sec",
    "io.read_time_sec",
    "io.write_kbytes_sec",
    "io.write_req_sec",
    "io.write_time_sec",
    "load.avg_1_min",
    "load.avg_15_min",
    "load.avg_5_min",
    "mem.free_mb",
    "mem.usable_mb",
    "mem.usable_perc",
    "net.in_bytes_sec",
    "net.in_packets_sec",
    "net.out_bytes_sec",
    "net.out_packets_sec",
];

/// Metric catalogue with group sizes cpu:3, disk:8, load:3, memory:3, network:4.
#[derive(Debug, Clone)]
pub struct MetricCatalog;

impl MetricCatalog {
    pub fn names() -> &'static [&'static str] {
        &METRIC_NAMES
    }

    pub fn index_of(name: &str) -> Option<usize> {
        METRIC_NAMES.iter().position(|&m| m == name)
    }

    /// Group of a metric by name prefix.
    pub fn group_of(name: &str) -> Option<&'static str> {
        let prefix = name.split('.').next()?;
        match prefix {
            "cpu" => Some("cpu"),
            "disk" | "io" => Some("disk"),
            "load" => Some("load"),
            "mem" => Some("memory"),
            "net" => Some("network"),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("unknown metric: {0}")]
    UnknownMetric(String),
    #[error("unknown vnfc: {0}")]
    UnknownNode(String),
    #[error("{path} line {line}: {message}")]
    UnparsableRow { path: String, line: usize, message: String },
    #[error("no complete telemetry rows after alignment")]
    EmptyInput,
    #[error("bad synthesis config: {0}")]
    BadConfig(String),
    #[error("table too short: {rows} rows, need at least {min}")]
    TooShort { rows: usize, min: usize },
    #[error("quantile transform has not been fitted")]
    NotFitted,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Where a table's values came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Ingested,
    Synthetic,
}

/// Time-indexed matrix of per-(component, metric) readings on a 30 s grid.
///
/// Rows are timestamps, columns are ordered node-major, metric-minor.
/// `segments` partitions the rows into runs that are contiguous in time;
/// windows never cross a segment boundary.
#[derive(Debug, Clone)]
pub struct TelemetryTable {
    timestamps: Vec<i64>,
    values: Array2<f64>,
    provenance: Provenance,
    segments: Vec<Range<usize>>,
    node_names: Vec<String>,
}

impl TelemetryTable {
    pub fn new(
        timestamps: Vec<i64>,
        values: Array2<f64>,
        provenance: Provenance,
        segments: Vec<Range<usize>>,
        node_names: Vec<String>,
    ) -> Self {
        assert_eq!(timestamps.len(), values.nrows());
        assert_eq!(values.ncols(), node_names.len() * METRIC_COUNT);
        for seg in &segments {
            for i in seg.start + 1..seg.end {
                assert_eq!(
                    timestamps[i] - timestamps[i - 1],
                    SAMPLE_PERIOD_SECS,
                    "segment rows must be 30 s apart"
                );
            }
        }
        TelemetryTable { timestamps, values, provenance, segments, node_names }
    }

    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    /// Column index for a (node, metric) pair: node-major, metric-minor.
    pub fn column(&self, node: usize, metric: usize) -> usize {
        node * METRIC_COUNT + metric
    }

    pub fn get(&self, row: usize, node: usize, metric: usize) -> f64 {
        self.values[[row, self.column(node, metric)]]
    }

    /// Replaces the value matrix, keeping timestamps and segment structure.
    pub fn with_values(&self, values: Array2<f64>) -> Self {
        assert_eq!(values.dim(), self.values.dim());
        TelemetryTable { values, ..self.clone() }
    }

    /// Row slice `[range)` of the table, re-based segments included.
    pub fn slice(&self, range: Range<usize>) -> Self {
        let timestamps = self.timestamps[range.clone()].to_vec();
        let values = self
            .values
            .slice(ndarray::s![range.clone(), ..])
            .to_owned();
        let mut segments = Vec::new();
        for seg in &self.segments {
            let start = seg.start.max(range.start);
            let end = seg.end.min(range.end);
            if start < end {
                segments.push(start - range.start..end - range.start);
            }
        }
        TelemetryTable {
            timestamps,
            values,
            provenance: self.provenance,
            segments,
            node_names: self.node_names.clone(),
        }
    }

    /// Writes the canonical wide CSV: `timestamp` then node-major
    /// `<vnfc>.<metric>` columns, ISO-8601 UTC timestamps.
    pub fn write_wide_csv<W: Write>(&self, out: W) -> Result<(), TelemetryError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp".to_string()];
        for node in &self.node_names {
            for metric in METRIC_NAMES {
                header.push(format!("{node}.{metric}"));
            }
        }
        w.write_record(&header)?;
        for (row, &ts) in self.timestamps.iter().enumerate() {
            let mut record = vec![format_timestamp(ts)];
            for col in 0..self.values.ncols() {
                record.push(format!("{}", self.values[[row, col]]));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a canonical wide CSV; segments are inferred from gaps in the
    /// 30 s timestamp grid.
    pub fn read_wide_csv<R: BufRead>(input: R, node_names: &[String]) -> Result<Self, TelemetryError> {
        let mut reader = csv::Reader::from_reader(input);
        let expected_cols = node_names.len() * METRIC_COUNT;
        let mut timestamps = Vec::new();
        let mut flat: Vec<f64> = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let record = record.map_err(|e| TelemetryError::UnparsableRow {
                path: "<wide csv>".into(),
                line: idx + 2,
                message: e.to_string(),
            })?;
            if record.len() != expected_cols + 1 {
                return Err(TelemetryError::UnparsableRow {
                    path: "<wide csv>".into(),
                    line: idx + 2,
                    message: format!("expected {} fields, got {}", expected_cols + 1, record.len()),
                });
            }
            let ts = parse_timestamp(&record[0]).ok_or_else(|| TelemetryError::UnparsableRow {
                path: "<wide csv>".into(),
                line: idx + 2,
                message: format!("bad timestamp {:?}", &record[0]),
            })?;
            timestamps.push(ts);
            for field in record.iter().skip(1) {
                let v: f64 = field.parse().map_err(|_| TelemetryError::UnparsableRow {
                    path: "<wide csv>".into(),
                    line: idx + 2,
                    message: format!("bad value {:?}", field),
                })?;
                flat.push(v);
            }
        }
        if timestamps.is_empty() {
            return Err(TelemetryError::EmptyInput);
        }
        let rows = timestamps.len();
        let values = Array2::from_shape_vec((rows, expected_cols), flat).expect("shape checked");
        let segments = segments_from_timestamps(&timestamps);
        Ok(TelemetryTable::new(
            timestamps,
            values,
            Provenance::Ingested,
            segments,
            node_names.to_vec(),
        ))
    }
}

pub(crate) fn segments_from_timestamps(timestamps: &[i64]) -> Vec<Range<usize>> {
    let mut segments = Vec::new();
    let mut start = 0;
    for i in 1..timestamps.len() {
        if timestamps[i] - timestamps[i - 1] != SAMPLE_PERIOD_SECS {
            segments.push(start..i);
            start = i;
        }
    }
    segments.push(start..timestamps.len());
    segments
}

pub fn format_timestamp(epoch_secs: i64) -> String {
    let dt: DateTime<Utc> = Utc.timestamp_opt(epoch_secs, 0).unwrap();
    dt.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_timestamp(s: &str) -> Option<i64> {
    DateTime::parse_from_rfc3339(s).ok().map(|dt| dt.timestamp())
}

/// Chronological 80:20 split of the full table, then 80:20 of the front part:
/// 64% train, 16% validation, 20% test, all contiguous in time.
///
/// Counts are floor-based: `test = floor(0.2 T)`, `train = floor(0.8 (T - test))`,
/// with remainders folded into the adjacent earlier segment's companion.
pub fn chronological_split(
    table: &TelemetryTable,
) -> Result<(TelemetryTable, TelemetryTable, TelemetryTable), TelemetryError> {
    let t = table.rows();
    if t < 20 {
        return Err(TelemetryError::TooShort { rows: t, min: 20 });
    }
    let (n_train, n_val, n_test) = split_counts(t);
    let train = table.slice(0..n_train);
    let val = table.slice(n_train..n_train + n_val);
    let test = table.slice(n_train + n_val..t);
    debug_assert_eq!(train.rows() + val.rows() + test.rows(), t);
    let _ = n_test;
    Ok((train, val, test))
}

/// Row counts (train, val, test) for a table of `t` rows.
pub fn split_counts(t: usize) -> (usize, usize, usize) {
    let n_test = t * 20 / 100;
    let rest = t - n_test;
    let n_train = rest * 80 / 100;
    let n_val = rest - n_train;
    (n_train, n_val, n_test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_default_graph;

    #[test]
    fn catalog_has_21_metrics_with_expected_groups() {
        assert_eq!(METRIC_NAMES.len(), 21);
        let count = |g: &str| METRIC_NAMES.iter().filter(|m| MetricCatalog::group_of(m) == Some(g)).count();
        assert_eq!(count("cpu"), 3);
        assert_eq!(count("disk"), 8);
        assert_eq!(count("load"), 3);
        assert_eq!(count("memory"), 3);
        assert_eq!(count("network"), 4);
        assert_eq!(MetricCatalog::index_of("cpu.idle_perc"), Some(0));
        assert_eq!(MetricCatalog::index_of("net.out_packets_sec"), Some(20));
    }

    #[test]
    fn split_counts_match_floor_arithmetic() {
        assert_eq!(split_counts(100), (64, 16, 20));
        assert_eq!(split_counts(177_098), (113_343, 28_336, 35_419));
        let (a, b, c) = split_counts(177_098);
        assert_eq!(a + b + c, 177_098);
    }

    #[test]
    fn split_is_chronological() {
        let g = build_default_graph();
        let cfg = SynthConfig { seed: 5, steps: 100, burst_rate: 0.0, burst_magnitude: 1.0 };
        let (table, _) = synthesize(&g, &cfg).unwrap();
        let (train, val, test) = chronological_split(&table).unwrap();
        assert_eq!((train.rows(), val.rows(), test.rows()), (64, 16, 20));
        assert!(train.timestamps().last().unwrap() < val.timestamps().first().unwrap());
        assert!(val.timestamps().last().unwrap() < test.timestamps().first().unwrap());
    }

    #[test]
    fn split_rejects_tiny_tables() {
        let g = build_default_graph();
        let cfg = SynthConfig { seed: 5, steps: 64, burst_rate: 0.0, burst_magnitude: 1.0 };
        let (table, _) = synthesize(&g, &cfg).unwrap();
        let short = table.slice(0..10);
        assert!(matches!(chronological_split(&short), Err(TelemetryError::TooShort { .. })));
    }

    #[test]
    fn wide_csv_round_trip() {
        let g = build_default_graph();
        let cfg = SynthConfig { seed: 9, steps: 70, burst_rate: 0.01, burst_magnitude: 1.0 };
        let (table, _) = synthesize(&g, &cfg).unwrap();
        let mut buf = Vec::new();
        table.write_wide_csv(&mut buf).unwrap();
        let parsed = TelemetryTable::read_wide_csv(&buf[..], table.node_names()).unwrap();
        assert_eq!(parsed.rows(), table.rows());
        assert_eq!(parsed.timestamps(), table.timestamps());
        for row in 0..table.rows() {
            for col in 0..table.cols() {
                let a = table.values()[[row, col]];
                let b = parsed.values()[[row, col]];
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "({row},{col}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn slice_rebases_segments() {
        let timestamps: Vec<i64> = (0..10)
            .map(|i| if i < 5 { i * 30 } else { i * 30 + 300 })
            .collect();
        let segments = segments_from_timestamps(&timestamps);
        assert_eq!(segments, vec![0..5, 5..10]);
        let values = Array2::zeros((10, 6 * METRIC_COUNT));
        let names: Vec<String> = build_default_graph().node_names().to_vec();
        let table = TelemetryTable::new(timestamps, values, Provenance::Synthetic, segments, names);
        let sliced = table.slice(3..8);
        assert_eq!(sliced.segments(), &[0..2, 2..5]);
    }
}
