//! Long-format telemetry CSV ingestion.
//!
//! Input rows are `timestamp,vnfc,metric,value`. Readings are pivoted onto
//! the 30 s grid; gaps are forward-filled up to 4 consecutive steps, longer
//! gaps split the table into contiguous segments.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use ndarray::Array2;

use crate::topology::ServiceGraph;

use super::{
    parse_timestamp, Provenance, TelemetryError, TelemetryTable, MetricCatalog, METRIC_COUNT,
    SAMPLE_PERIOD_SECS,
};

/// Longest run of missing steps a column may forward-fill over.
pub const MAX_FFILL_STEPS: usize = 4;

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// When set, a metric outside the catalogue is an error instead of a
    /// counted warning.
    pub strict_metrics: bool,
}

/// Counters surfaced alongside an ingested table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    /// Rows whose metric is not in the 21-metric catalogue (skipped).
    pub unknown_metric_rows: usize,
    /// Duplicate (timestamp, vnfc, metric) cells; last write wins.
    pub duplicate_cells: usize,
    /// Grid rows dropped because a column gap exceeded the fill limit.
    pub dropped_rows: usize,
    /// Cells filled by carrying the previous reading forward.
    pub forward_filled_cells: usize,
}

pub fn ingest_csv<P: AsRef<Path>>(
    paths: &[P],
    graph: &ServiceGraph,
    options: &IngestOptions,
) -> Result<(TelemetryTable, IngestReport), TelemetryError> {
    let mut readers = Vec::new();
    for p in paths {
        let path = p.as_ref();
        let file = File::open(path)?;
        readers.push((path.display().to_string(), BufReader::new(file)));
    }
    ingest_readers(readers, graph, options)
}

pub fn ingest_readers<R: Read>(
    inputs: Vec<(String, R)>,
    graph: &ServiceGraph,
    options: &IngestOptions,
) -> Result<(TelemetryTable, IngestReport), TelemetryError> {
    let mut report = IngestReport::default();
    // (snapped timestamp, column) -> value
    let mut cells: HashMap<(i64, usize), f64> = HashMap::new();
    let mut min_ts = i64::MAX;
    let mut max_ts = i64::MIN;

    for (path, reader) in inputs {
        let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        for (idx, record) in csv_reader.records().enumerate() {
            let line = idx + 2; // header is line 1
            let record = record.map_err(|e| TelemetryError::UnparsableRow {
                path: path.clone(),
                line,
                message: e.to_string(),
            })?;
            if record.len() != 4 {
                return Err(TelemetryError::UnparsableRow {
                    path: path.clone(),
                    line,
                    message: format!("expected 4 fields, got {}", record.len()),
                });
            }
            let ts = parse_timestamp(record[0].trim()).ok_or_else(|| TelemetryError::UnparsableRow {
                path: path.clone(),
                line,
                message: format!("bad timestamp {:?}", &record[0]),
            })?;
            let node = graph
                .node_index(record[1].trim())
                .ok_or_else(|| TelemetryError::UnknownNode(record[1].trim().to_string()))?;
            let metric = match MetricCatalog::index_of(record[2].trim()) {
                Some(m) => m,
                None if options.strict_metrics => {
                    return Err(TelemetryError::UnknownMetric(record[2].trim().to_string()))
                }
                None => {
                    report.unknown_metric_rows += 1;
                    log::warn!("skipping unknown metric {:?} at {path} line {line}", &record[2]);
                    continue;
                }
            };
            let value: f64 = record[3].trim().parse().map_err(|_| TelemetryError::UnparsableRow {
                path: path.clone(),
                line,
                message: format!("bad value {:?}", &record[3]),
            })?;
            // Snap to the nearest 30 s grid point.
            let snapped = ((ts as f64 / SAMPLE_PERIOD_SECS as f64).round() as i64) * SAMPLE_PERIOD_SECS;
            min_ts = min_ts.min(snapped);
            max_ts = max_ts.max(snapped);
            let col = node * METRIC_COUNT + metric;
            if cells.insert((snapped, col), value).is_some() {
                report.duplicate_cells += 1;
                log::warn!("duplicate reading at {path} line {line}; keeping latest");
            }
        }
    }

    if cells.is_empty() {
        return Err(TelemetryError::EmptyInput);
    }

    let n_cols = graph.node_count() * METRIC_COUNT;
    let grid_len = ((max_ts - min_ts) / SAMPLE_PERIOD_SECS) as usize + 1;
    let mut grid = Array2::from_elem((grid_len, n_cols), f64::NAN);
    for ((ts, col), value) in cells {
        let row = ((ts - min_ts) / SAMPLE_PERIOD_SECS) as usize;
        grid[[row, col]] = value;
    }

    // Forward-fill gaps of at most MAX_FFILL_STEPS per column; longer gaps
    // are left open so nothing is fabricated across them.
    for col in 0..n_cols {
        let mut row = 0;
        let mut last: Option<f64> = None;
        while row < grid_len {
            if grid[[row, col]].is_nan() {
                let run_start = row;
                while row < grid_len && grid[[row, col]].is_nan() {
                    row += 1;
                }
                let run = row - run_start;
                if run <= MAX_FFILL_STEPS {
                    if let Some(v) = last {
                        for r in run_start..row {
                            grid[[r, col]] = v;
                            report.forward_filled_cells += 1;
                        }
                    }
                }
            } else {
                last = Some(grid[[row, col]]);
                row += 1;
            }
        }
    }

    // Keep only complete rows; runs of kept rows become segments.
    let mut timestamps = Vec::new();
    let mut flat = Vec::new();
    for row in 0..grid_len {
        let complete = (0..n_cols).all(|c| !grid[[row, c]].is_nan());
        if complete {
            timestamps.push(min_ts + row as i64 * SAMPLE_PERIOD_SECS);
            flat.extend((0..n_cols).map(|c| grid[[row, c]]));
        } else {
            report.dropped_rows += 1;
        }
    }
    if timestamps.is_empty() {
        return Err(TelemetryError::EmptyInput);
    }
    let values = Array2::from_shape_vec((timestamps.len(), n_cols), flat).expect("shape consistent");
    let segments = super::segments_from_timestamps(&timestamps);
    let table = TelemetryTable::new(
        timestamps,
        values,
        Provenance::Ingested,
        segments,
        graph.node_names().to_vec(),
    );
    Ok((table, report))
}
