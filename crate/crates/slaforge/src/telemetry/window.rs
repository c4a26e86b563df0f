//! Sliding-window batching: H history steps in, F forecast steps out.

use ndarray::Array3;

use super::{TelemetryError, TelemetryTable, METRIC_COUNT};

/// Default history and horizon lengths, in 30 s steps.
pub const DEFAULT_HISTORY: usize = 4;
pub const DEFAULT_HORIZON: usize = 4;

/// One (history, target) pair. Blocks are `[steps, nodes, metrics]`; the
/// history ends at the row before `target_row`, the target starts at it.
#[derive(Debug, Clone)]
pub struct Window {
    pub x: Array3<f64>,
    pub y: Array3<f64>,
    /// Row index (within the source table) of the first forecast step.
    pub target_row: usize,
}

#[derive(Debug, Clone)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    pub history: usize,
    pub horizon: usize,
    pub nodes: usize,
    pub metrics: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Cuts stride-1 sliding windows out of every contiguous segment.
///
/// A segment of length `len` yields `len - history - horizon + 1` windows;
/// segments shorter than `history + horizon` yield none. Errors if no
/// segment is long enough.
pub fn make_windows(
    table: &TelemetryTable,
    history: usize,
    horizon: usize,
) -> Result<WindowSet, TelemetryError> {
    assert!(history > 0 && horizon > 0);
    let nodes = table.node_count();
    let mut windows = Vec::new();
    for seg in table.segments() {
        let len = seg.end - seg.start;
        if len < history + horizon {
            continue;
        }
        for t in seg.start + history..seg.end - horizon + 1 {
            let x = Array3::from_shape_fn((history, nodes, METRIC_COUNT), |(s, n, m)| {
                table.get(t - history + s, n, m)
            });
            let y = Array3::from_shape_fn((horizon, nodes, METRIC_COUNT), |(s, n, m)| {
                table.get(t + s, n, m)
            });
            windows.push(Window { x, y, target_row: t });
        }
    }
    if windows.is_empty() {
        return Err(TelemetryError::TooShort {
            rows: table.rows(),
            min: history + horizon,
        });
    }
    Ok(WindowSet { windows, history, horizon, nodes, metrics: METRIC_COUNT })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{synthesize, SynthConfig};
    use crate::topology::build_default_graph;

    fn table(steps: usize) -> TelemetryTable {
        let g = build_default_graph();
        let cfg = SynthConfig { seed: 12, steps, burst_rate: 0.0, burst_magnitude: 1.0 };
        synthesize(&g, &cfg).unwrap().0
    }

    #[test]
    fn window_counts() {
        let t = table(100);
        let ws = make_windows(&t, 4, 4).unwrap();
        assert_eq!(ws.len(), 93);
        let one = make_windows(&t.slice(0..8), 4, 4).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn too_short_errors() {
        let t = table(100);
        assert!(matches!(
            make_windows(&t.slice(0..7), 4, 4),
            Err(TelemetryError::TooShort { .. })
        ));
    }

    #[test]
    fn history_ends_where_target_begins() {
        let t = table(64);
        let ws = make_windows(&t, 4, 4).unwrap();
        for w in &ws.windows {
            let tr = w.target_row;
            // Last history step is row tr-1, first target step is row tr.
            assert_eq!(w.x[[3, 0, 0]], t.get(tr - 1, 0, 0));
            assert_eq!(w.y[[0, 0, 0]], t.get(tr, 0, 0));
        }
    }

    #[test]
    fn stride_f_targets_reconstruct_the_segment() {
        let t = table(64);
        let ws = make_windows(&t, 4, 4).unwrap();
        // Windows with target rows 4, 8, 12, ... tile rows [4, 64).
        let mut covered = vec![false; 64];
        for w in ws.windows.iter().filter(|w| (w.target_row - 4) % 4 == 0) {
            for s in 0..4 {
                let row = w.target_row + s;
                assert_eq!(w.y[[s, 2, 5]], t.get(row, 2, 5));
                covered[row] = true;
            }
        }
        assert!(covered[4..].iter().all(|&c| c));
    }

    #[test]
    fn windows_never_cross_segments() {
        let t = table(64);
        // Fake a segment break midway by re-slicing two halves.
        let a = t.slice(0..30);
        let b = t.slice(30..64);
        let wa = make_windows(&a, 4, 4).unwrap();
        let wb = make_windows(&b, 4, 4).unwrap();
        let whole = make_windows(&t, 4, 4).unwrap();
        assert_eq!(wa.len() + wb.len(), whole.len() - 7);
    }
}
