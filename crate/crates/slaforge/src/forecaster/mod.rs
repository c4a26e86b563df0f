//! Graph-convolutional GRU forecaster: cell, batched forward pass, training
//! loop with early stopping, evaluation metrics, and baselines.

mod cell;
mod checkpoint;
mod train;

pub use cell::{cell_step, GConvGRUCell, ModelLeaves};
pub use checkpoint::{
    load_forecaster, read_checkpoint, save_forecaster, write_checkpoint, Checkpoint,
    ForecasterMeta, NamedArray,
};
pub use train::{
    evaluate, gru_baseline, persistence_baseline, train, EarlyStopping, EpochStats, TrainHistory,
};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{NumericsError, ParamSet, Tape, Value};
use crate::telemetry::{Window, WindowSet};
use crate::topology::{scaled_laplacian, ServiceGraph, SpectralBasis, TopologyError};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("validation loss diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("empty window set")]
    EmptyWindows,
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a window's history steps are fed to the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    /// History steps are the input channels; one cell application per
    /// window, each metric an independent graph signal with shared weights.
    Single,
    /// Metrics are the input channels; the cell unrolls over the history
    /// steps carrying hidden state.
    Unrolled,
}

/// GConvGRU cell plus linear head over a fixed spectral basis.
#[derive(Debug, Clone)]
pub struct ForecastModel {
    pub cell: GConvGRUCell,
    pub mode: ForecastMode,
    pub history: usize,
    pub horizon: usize,
    pub metrics: usize,
    pub graph: ServiceGraph,
    pub basis: SpectralBasis<f64>,
    /// Cell gate stacks and biases plus the head projection, all in one
    /// ordered set so the optimizer and checkpoints see a single list.
    pub params: ParamSet<f64>,
}

impl ForecastModel {
    /// Builds a freshly initialized model: Xavier-uniform matrices, zero
    /// biases, seeded.
    pub fn new(
        graph: &ServiceGraph,
        k: usize,
        d_h: usize,
        history: usize,
        horizon: usize,
        metrics: usize,
        mode: ForecastMode,
        seed: u64,
    ) -> Result<Self, ForecastError> {
        let basis = scaled_laplacian::<f64>(graph, k)?;
        let d_in = match mode {
            ForecastMode::Single => history,
            ForecastMode::Unrolled => metrics,
        };
        let head_out = match mode {
            ForecastMode::Single => horizon,
            ForecastMode::Unrolled => horizon * metrics,
        };
        let cell = GConvGRUCell { k, d_in, d_h };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        cell.register_params(&mut params, &mut rng);
        params.add_xavier("head.w", d_h, head_out, &mut rng);
        params.add_zeros("head.b", 1, head_out);
        Ok(ForecastModel {
            cell,
            mode,
            history,
            horizon,
            metrics,
            graph: graph.clone(),
            basis,
            params,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Forecast for one window: `horizon x nodes x metrics`.
    pub fn forward(&self, x: &ndarray::Array3<f64>) -> Result<ndarray::Array3<f64>, ForecastError> {
        let out = self.forward_batch(std::slice::from_ref(&Window {
            x: x.clone(),
            y: ndarray::Array3::zeros((self.horizon, self.node_count(), self.metrics)),
            target_row: 0,
        }))?;
        Ok(out.into_iter().next().unwrap())
    }

    /// Gradient-free batched forward pass.
    pub fn forward_batch(&self, windows: &[Window]) -> Result<Vec<ndarray::Array3<f64>>, ForecastError> {
        let mut tape = Tape::new();
        let leaves = ModelLeaves::insert_constants(&self.params, &self.cell, &self.basis, &mut tape);
        let out = self.forward_on_tape(&mut tape, &leaves, windows)?;
        let flat = tape.data(out).to_vec();
        Ok(self.split_predictions(&flat, windows.len()))
    }

    /// Batched forward pass on an existing tape; returns the stacked output
    /// matrix (one row block per signal, columns are horizon steps).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<f64>,
        leaves: &ModelLeaves,
        windows: &[Window],
    ) -> Result<Value, ForecastError> {
        match self.mode {
            ForecastMode::Single => self.forward_single(tape, leaves, windows),
            ForecastMode::Unrolled => self.forward_unrolled(tape, leaves, windows),
        }
    }

    /// Stacked target matrix matching [`ForecastModel::forward_on_tape`].
    pub fn targets_matrix(&self, windows: &[Window]) -> Array2<f64> {
        let n = self.node_count();
        match self.mode {
            ForecastMode::Single => {
                // Row s*n + node for signal s = window * metrics + metric.
                let rows = windows.len() * self.metrics * n;
                let mut out = Array2::zeros((rows, self.horizon));
                for (w, window) in windows.iter().enumerate() {
                    for m in 0..self.metrics {
                        for node in 0..n {
                            let row = (w * self.metrics + m) * n + node;
                            for f in 0..self.horizon {
                                out[[row, f]] = window.y[[f, node, m]];
                            }
                        }
                    }
                }
                out
            }
            ForecastMode::Unrolled => {
                let rows = windows.len() * n;
                let mut out = Array2::zeros((rows, self.horizon * self.metrics));
                for (w, window) in windows.iter().enumerate() {
                    for node in 0..n {
                        for f in 0..self.horizon {
                            for m in 0..self.metrics {
                                out[[w * n + node, f * self.metrics + m]] = window.y[[f, node, m]];
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// Splits the flat stacked output back into per-window blocks.
    pub fn split_predictions(&self, flat: &[f64], n_windows: usize) -> Vec<ndarray::Array3<f64>> {
        let n = self.node_count();
        let mut out = Vec::with_capacity(n_windows);
        match self.mode {
            ForecastMode::Single => {
                for w in 0..n_windows {
                    let block = ndarray::Array3::from_shape_fn(
                        (self.horizon, n, self.metrics),
                        |(f, node, m)| {
                            let row = (w * self.metrics + m) * n + node;
                            flat[row * self.horizon + f]
                        },
                    );
                    out.push(block);
                }
            }
            ForecastMode::Unrolled => {
                let cols = self.horizon * self.metrics;
                for w in 0..n_windows {
                    let block = ndarray::Array3::from_shape_fn(
                        (self.horizon, n, self.metrics),
                        |(f, node, m)| {
                            let row = w * n + node;
                            flat[row * cols + f * self.metrics + m]
                        },
                    );
                    out.push(block);
                }
            }
        }
        out
    }

    fn forward_single(
        &self,
        tape: &mut Tape<f64>,
        leaves: &ModelLeaves,
        windows: &[Window],
    ) -> Result<Value, ForecastError> {
        let n = self.node_count();
        // One 6-row block per (window, metric) signal, columns are the
        // history steps.
        let rows = windows.len() * self.metrics * n;
        let mut data = Vec::with_capacity(rows * self.history);
        for window in windows {
            for m in 0..self.metrics {
                for node in 0..n {
                    for s in 0..self.history {
                        data.push(window.x[[s, node, m]]);
                    }
                }
            }
        }
        let x = tape.constant(rows, self.history, data);
        let h = cell_step(tape, leaves, x, None)?;
        let proj = tape.matmul(h, leaves.head_w)?;
        Ok(tape.add_bias(proj, leaves.head_b)?)
    }

    fn forward_unrolled(
        &self,
        tape: &mut Tape<f64>,
        leaves: &ModelLeaves,
        windows: &[Window],
    ) -> Result<Value, ForecastError> {
        let n = self.node_count();
        let rows = windows.len() * n;
        let mut h: Option<Value> = None;
        for s in 0..self.history {
            let mut data = Vec::with_capacity(rows * self.metrics);
            for window in windows {
                for node in 0..n {
                    for m in 0..self.metrics {
                        data.push(window.x[[s, node, m]]);
                    }
                }
            }
            let x = tape.constant(rows, self.metrics, data);
            h = Some(cell_step(tape, leaves, x, h)?);
        }
        let proj = tape.matmul(h.expect("history is non-empty"), leaves.head_w)?;
        Ok(tape.add_bias(proj, leaves.head_b)?)
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 1e-2, batch_size: 64, max_epochs: 200, patience: 10, seed: 0 }
    }
}

/// Forecast quality in transformed space.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mse: f64,
    pub mae: f64,
    pub rmse: f64,
    /// MAE per horizon step.
    pub per_step_mae: Vec<f64>,
}

/// Convenience bundle for the train/val/test window sets.
pub struct SplitWindows<'a> {
    pub train: &'a WindowSet,
    pub val: &'a WindowSet,
    pub test: &'a WindowSet,
}
