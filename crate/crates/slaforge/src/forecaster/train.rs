//! Minibatch training with early stopping, plus evaluation and baselines.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{AdamConfig, AdamState, Tape};
use crate::telemetry::WindowSet;

use super::{cell::ModelLeaves, EvalReport, ForecastError, ForecastModel, TrainConfig};

/// Loss trajectory of one epoch.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights the model keeps (lowest validation MSE).
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
}

/// Best-so-far tracking for validation-loss early stopping: stop once
/// `patience` consecutive epochs fail to improve on the best loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, since_best: 0 }
    }

    /// Records one epoch's validation loss. Returns true when the epoch is a
    /// new best (caller snapshots weights), and [`EarlyStopping::should_stop`]
    /// flips once patience is exhausted.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Trains in place: Adam on minibatch MSE, validation after every epoch,
/// stop after `patience` epochs without improvement and restore the best
/// weights.
pub fn train(
    model: &mut ForecastModel,
    train_set: &WindowSet,
    val_set: &WindowSet,
    cfg: &TrainConfig,
) -> Result<TrainHistory, ForecastError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(ForecastError::EmptyWindows);
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut epochs = Vec::new();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params.clone();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| train_set.windows[i].clone()).collect();
            let mut tape = Tape::new();
            let leaves = ModelLeaves::insert_trainable(&model.params, &model.cell, &model.basis, &mut tape);
            let pred = model.forward_on_tape(&mut tape, &leaves, &batch)?;
            let target = model.targets_matrix(&batch);
            let (rows, cols) = tape.shape(pred);
            let tv = tape.constant(rows, cols, target.into_raw_vec_and_offset().0);
            let loss = tape.mse_loss(pred, tv)?;
            loss_sum += tape.data(loss)[0];
            loss_batches += 1;
            let grads = tape.backward(loss)?;
            let grads = model.params.collect_grads(&tape, &leaves.all, &grads);
            adam.step(&mut model.params, &grads);
        }
        let train_mse = loss_sum / loss_batches as f64;
        let val_mse = evaluate(model, val_set, cfg.batch_size)?.mse;
        if !val_mse.is_finite() {
            return Err(ForecastError::Diverged { epoch });
        }
        debug!("epoch {epoch}: train mse {train_mse:.6}, val mse {val_mse:.6}");
        epochs.push(EpochStats { epoch, train_mse, val_mse });

        if stopper.observe(epoch, val_mse) {
            best_params = model.params.clone();
        } else if stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }

    model.params = best_params;
    info!(
        "training stopped after {} epochs, best val mse {:.6} at epoch {}",
        epochs.len(),
        stopper.best_loss(),
        stopper.best_epoch()
    );
    Ok(TrainHistory {
        epochs,
        best_epoch: stopper.best_epoch(),
        best_val_mse: stopper.best_loss(),
        stopped_early,
    })
}

/// MSE/MAE/RMSE of the model over a window set, batched, no gradients.
pub fn evaluate(
    model: &ForecastModel,
    set: &WindowSet,
    batch_size: usize,
) -> Result<EvalReport, ForecastError> {
    if set.is_empty() {
        return Err(ForecastError::EmptyWindows);
    }
    let mut acc = ErrorAccumulator::new(model.horizon);
    for chunk in set.windows.chunks(batch_size) {
        let preds = model.forward_batch(chunk)?;
        for (pred, window) in preds.iter().zip(chunk) {
            acc.add(pred, &window.y);
        }
    }
    Ok(acc.report())
}

/// Last-observed-value baseline: every forecast step repeats the final
/// history step.
pub fn persistence_baseline(set: &WindowSet) -> Result<EvalReport, ForecastError> {
    if set.is_empty() {
        return Err(ForecastError::EmptyWindows);
    }
    let mut acc = ErrorAccumulator::new(set.horizon);
    for window in &set.windows {
        let last = window.x.index_axis(ndarray::Axis(0), set.history - 1);
        for f in 0..set.horizon {
            for node in 0..set.nodes {
                for m in 0..set.metrics {
                    acc.push(f, last[[node, m]] - window.y[[f, node, m]]);
                }
            }
        }
    }
    Ok(acc.report())
}

/// Spatially blind baseline: the same model with a depth-1 Chebyshev stack,
/// i.e. only the identity filter, so nodes never mix.
pub fn gru_baseline(
    model_template: &ForecastModel,
    train_set: &WindowSet,
    val_set: &WindowSet,
    test_set: &WindowSet,
    cfg: &TrainConfig,
) -> Result<(ForecastModel, EvalReport), ForecastError> {
    let mut model = ForecastModel::new(
        &model_template.graph,
        1,
        model_template.cell.d_h,
        model_template.history,
        model_template.horizon,
        model_template.metrics,
        model_template.mode,
        cfg.seed,
    )?;
    train(&mut model, train_set, val_set, cfg)?;
    let report = evaluate(&model, test_set, cfg.batch_size)?;
    Ok((model, report))
}

struct ErrorAccumulator {
    sq_sum: f64,
    abs_sum: f64,
    count: usize,
    per_step_abs: Vec<f64>,
    per_step_count: Vec<usize>,
}

impl ErrorAccumulator {
    fn new(horizon: usize) -> Self {
        ErrorAccumulator {
            sq_sum: 0.0,
            abs_sum: 0.0,
            count: 0,
            per_step_abs: vec![0.0; horizon],
            per_step_count: vec![0; horizon],
        }
    }

    fn push(&mut self, step: usize, err: f64) {
        self.sq_sum += err * err;
        self.abs_sum += err.abs();
        self.count += 1;
        self.per_step_abs[step] += err.abs();
        self.per_step_count[step] += 1;
    }

    fn add(&mut self, pred: &ndarray::Array3<f64>, truth: &ndarray::Array3<f64>) {
        debug_assert_eq!(pred.dim(), truth.dim());
        let (horizon, nodes, metrics) = pred.dim();
        for f in 0..horizon {
            for n in 0..nodes {
                for m in 0..metrics {
                    self.push(f, pred[[f, n, m]] - truth[[f, n, m]]);
                }
            }
        }
    }

    fn report(&self) -> EvalReport {
        let mse = self.sq_sum / self.count as f64;
        EvalReport {
            mse,
            mae: self.abs_sum / self.count as f64,
            rmse: mse.sqrt(),
            per_step_mae: self
                .per_step_abs
                .iter()
                .zip(&self.per_step_count)
                .map(|(s, &c)| s / c as f64)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    use crate::forecaster::ForecastMode;
    use crate::telemetry::{
        chronological_split, make_windows, synthesize, Provenance, QuantileTransform, SynthConfig,
        TelemetryTable, Window, METRIC_COUNT,
    };
    use crate::topology::build_default_graph;

    fn ramp_windows() -> WindowSet {
        // Every series is the global step index; persistence is off by
        // 1, 2, 3, 4 over the four forecast steps.
        let g = build_default_graph();
        let steps = 40;
        let mut values = ndarray::Array2::zeros((steps, 6 * METRIC_COUNT));
        for t in 0..steps {
            values.row_mut(t).fill(t as f64);
        }
        let timestamps: Vec<i64> = (0..steps as i64).map(|t| t * 30).collect();
        let table = TelemetryTable::new(
            timestamps,
            values,
            Provenance::Synthetic,
            vec![0..steps],
            g.node_names().to_vec(),
        );
        make_windows(&table, 4, 4).unwrap()
    }

    #[test]
    fn persistence_on_ramp_has_known_errors() {
        let report = persistence_baseline(&ramp_windows()).unwrap();
        assert_abs_diff_eq!(report.mae, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(report.mse, (1.0 + 4.0 + 9.0 + 16.0) / 4.0, epsilon = 1e-12);
        for (f, mae) in report.per_step_mae.iter().enumerate() {
            assert_abs_diff_eq!(*mae, (f + 1) as f64, epsilon = 1e-12);
        }
    }

    fn transformed_splits(seed: u64, steps: usize) -> (WindowSet, WindowSet, WindowSet) {
        let g = build_default_graph();
        let cfg = SynthConfig { seed, steps, burst_rate: 0.02, burst_magnitude: 1.0 };
        let (table, _) = synthesize(&g, &cfg).unwrap();
        let (train_t, val_t, test_t) = chronological_split(&table).unwrap();
        let qt = QuantileTransform::fit_with(train_t.values().view(), 100);
        let tr = |t: &TelemetryTable| qt.transform_table(t).unwrap();
        (
            make_windows(&tr(&train_t), 4, 4).unwrap(),
            make_windows(&tr(&val_t), 4, 4).unwrap(),
            make_windows(&tr(&test_t), 4, 4).unwrap(),
        )
    }

    #[test]
    fn training_reduces_validation_loss() {
        let (train_set, val_set, _) = transformed_splits(21, 220);
        let g = build_default_graph();
        let mut model =
            ForecastModel::new(&g, 3, 16, 4, 4, METRIC_COUNT, ForecastMode::Single, 0).unwrap();
        let before = evaluate(&model, &val_set, 64).unwrap().mse;
        let cfg = TrainConfig { max_epochs: 5, batch_size: 64, ..TrainConfig::default() };
        let hist = train(&mut model, &train_set, &val_set, &cfg).unwrap();
        assert!(hist.best_val_mse < before, "{} !< {before}", hist.best_val_mse);
        // The kept weights reproduce the best recorded validation loss.
        let after = evaluate(&model, &val_set, 64).unwrap().mse;
        assert_abs_diff_eq!(after, hist.best_val_mse, epsilon = 1e-12);
    }

    #[test]
    fn early_stopping_restores_best_epoch() {
        let (train_set, val_set, _) = transformed_splits(22, 180);
        let g = build_default_graph();
        let mut model =
            ForecastModel::new(&g, 2, 8, 4, 4, METRIC_COUNT, ForecastMode::Single, 1).unwrap();
        // Patience 1 forces a stop on the first non-improving epoch.
        let cfg = TrainConfig { max_epochs: 50, patience: 1, ..TrainConfig::default() };
        let hist = train(&mut model, &train_set, &val_set, &cfg).unwrap();
        if hist.stopped_early {
            assert!(hist.epochs.len() < 50);
            let best = hist.epochs.iter().map(|e| e.val_mse).fold(f64::INFINITY, f64::min);
            assert_abs_diff_eq!(best, hist.best_val_mse);
        }
    }

    #[test]
    fn depth_one_stack_ignores_other_nodes() {
        // With only the identity filter, node 0's forecast cannot depend on
        // node 2's history; with a depth-3 stack it must.
        let g = build_default_graph();
        let mk = |k: usize| {
            ForecastModel::new(&g, k, 8, 4, 4, METRIC_COUNT, ForecastMode::Single, 7).unwrap()
        };
        let base = Array3::from_shape_fn((4, 6, METRIC_COUNT), |(s, n, m)| {
            ((s + 2 * n + 3 * m) % 7) as f64 / 7.0
        });
        let mut poked = base.clone();
        poked[[2, 2, 5]] += 0.3;

        let local = mk(1);
        let a = local.forward(&base).unwrap();
        let b = local.forward(&poked).unwrap();
        for f in 0..4 {
            for m in 0..METRIC_COUNT {
                assert_abs_diff_eq!(a[[f, 0, m]], b[[f, 0, m]], epsilon = 1e-14);
            }
        }

        let spatial = mk(3);
        let a = spatial.forward(&base).unwrap();
        let b = spatial.forward(&poked).unwrap();
        let moved: f64 = (0..4).map(|f| (a[[f, 0, 5]] - b[[f, 0, 5]]).abs()).sum();
        assert!(moved > 1e-6, "depth-3 stack ignored a neighbor perturbation");
    }

    #[test]
    fn unrolled_mode_trains_and_evaluates() {
        let (train_set, val_set, _) = transformed_splits(23, 150);
        let g = build_default_graph();
        let mut model =
            ForecastModel::new(&g, 2, 8, 4, 4, METRIC_COUNT, ForecastMode::Unrolled, 2).unwrap();
        let before = evaluate(&model, &val_set, 64).unwrap().mse;
        let cfg = TrainConfig { max_epochs: 3, ..TrainConfig::default() };
        let hist = train(&mut model, &train_set, &val_set, &cfg).unwrap();
        assert!(hist.best_val_mse < before);
    }

    #[test]
    fn forward_batch_matches_single_window_forward() {
        let g = build_default_graph();
        let model =
            ForecastModel::new(&g, 3, 8, 4, 4, METRIC_COUNT, ForecastMode::Single, 3).unwrap();
        let (_, val_set, _) = transformed_splits(24, 130);
        let windows: Vec<Window> = val_set.windows[..5].to_vec();
        let batched = model.forward_batch(&windows).unwrap();
        for (w, b) in windows.iter().zip(&batched) {
            let single = model.forward(&w.x).unwrap();
            for (x, y) in single.iter().zip(b.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }
}
