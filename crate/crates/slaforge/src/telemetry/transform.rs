//! Per-column quantile transform onto the uniform `[0, 1]` interval.
//!
//! Fitted on training rows only: each column keeps up to 1000 reference
//! quantiles of its empirical distribution; the forward map is the linearly
//! interpolated empirical CDF with clamping, the inverse is the quantile
//! function with the same interpolation.

use ndarray::{Array2, ArrayView2};

use super::{TelemetryError, TelemetryTable};

pub const DEFAULT_N_QUANTILES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTransform {
    /// Per-column monotone non-decreasing reference quantiles.
    quantiles: Vec<Vec<f64>>,
}

impl QuantileTransform {
    /// Fits reference quantiles column by column over the given rows.
    pub fn fit(train: ArrayView2<'_, f64>) -> Self {
        Self::fit_with(train, DEFAULT_N_QUANTILES)
    }

    pub fn fit_with(train: ArrayView2<'_, f64>, n_quantiles: usize) -> Self {
        assert!(train.nrows() > 0, "cannot fit a transform on zero rows");
        let m = n_quantiles.max(2).min(train.nrows().max(2));
        let mut quantiles = Vec::with_capacity(train.ncols());
        for col in 0..train.ncols() {
            let mut sorted: Vec<f64> = train.column(col).to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = sorted.len();
            let q: Vec<f64> = (0..m)
                .map(|i| {
                    let pos = i as f64 / (m - 1) as f64 * (n - 1) as f64;
                    let lo = pos.floor() as usize;
                    let hi = pos.ceil() as usize;
                    let frac = pos - lo as f64;
                    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
                })
                .collect();
            quantiles.push(q);
        }
        QuantileTransform { quantiles }
    }

    /// Builds a transform from previously stored reference quantiles.
    pub fn from_quantiles(quantiles: Vec<Vec<f64>>) -> Result<Self, TelemetryError> {
        if quantiles.is_empty() {
            return Err(TelemetryError::NotFitted);
        }
        for q in &quantiles {
            if q.len() < 2 || q.windows(2).any(|w| w[1] < w[0]) {
                return Err(TelemetryError::NotFitted);
            }
        }
        Ok(QuantileTransform { quantiles })
    }

    pub fn n_columns(&self) -> usize {
        self.quantiles.len()
    }

    pub fn quantiles(&self) -> &[Vec<f64>] {
        &self.quantiles
    }

    /// Empirical CDF of one column with linear interpolation; out-of-range
    /// inputs clamp to `[0, 1]`; a constant column maps to 0.5.
    pub fn transform_value(&self, col: usize, x: f64) -> f64 {
        let q = &self.quantiles[col];
        let m = q.len();
        if q[0] == q[m - 1] {
            return 0.5;
        }
        if x <= q[0] {
            return 0.0;
        }
        if x >= q[m - 1] {
            return 1.0;
        }
        let denom = (m - 1) as f64;
        // First index with q[i] >= x.
        let hi = q.partition_point(|&v| v < x);
        if q[hi] == x {
            // Midpoint of the tied probability range.
            let last_eq = q.partition_point(|&v| v <= x) - 1;
            return (hi as f64 + last_eq as f64) / (2.0 * denom);
        }
        let lo = hi - 1;
        let frac = (x - q[lo]) / (q[hi] - q[lo]);
        (lo as f64 + frac) / denom
    }

    /// Quantile function of one column, the inverse interpolation.
    pub fn inverse_value(&self, col: usize, u: f64) -> f64 {
        let q = &self.quantiles[col];
        let m = q.len();
        let u = u.clamp(0.0, 1.0);
        let pos = u * (m - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        q[lo] * (1.0 - frac) + q[hi] * frac
    }

    fn check_width(&self, cols: usize) -> Result<(), TelemetryError> {
        if cols != self.quantiles.len() {
            return Err(TelemetryError::NotFitted);
        }
        Ok(())
    }

    pub fn transform_matrix(&self, values: &Array2<f64>) -> Result<Array2<f64>, TelemetryError> {
        self.check_width(values.ncols())?;
        Ok(Array2::from_shape_fn(values.dim(), |(r, c)| {
            self.transform_value(c, values[[r, c]])
        }))
    }

    pub fn inverse_matrix(&self, values: &Array2<f64>) -> Result<Array2<f64>, TelemetryError> {
        self.check_width(values.ncols())?;
        Ok(Array2::from_shape_fn(values.dim(), |(r, c)| {
            self.inverse_value(c, values[[r, c]])
        }))
    }

    pub fn transform_table(&self, table: &TelemetryTable) -> Result<TelemetryTable, TelemetryError> {
        Ok(table.with_values(self.transform_matrix(table.values())?))
    }

    pub fn inverse_table(&self, table: &TelemetryTable) -> Result<TelemetryTable, TelemetryError> {
        Ok(table.with_values(self.inverse_matrix(table.values())?))
    }
}
