//! GConvGRU cell: gated recurrence whose linear maps are Chebyshev graph
//! convolutions with shared weights across graph signals.

use rand::Rng;

use crate::numerics::{NumericsError, ParamSet, Tape, Value};
use crate::topology::SpectralBasis;

/// Cell dimensions; the weights themselves live in a [`ParamSet`] under the
/// names registered by [`GConvGRUCell::register_params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GConvGRUCell {
    /// Chebyshev stack depth: orders `0 .. k-1`.
    pub k: usize,
    pub d_in: usize,
    pub d_h: usize,
}

impl GConvGRUCell {
    /// Registers the six kernel stacks plus gate biases: for each gate the
    /// input-side stack is `k` matrices `d_in x d_h`, the state-side stack is
    /// `k` matrices `d_h x d_h`. Matrices are Xavier-uniform, biases zero.
    pub fn register_params(&self, params: &mut ParamSet<f64>, rng: &mut impl Rng) {
        for gate in ["z", "r", "h"] {
            for i in 0..self.k {
                params.add_xavier(&format!("cell.w_x{gate}.{i}"), self.d_in, self.d_h, rng);
            }
            for i in 0..self.k {
                params.add_xavier(&format!("cell.w_h{gate}.{i}"), self.d_h, self.d_h, rng);
            }
            params.add_zeros(&format!("cell.b_{gate}"), 1, self.d_h);
        }
    }
}

/// Tape handles for one forward pass: every parameter plus the Chebyshev
/// matrices of the basis as constants.
pub struct ModelLeaves {
    /// All parameter handles in [`ParamSet`] order, for gradient collection.
    pub all: Vec<Value>,
    /// `T_0 .. T_{k-1}` as constant `n x n` tensors.
    pub t_mats: Vec<Value>,
    pub w_xz: Vec<Value>,
    pub w_hz: Vec<Value>,
    pub w_xr: Vec<Value>,
    pub w_hr: Vec<Value>,
    pub w_xh: Vec<Value>,
    pub w_hh: Vec<Value>,
    pub b_z: Value,
    pub b_r: Value,
    pub b_h: Value,
    pub head_w: Value,
    pub head_b: Value,
}

impl ModelLeaves {
    /// Parameters as grad-requiring leaves; used for training passes.
    pub fn insert_trainable(
        params: &ParamSet<f64>,
        cell: &GConvGRUCell,
        basis: &SpectralBasis<f64>,
        tape: &mut Tape<f64>,
    ) -> Self {
        let all = params.insert_leaves(tape);
        Self::assemble(all, params, cell, basis, tape)
    }

    /// Parameters as constants; used for inference-only passes.
    pub fn insert_constants(
        params: &ParamSet<f64>,
        cell: &GConvGRUCell,
        basis: &SpectralBasis<f64>,
        tape: &mut Tape<f64>,
    ) -> Self {
        let all: Vec<Value> = params
            .iter()
            .map(|p| tape.constant(p.rows, p.cols, p.data.clone()))
            .collect();
        Self::assemble(all, params, cell, basis, tape)
    }

    fn assemble(
        all: Vec<Value>,
        params: &ParamSet<f64>,
        cell: &GConvGRUCell,
        basis: &SpectralBasis<f64>,
        tape: &mut Tape<f64>,
    ) -> Self {
        let t_mats: Vec<Value> = basis
            .chebyshev_matrices(cell.k)
            .into_iter()
            .map(|t| {
                let n = t.nrows();
                tape.constant(n, n, t.into_raw_vec_and_offset().0)
            })
            .collect();
        let by_name = |name: &str| all[params.index_of(name).unwrap_or_else(|| panic!("missing param {name}"))];
        let stack = |prefix: &str| (0..cell.k).map(|i| by_name(&format!("{prefix}.{i}"))).collect();
        ModelLeaves {
            t_mats,
            w_xz: stack("cell.w_xz"),
            w_hz: stack("cell.w_hz"),
            w_xr: stack("cell.w_xr"),
            w_hr: stack("cell.w_hr"),
            w_xh: stack("cell.w_xh"),
            w_hh: stack("cell.w_hh"),
            b_z: by_name("cell.b_z"),
            b_r: by_name("cell.b_r"),
            b_h: by_name("cell.b_h"),
            head_w: by_name("head.w"),
            head_b: by_name("head.b"),
            all,
        }
    }
}

/// `sum_k (T_k X) W_k` with `T_k` applied per node-block; `X` stacks any
/// number of `n`-row graph signals.
fn cheb_mix(
    tape: &mut Tape<f64>,
    t_mats: &[Value],
    x: Value,
    weights: &[Value],
) -> Result<Value, NumericsError> {
    // T_0 is the identity; skip its block multiply.
    let mut acc = tape.matmul(x, weights[0])?;
    for (t, &w) in t_mats.iter().zip(weights).skip(1) {
        let tx = tape.block_matmul(*t, x)?;
        let term = tape.matmul(tx, w)?;
        acc = tape.add(acc, term)?;
    }
    Ok(acc)
}

/// One GConvGRU step over stacked graph signals.
///
/// With state:
///   z = sigmoid(cheb(x, W_xz) + cheb(h, W_hz) + b_z)
///   r = sigmoid(cheb(x, W_xr) + cheb(h, W_hr) + b_r)
///   h~ = tanh(cheb(x, W_xh) + cheb(r * h, W_hh) + b_h)
///   h' = z * h + (1 - z) * h~
///
/// Without state (`h_prev = None`, i.e. h = 0) the r gate and all
/// state-side convolutions drop out and h' = (1 - z) * h~.
pub fn cell_step(
    tape: &mut Tape<f64>,
    leaves: &ModelLeaves,
    x: Value,
    h_prev: Option<Value>,
) -> Result<Value, NumericsError> {
    let zx = cheb_mix(tape, &leaves.t_mats, x, &leaves.w_xz)?;
    let z_pre = match h_prev {
        Some(h) => {
            let zh = cheb_mix(tape, &leaves.t_mats, h, &leaves.w_hz)?;
            tape.add(zx, zh)?
        }
        None => zx,
    };
    let z_pre = tape.add_bias(z_pre, leaves.b_z)?;
    let z = tape.sigmoid(z_pre);

    match h_prev {
        Some(h) => {
            let rx = cheb_mix(tape, &leaves.t_mats, x, &leaves.w_xr)?;
            let rh = cheb_mix(tape, &leaves.t_mats, h, &leaves.w_hr)?;
            let r_pre = tape.add(rx, rh)?;
            let r_pre = tape.add_bias(r_pre, leaves.b_r)?;
            let r = tape.sigmoid(r_pre);

            let gated = tape.hadamard(r, h)?;
            let cx = cheb_mix(tape, &leaves.t_mats, x, &leaves.w_xh)?;
            let ch = cheb_mix(tape, &leaves.t_mats, gated, &leaves.w_hh)?;
            let cand_pre = tape.add(cx, ch)?;
            let cand_pre = tape.add_bias(cand_pre, leaves.b_h)?;
            let cand = tape.tanh(cand_pre);

            // z*h + (1-z)*cand = cand + z*(h - cand)
            let diff = tape.sub(h, cand)?;
            let gate_term = tape.hadamard(z, diff)?;
            tape.add(cand, gate_term)
        }
        None => {
            let cx = cheb_mix(tape, &leaves.t_mats, x, &leaves.w_xh)?;
            let cand_pre = tape.add_bias(cx, leaves.b_h)?;
            let cand = tape.tanh(cand_pre);
            // (1-z)*cand = cand - z*cand
            let gate_term = tape.hadamard(z, cand)?;
            tape.sub(cand, gate_term)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::topology::{build_default_graph, chebyshev_apply, scaled_laplacian};

    const K: usize = 3;
    const D_IN: usize = 4;
    const D_H: usize = 5;

    fn fixture(seed: u64) -> (GConvGRUCell, ParamSet<f64>, SpectralBasis<f64>) {
        let graph = build_default_graph();
        let basis = scaled_laplacian::<f64>(&graph, K).unwrap();
        let cell = GConvGRUCell { k: K, d_in: D_IN, d_h: D_H };
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cell.register_params(&mut params, &mut rng);
        // The head is unused by cell-level tests but ModelLeaves expects it.
        params.add_xavier("head.w", D_H, 2, &mut rng);
        params.add_zeros("head.b", 1, 2);
        (cell, params, basis)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn run_step(
        cell: &GConvGRUCell,
        params: &ParamSet<f64>,
        basis: &SpectralBasis<f64>,
        x: &[f64],
        h_prev: Option<&[f64]>,
    ) -> Vec<f64> {
        let mut tape = Tape::new();
        let leaves = ModelLeaves::insert_constants(params, cell, basis, &mut tape);
        let xv = tape.constant(6, cell.d_in, x.to_vec());
        let hv = h_prev.map(|h| tape.constant(6, cell.d_h, h.to_vec()));
        let out = cell_step(&mut tape, &leaves, xv, hv).unwrap();
        tape.data(out).to_vec()
    }

    #[test]
    fn zero_weights_halve_the_state() {
        // All-zero weights: z = 1/2, h~ = 0, so h' = h/2 exactly.
        let (cell, mut params, basis) = fixture(1);
        for i in 0..params.len() {
            let p = params.get_mut(i);
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 6, D_IN);
        let h = random_matrix(&mut rng, 6, D_H);
        let out = run_step(&cell, &params, &basis, &x, Some(&h));
        for (o, hv) in out.iter().zip(&h) {
            assert_abs_diff_eq!(*o, hv / 2.0, epsilon = 1e-15);
        }
        // Without state the zero-weight cell outputs exactly zero.
        let out0 = run_step(&cell, &params, &basis, &x, None);
        assert!(out0.iter().all(|&v| v == 0.0));
    }

    /// Direct ndarray re-implementation of the gate equations using the
    /// standalone Chebyshev filter, no tape involved.
    fn oracle_step(
        params: &ParamSet<f64>,
        basis: &SpectralBasis<f64>,
        x: &Array2<f64>,
        h: &Array2<f64>,
    ) -> Array2<f64> {
        let mat = |name: &str| {
            let p = params.get(params.index_of(name).unwrap());
            Array2::from_shape_vec((p.rows, p.cols), p.data.clone()).unwrap()
        };
        let stack = |prefix: &str| -> Vec<Array2<f64>> {
            (0..K).map(|i| mat(&format!("{prefix}.{i}"))).collect()
        };
        let bias = |name: &str, m: Array2<f64>| {
            let b = mat(name);
            m + &b.row(0)
        };
        let cheb = |sig: &Array2<f64>, prefix: &str| chebyshev_apply(basis, sig, &stack(prefix)).unwrap();
        let z = bias("cell.b_z", cheb(x, "cell.w_xz") + cheb(h, "cell.w_hz"))
            .mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let r = bias("cell.b_r", cheb(x, "cell.w_xr") + cheb(h, "cell.w_hr"))
            .mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let cand = bias("cell.b_h", cheb(x, "cell.w_xh") + cheb(&(&r * h), "cell.w_hh"))
            .mapv(f64::tanh);
        &z * h + (1.0 - &z) * &cand
    }

    #[test]
    fn matches_direct_gate_equation_oracle() {
        let (cell, params, basis) = fixture(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 6, D_IN);
        let h = random_matrix(&mut rng, 6, D_H);
        let got = run_step(&cell, &params, &basis, &x, Some(&h));
        let xa = Array2::from_shape_vec((6, D_IN), x).unwrap();
        let ha = Array2::from_shape_vec((6, D_H), h).unwrap();
        let want = oracle_step(&params, &basis, &xa, &ha);
        for (g, w) in got.iter().zip(want.iter()) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-9);
        }
    }

    #[test]
    fn stateless_step_matches_zero_state_step() {
        let (cell, params, basis) = fixture(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_matrix(&mut rng, 6, D_IN);
        let fast = run_step(&cell, &params, &basis, &x, None);
        let full = run_step(&cell, &params, &basis, &x, Some(&vec![0.0; 6 * D_H]));
        for (a, b) in fast.iter().zip(&full) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn gradient_through_cell_matches_finite_differences() {
        let (cell, params, basis) = fixture(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 6, D_IN);
        let h = random_matrix(&mut rng, 6, D_H);
        let target = random_matrix(&mut rng, 6, D_H);

        let loss_for = |params: &ParamSet<f64>| {
            let mut tape = Tape::new();
            let leaves = ModelLeaves::insert_constants(params, &cell, &basis, &mut tape);
            let xv = tape.constant(6, D_IN, x.clone());
            let hv = tape.constant(6, D_H, h.clone());
            let out = cell_step(&mut tape, &leaves, xv, Some(hv)).unwrap();
            let tv = tape.constant(6, D_H, target.clone());
            let loss = tape.mse_loss(out, tv).unwrap();
            tape.data(loss)[0]
        };

        let mut tape = Tape::new();
        let leaves = ModelLeaves::insert_trainable(&params, &cell, &basis, &mut tape);
        let xv = tape.constant(6, D_IN, x.clone());
        let hv = tape.constant(6, D_H, h.clone());
        let out = cell_step(&mut tape, &leaves, xv, Some(hv)).unwrap();
        let tv = tape.constant(6, D_H, target.clone());
        let loss = tape.mse_loss(out, tv).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = params.collect_grads(&tape, &leaves.all, &grads);

        let eps = 1e-5;
        // Probe a handful of entries of every parameter tensor.
        for (pi, grad) in analytic.iter().enumerate() {
            for ei in [0, grad.len() / 2, grad.len() - 1] {
                let mut plus = params.clone();
                plus.get_mut(pi).data[ei] += eps;
                let mut minus = params.clone();
                minus.get_mut(pi).data[ei] -= eps;
                let numeric = (loss_for(&plus) - loss_for(&minus)) / (2.0 * eps);
                let denom = numeric.abs().max(grad[ei].abs()).max(1.0);
                assert!(
                    (numeric - grad[ei]).abs() / denom < 1e-4,
                    "param {pi} entry {ei}: numeric {numeric}, analytic {}",
                    grad[ei]
                );
            }
        }
    }

    #[test]
    fn gate_activations_stay_in_range() {
        let (cell, params, basis) = fixture(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        // Large inputs push the pre-activations hard; outputs must stay in
        // the convex hull of h_prev and tanh's range.
        let x: Vec<f64> = (0..6 * D_IN).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let h: Vec<f64> = (0..6 * D_H).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = run_step(&cell, &params, &basis, &x, Some(&h));
        for &v in &out {
            assert!(v.abs() <= 1.0 + 1e-12, "state escaped [-1, 1]: {v}");
        }
    }

    #[test]
    fn batched_signals_match_per_signal_steps() {
        let (cell, params, basis) = fixture(11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sig_a = random_matrix(&mut rng, 6, D_IN);
        let sig_b = random_matrix(&mut rng, 6, D_IN);
        let mut stacked = sig_a.clone();
        stacked.extend_from_slice(&sig_b);

        let mut tape = Tape::new();
        let leaves = ModelLeaves::insert_constants(&params, &cell, &basis, &mut tape);
        let xv = tape.constant(12, D_IN, stacked);
        let out = cell_step(&mut tape, &leaves, xv, None).unwrap();
        let both = tape.data(out).to_vec();

        let a = run_step(&cell, &params, &basis, &sig_a, None);
        let b = run_step(&cell, &params, &basis, &sig_b, None);
        assert_eq!(&both[..6 * D_H], &a[..]);
        assert_eq!(&both[6 * D_H..], &b[..]);
    }
}
