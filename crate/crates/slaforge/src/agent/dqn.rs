//! Q-network, ε-greedy policy, and the replay-driven training loop.

use std::path::Path;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::forecaster::{read_checkpoint, write_checkpoint, Checkpoint, ForecastError, NamedArray};
use crate::numerics::{clip_grad_norm, AdamConfig, AdamState, ParamSet, Tape, Value};

use super::{AgentError, Environment, ObsSpec, ReplayBuffer, Transition};

/// MLP Q-function: obs -> hidden -> hidden -> actions, ReLU hidden layers.
#[derive(Debug, Clone)]
pub struct QNetwork {
    pub obs_dim: usize,
    pub hidden: usize,
    pub actions: usize,
    pub params: ParamSet<f64>,
}

impl QNetwork {
    pub fn new(obs_dim: usize, hidden: usize, actions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.add_xavier("l1.w", obs_dim, hidden, &mut rng);
        params.add_zeros("l1.b", 1, hidden);
        params.add_xavier("l2.w", hidden, hidden, &mut rng);
        params.add_zeros("l2.b", 1, hidden);
        params.add_xavier("l3.w", hidden, actions, &mut rng);
        params.add_zeros("l3.b", 1, actions);
        QNetwork { obs_dim, hidden, actions, params }
    }

    fn forward_on_tape(&self, tape: &mut Tape<f64>, leaves: &[Value], x: Value) -> Value {
        let h1 = tape.matmul(x, leaves[0]).expect("l1 shapes agree");
        let h1 = tape.add_bias(h1, leaves[1]).expect("l1 bias");
        let h1 = tape.relu(h1);
        let h2 = tape.matmul(h1, leaves[2]).expect("l2 shapes agree");
        let h2 = tape.add_bias(h2, leaves[3]).expect("l2 bias");
        let h2 = tape.relu(h2);
        let q = tape.matmul(h2, leaves[4]).expect("l3 shapes agree");
        tape.add_bias(q, leaves[5]).expect("l3 bias")
    }

    /// Q-values for a batch of states, no gradients; one row per state.
    pub fn forward_batch(&self, states: &[&[f64]]) -> Vec<Vec<f64>> {
        let mut tape = Tape::new();
        let leaves: Vec<Value> = self
            .params
            .iter()
            .map(|p| tape.constant(p.rows, p.cols, p.data.clone()))
            .collect();
        let mut data = Vec::with_capacity(states.len() * self.obs_dim);
        for s in states {
            debug_assert_eq!(s.len(), self.obs_dim);
            data.extend_from_slice(s);
        }
        let x = tape.constant(states.len(), self.obs_dim, data);
        let q = self.forward_on_tape(&mut tape, &leaves, x);
        tape.data(q).chunks(self.actions).map(|c| c.to_vec()).collect()
    }

    pub fn q_values(&self, s: &[f64]) -> Vec<f64> {
        self.forward_batch(&[s]).pop().unwrap()
    }
}

/// Greedy argmax with ties broken toward the lowest action (don't scale).
fn greedy_action(q_values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q_values.iter().enumerate().skip(1) {
        if v > q_values[best] {
            best = i;
        }
    }
    best
}

/// Random action with probability ε, otherwise greedy.
pub fn act_epsilon_greedy(q: &QNetwork, s: &[f64], epsilon: f64, rng: &mut impl Rng) -> usize {
    debug_assert!((0.0..=1.0).contains(&epsilon));
    if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q.actions)
    } else {
        greedy_action(&q.q_values(s))
    }
}

/// `r + γ · max_a Q̂(s', a) · (1 - done)`; with single-step episodes every
/// target collapses to the reward.
pub fn td_target(batch: &[&Transition], q_target: &QNetwork, gamma: f64) -> Vec<f64> {
    let next_states: Vec<&[f64]> = batch.iter().map(|t| t.s_next.as_slice()).collect();
    let next_q = q_target.forward_batch(&next_states);
    batch
        .iter()
        .zip(next_q)
        .map(|(t, q)| {
            if t.done {
                t.r
            } else {
                let max_q = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                t.r + gamma * max_q
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    pub steps: usize,
    /// Transitions collected before the first gradient update.
    pub warmup: usize,
    pub update_every: usize,
    pub target_update: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of total steps over which ε anneals linearly.
    pub eps_fraction: f64,
    pub grad_clip: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    /// Desk-scale run; see [`AgentConfig::full_scale`] for the full-size
    /// constants.
    fn default() -> Self {
        AgentConfig {
            steps: 100_000,
            warmup: 1_000,
            update_every: 4,
            target_update: 500,
            buffer_capacity: 50_000,
            batch_size: 32,
            lr: 1e-4,
            gamma: 0.99,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.1,
            grad_clip: 10.0,
            hidden: 64,
            seed: 0,
        }
    }
}

impl AgentConfig {
    /// Full-scale constants: 5M steps, 50k warmup, 10k target interval,
    /// 1M-slot buffer.
    pub fn full_scale() -> Self {
        AgentConfig {
            steps: 5_000_000,
            warmup: 50_000,
            target_update: 10_000,
            buffer_capacity: 1_000_000,
            ..AgentConfig::default()
        }
    }
}

/// Linear ε anneal from `eps_start` to `eps_end` over the first
/// `eps_fraction` of training, then flat.
pub fn epsilon_at(step: usize, cfg: &AgentConfig) -> f64 {
    let anneal = cfg.steps as f64 * cfg.eps_fraction;
    if (step as f64) >= anneal {
        cfg.eps_end
    } else {
        cfg.eps_start + (cfg.eps_end - cfg.eps_start) * step as f64 / anneal
    }
}

/// One row per environment step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub epsilon: f64,
    /// Mean squared TD error of the gradient step taken at this step, if any.
    pub loss: Option<f64>,
    pub episode_reward: f64,
}

pub type TrainLog = Vec<LogRow>;

/// Deep Q-learning over single-step episodes: ε-greedy collection into a
/// replay buffer, one clipped Adam step on squared TD error every
/// `update_every` steps after warmup, hard target copies on a fixed cadence.
pub fn train_dqn(env: &mut Environment, cfg: &AgentConfig) -> Result<(QNetwork, TrainLog), AgentError> {
    let mut online = QNetwork::new(env.obs_dim(), cfg.hidden, 2, cfg.seed);
    let mut target = online.clone();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    // Decorrelate the policy/sampling stream from weight initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x517a_f04e));
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &online.params);
    let mut log = Vec::with_capacity(cfg.steps);

    let mut obs = env.reset().to_vec();
    for step in 0..cfg.steps {
        let epsilon = epsilon_at(step, cfg);
        let action = act_epsilon_greedy(&online, &obs, epsilon, &mut rng);
        let (r, next, done) = env.step(action)?;
        buffer.push(Transition { s: std::mem::replace(&mut obs, next.clone()), a: action, r, s_next: next, done });

        let mut loss = None;
        if step >= cfg.warmup && (step + 1) % cfg.update_every == 0 && buffer.len() >= cfg.batch_size {
            let batch = buffer.sample(cfg.batch_size, &mut rng);
            let targets = td_target(&batch, &target, cfg.gamma);
            // Single-step identity: a terminal transition bootstraps nothing.
            for (t, tr) in targets.iter().zip(&batch) {
                assert!(!tr.done || *t == tr.r, "terminal TD target must equal the reward");
            }
            let l = gradient_step(&mut online, &mut adam, &batch, &targets, cfg.grad_clip)?;
            if !l.is_finite() {
                return Err(AgentError::Diverged { step });
            }
            loss = Some(l);
        }

        if (step + 1) % cfg.target_update == 0 {
            target.params = online.params.clone();
            debug!("step {step}: target network refreshed");
        }
        log.push(LogRow { step, epsilon, loss, episode_reward: r });
    }

    let tail = &log[log.len().saturating_sub(1000)..];
    let mean: f64 = tail.iter().map(|r| r.episode_reward).sum::<f64>() / tail.len() as f64;
    info!("training finished: mean reward over final {} steps = {mean:.3}", tail.len());
    Ok((online, log))
}

/// One Adam step on the squared TD error of the chosen actions. Returns the
/// mean squared TD error over the batch.
fn gradient_step(
    online: &mut QNetwork,
    adam: &mut AdamState<f64>,
    batch: &[&Transition],
    targets: &[f64],
    grad_clip: f64,
) -> Result<f64, AgentError> {
    let mut tape = Tape::new();
    let leaves = online.params.insert_leaves(&mut tape);
    let mut data = Vec::with_capacity(batch.len() * online.obs_dim);
    for t in batch {
        data.extend_from_slice(&t.s);
    }
    let x = tape.constant(batch.len(), online.obs_dim, data);
    let q = online.forward_on_tape(&mut tape, &leaves, x);

    // Regress only the chosen action's Q-value: the target matrix copies the
    // detached predictions except at (row, a), so other entries get zero
    // gradient.
    let mut target_data = tape.data(q).to_vec();
    for (row, (t, &y)) in batch.iter().zip(targets).enumerate() {
        target_data[row * online.actions + t.a] = y;
    }
    let tv = tape.constant(batch.len(), online.actions, target_data);
    let loss = tape.mse_loss(q, tv)?;
    // The MSE averages over B·actions entries but only B are nonzero.
    let td_mse = tape.data(loss)[0] * online.actions as f64;

    let grads = tape.backward(loss)?;
    let mut grads = online.params.collect_grads(&tape, &leaves, &grads);
    clip_grad_norm(&mut grads, grad_clip);
    adam.step(&mut online.params, &grads);
    Ok(td_mse)
}

/// Greedy-policy evaluation statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEval {
    pub rewards: Vec<f64>,
    pub mean_reward: f64,
    /// Fraction of episodes with non-negative reward. A correct "don't
    /// scale" decision earns exactly 0, so it counts as a success.
    pub positive_fraction: f64,
}

/// Greedy (ε = 0) rollout over freshly sampled episodes.
pub fn evaluate_policy(
    q: &QNetwork,
    env: &mut Environment,
    episodes: usize,
) -> Result<PolicyEval, AgentError> {
    let mut rewards = Vec::with_capacity(episodes);
    let mut obs = env.reset().to_vec();
    for _ in 0..episodes {
        let action = greedy_action(&q.q_values(&obs));
        let (r, next, _) = env.step(action)?;
        rewards.push(r);
        obs = next;
    }
    let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let positive_fraction =
        rewards.iter().filter(|&&r| r >= 0.0).count() as f64 / rewards.len() as f64;
    Ok(PolicyEval { rewards, mean_reward, positive_fraction })
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentMeta {
    obs_dim: usize,
    hidden: usize,
    actions: usize,
    obs_spec: ObsSpec,
}

pub fn save_agent(path: &Path, q: &QNetwork, obs_spec: ObsSpec) -> Result<(), AgentError> {
    let meta = AgentMeta { obs_dim: q.obs_dim, hidden: q.hidden, actions: q.actions, obs_spec };
    let arrays = q
        .params
        .iter()
        .map(|p| NamedArray { name: p.name.clone(), rows: p.rows, cols: p.cols, data: p.data.clone() })
        .collect();
    let ckpt = Checkpoint {
        kind: "agent".into(),
        meta: serde_json::to_value(&meta).expect("metadata serializes"),
        arrays,
    };
    write_checkpoint(path, &ckpt)?;
    Ok(())
}

pub fn load_agent(path: &Path) -> Result<(QNetwork, ObsSpec), AgentError> {
    let ckpt = read_checkpoint(path)?;
    if ckpt.kind != "agent" {
        return Err(AgentError::Forecast(ForecastError::BadCheckpoint(format!(
            "expected an agent checkpoint, found '{}'",
            ckpt.kind
        ))));
    }
    let meta: AgentMeta = serde_json::from_value(ckpt.meta.clone())
        .map_err(|e| AgentError::Forecast(ForecastError::BadCheckpoint(e.to_string())))?;
    let mut q = QNetwork::new(meta.obs_dim, meta.hidden, meta.actions, 0);
    for i in 0..q.params.len() {
        let p = q.params.get_mut(i);
        let a = ckpt.array(&p.name).ok_or_else(|| {
            AgentError::Forecast(ForecastError::BadCheckpoint(format!("missing tensor '{}'", p.name)))
        })?;
        if a.rows != p.rows || a.cols != p.cols {
            return Err(AgentError::Forecast(ForecastError::BadCheckpoint(format!(
                "tensor '{}' is {}x{}, expected {}x{}",
                p.name, a.rows, a.cols, p.rows, p.cols
            ))));
        }
        p.data = a.data.clone();
    }
    Ok((q, meta.obs_spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Episode, EpisodeSet};
    use approx::assert_abs_diff_eq;

    fn labeled_env(n: usize, violation_every: usize, seed: u64) -> Environment {
        // Observation directly encodes the label, so the mapping is learnable
        // by any function approximator.
        let episodes = (0..n)
            .map(|i| {
                let v = i % violation_every == 0;
                Episode { obs: vec![if v { 1.0 } else { 0.0 }, 0.5], sla_violated: v, target_row: i }
            })
            .collect();
        Environment::new(EpisodeSet { episodes, obs_dim: 2 }, seed).unwrap()
    }

    #[test]
    fn forward_matches_scalar_loop_oracle() {
        let q = QNetwork::new(3, 4, 2, 5);
        let s = [0.3, -0.7, 1.1];
        let got = q.q_values(&s);

        let p = |name: &str| q.params.get(q.params.index_of(name).unwrap());
        let dense = |x: &[f64], w: &crate::numerics::Param<f64>, b: &crate::numerics::Param<f64>| {
            (0..w.cols)
                .map(|j| {
                    b.data[j] + (0..w.rows).map(|i| x[i] * w.data[i * w.cols + j]).sum::<f64>()
                })
                .collect::<Vec<f64>>()
        };
        let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<f64>>();
        let h1 = relu(dense(&s, p("l1.w"), p("l1.b")));
        let h2 = relu(dense(&h1, p("l2.w"), p("l2.b")));
        let want = dense(&h2, p("l3.w"), p("l3.b"));
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn greedy_ties_break_toward_no_scale() {
        assert_eq!(greedy_action(&[0.5, 0.5]), 0);
        assert_eq!(greedy_action(&[0.3, 0.7]), 1);
        assert_eq!(greedy_action(&[0.7, 0.3]), 0);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let q = QNetwork::new(2, 4, 2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let ones: usize = (0..n)
            .map(|_| act_epsilon_greedy(&q, &[0.0, 0.0], 1.0, &mut rng))
            .sum();
        // χ² with 1 dof at α=0.001 is 10.83; |ones - n/2| < 165 suffices.
        let chi2 = (ones as f64 - n as f64 / 2.0).powi(2) / (n as f64 / 4.0);
        assert!(chi2 < 10.83, "action counts too skewed: {ones}/{n}");
    }

    #[test]
    fn td_targets_equal_rewards_when_done() {
        let q = QNetwork::new(2, 4, 2, 3);
        let t = |r: f64, done: bool| Transition {
            s: vec![0.1, 0.2],
            a: 1,
            r,
            s_next: vec![0.3, 0.4],
            done,
        };
        let terminal = [t(20.0, true), t(-10.0, true), t(0.0, true)];
        let refs: Vec<&Transition> = terminal.iter().collect();
        assert_eq!(td_target(&refs, &q, 0.99), vec![20.0, -10.0, 0.0]);

        // Non-terminal transitions bootstrap through the target network.
        let open = [t(0.0, false)];
        let refs: Vec<&Transition> = open.iter().collect();
        let max_q = q.q_values(&[0.3, 0.4]).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let got = td_target(&refs, &q, 0.99);
        assert_abs_diff_eq!(got[0], 0.99 * max_q, epsilon = 1e-12);
    }

    #[test]
    fn epsilon_schedule_endpoints_and_midpoint() {
        let cfg = AgentConfig { steps: 1000, ..AgentConfig::default() };
        assert_abs_diff_eq!(epsilon_at(0, &cfg), 1.0);
        assert_abs_diff_eq!(epsilon_at(50, &cfg), 0.525);
        assert_abs_diff_eq!(epsilon_at(100, &cfg), 0.05);
        assert_abs_diff_eq!(epsilon_at(999, &cfg), 0.05);
    }

    #[test]
    fn no_updates_before_warmup() {
        let mut env = labeled_env(50, 5, 0);
        let cfg = AgentConfig {
            steps: 200,
            warmup: 1_000,
            target_update: 1_000_000,
            ..AgentConfig::default()
        };
        let (q, log) = train_dqn(&mut env, &cfg).unwrap();
        assert!(log.iter().all(|r| r.loss.is_none()));
        // With no gradient steps the online weights are untouched.
        let fresh = QNetwork::new(env.obs_dim(), cfg.hidden, 2, cfg.seed);
        assert_eq!(q.params, fresh.params);
    }

    #[test]
    fn learns_the_labeled_toy_problem() {
        let mut env = labeled_env(200, 5, 1);
        let cfg = AgentConfig {
            steps: 4_000,
            warmup: 200,
            target_update: 200,
            lr: 1e-2,
            hidden: 16,
            seed: 2,
            ..AgentConfig::default()
        };
        let (q, log) = train_dqn(&mut env, &cfg).unwrap();
        assert_eq!(log.len(), cfg.steps);
        let eval = evaluate_policy(&q, &mut env, 100).unwrap();
        assert!(
            eval.positive_fraction >= 0.95,
            "policy failed the toy problem: {}",
            eval.positive_fraction
        );
    }

    #[test]
    fn training_is_deterministic_under_a_seed() {
        let run = || {
            let mut env = labeled_env(100, 4, 9);
            let cfg = AgentConfig {
                steps: 600,
                warmup: 100,
                target_update: 100,
                lr: 1e-3,
                hidden: 8,
                seed: 7,
                ..AgentConfig::default()
            };
            train_dqn(&mut env, &cfg).unwrap()
        };
        let (q1, log1) = run();
        let (q2, log2) = run();
        assert_eq!(q1.params, q2.params);
        assert_eq!(log1, log2);
    }

    #[test]
    fn checkpoint_round_trip_preserves_q_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.ckpt");
        let q = QNetwork::new(5, 8, 2, 11);
        save_agent(&path, &q, ObsSpec::FullHorizon).unwrap();
        let (loaded, spec) = load_agent(&path).unwrap();
        assert_eq!(spec, ObsSpec::FullHorizon);
        let s = [0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(q.q_values(&s), loaded.q_values(&s));
    }

    #[test]
    fn oracle_and_always_scale_policies_bound_the_reward() {
        // Oracle: act on the true label; never negative, +20 exactly at the
        // violation rate.
        let mut env = labeled_env(400, 4, 13);
        let n = 2_000;
        let mut pos20 = 0;
        env.reset();
        for _ in 0..n {
            let label = env.active_label().unwrap();
            let (r, _, _) = env.step(usize::from(label)).unwrap();
            assert!(r >= 0.0);
            if r == 20.0 {
                pos20 += 1;
            }
        }
        let rate = pos20 as f64 / n as f64;
        assert!((rate - 0.25).abs() < 0.05, "violation hit rate {rate}");

        // Always-scale on violation-free data: every reward is -5.
        let episodes = (0..50)
            .map(|i| Episode { obs: vec![0.0, 0.5], sla_violated: false, target_row: i })
            .collect();
        let mut clean = Environment::new(EpisodeSet { episodes, obs_dim: 2 }, 14).unwrap();
        clean.reset();
        for _ in 0..100 {
            let (r, _, _) = clean.step(1).unwrap();
            assert_eq!(r, -5.0);
        }
    }
}
