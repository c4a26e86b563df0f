//! Single-step SLA decision environment and deep Q-learning: forecast
//! snapshots in, scale-up decisions out, rewarded against ground-truth
//! SLA labels.

mod dqn;

pub use dqn::{
    act_epsilon_greedy, epsilon_at, evaluate_policy, load_agent, save_agent, td_target, train_dqn,
    AgentConfig, LogRow, PolicyEval, QNetwork, TrainLog,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::forecaster::{ForecastError, ForecastModel};
use crate::sla::{evaluate_sla, Frame, SlaError, SloRuleSet};
use crate::telemetry::{make_windows, QuantileTransform, TelemetryError, TelemetryTable};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no active episode; call reset first")]
    NoActiveEpisode,
    #[error("no episodes available")]
    EmptyEpisodes,
    #[error("training loss diverged at step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Sla(#[from] SlaError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

/// Reward for a scale decision against the true SLA bit.
pub fn reward(action: usize, sla_violated: bool) -> f64 {
    match (action, sla_violated) {
        (1, true) => 20.0,
        (0, true) => -10.0,
        (1, false) => -5.0,
        _ => 0.0,
    }
}

/// Which slice of the forecast becomes the observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsSpec {
    /// First forecast step flattened: nodes x metrics dims.
    FirstStep,
    /// All forecast steps flattened: horizon x nodes x metrics dims.
    FullHorizon,
}

/// One decision point: a forecast snapshot and the true SLA bit at the
/// forecast target time.
#[derive(Debug, Clone)]
pub struct Episode {
    pub obs: Vec<f64>,
    pub sla_violated: bool,
    /// Source table row of the forecast target, for traceability.
    pub target_row: usize,
}

#[derive(Debug, Clone)]
pub struct EpisodeSet {
    pub episodes: Vec<Episode>,
    pub obs_dim: usize,
}

impl EpisodeSet {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn violation_rate(&self) -> f64 {
        let v = self.episodes.iter().filter(|e| e.sla_violated).count();
        v as f64 / self.episodes.len() as f64
    }
}

/// Builds the decision dataset: the forecaster supplies observations
/// (transformed space), the rules label the ground-truth row the first
/// forecast step points at.
pub fn build_episodes(
    model: &ForecastModel,
    transform: &QuantileTransform,
    table: &TelemetryTable,
    rules: &SloRuleSet,
    obs: ObsSpec,
) -> Result<EpisodeSet, AgentError> {
    let transformed = transform.transform_table(table)?;
    let ws = make_windows(&transformed, model.history, model.horizon)?;
    let obs_dim = match obs {
        ObsSpec::FirstStep => model.node_count() * model.metrics,
        ObsSpec::FullHorizon => model.horizon * model.node_count() * model.metrics,
    };
    let mut episodes = Vec::with_capacity(ws.len());
    for chunk in ws.windows.chunks(64) {
        let preds = model.forward_batch(chunk)?;
        for (pred, window) in preds.iter().zip(chunk) {
            let steps = match obs {
                ObsSpec::FirstStep => 1,
                ObsSpec::FullHorizon => model.horizon,
            };
            let flat: Vec<f64> = pred.slice(ndarray::s![..steps, .., ..]).iter().copied().collect();
            debug_assert_eq!(flat.len(), obs_dim);
            let state = evaluate_sla(rules, &Frame::new(table, window.target_row))?;
            episodes.push(Episode { obs: flat, sla_violated: state.sla, target_row: window.target_row });
        }
    }
    if episodes.is_empty() {
        return Err(AgentError::EmptyEpisodes);
    }
    Ok(EpisodeSet { episodes, obs_dim })
}

/// Single-step episode environment over a fixed decision dataset; indices
/// are drawn uniformly with a seeded generator.
#[derive(Debug, Clone)]
pub struct Environment {
    set: EpisodeSet,
    rng: ChaCha8Rng,
    current: Option<usize>,
}

impl Environment {
    pub fn new(set: EpisodeSet, seed: u64) -> Result<Self, AgentError> {
        if set.is_empty() {
            return Err(AgentError::EmptyEpisodes);
        }
        Ok(Environment { set, rng: ChaCha8Rng::seed_from_u64(seed), current: None })
    }

    pub fn obs_dim(&self) -> usize {
        self.set.obs_dim
    }

    pub fn episode_count(&self) -> usize {
        self.set.len()
    }

    /// Samples a fresh episode and returns its observation.
    pub fn reset(&mut self) -> &[f64] {
        let idx = self.rng.gen_range(0..self.set.len());
        self.current = Some(idx);
        &self.set.episodes[idx].obs
    }

    /// Applies the action to the active episode. The episode always
    /// terminates; `s_next` is the next sampled observation.
    pub fn step(&mut self, action: usize) -> Result<(f64, Vec<f64>, bool), AgentError> {
        let idx = self.current.take().ok_or(AgentError::NoActiveEpisode)?;
        let r = reward(action, self.set.episodes[idx].sla_violated);
        let next = self.reset().to_vec();
        Ok((r, next, true))
    }

    /// True SLA bit of the active episode; used for oracle baselines.
    pub fn active_label(&self) -> Result<bool, AgentError> {
        let idx = self.current.ok_or(AgentError::NoActiveEpisode)?;
        Ok(self.set.episodes[idx].sla_violated)
    }
}

/// One stored step of experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling; oldest entries are
/// overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer { items: Vec::with_capacity(capacity.min(4096)), capacity, next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform sample with replacement; requires at least `n` stored items.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<&Transition> {
        assert!(self.items.len() >= n, "buffer holds {} < minibatch {n}", self.items.len());
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reward_table_is_exact() {
        assert_eq!(reward(1, true), 20.0);
        assert_eq!(reward(0, true), -10.0);
        assert_eq!(reward(1, false), -5.0);
        assert_eq!(reward(0, false), 0.0);
    }

    proptest! {
        #[test]
        fn reward_is_total_and_in_table(action in 0usize..2, sla in any::<bool>()) {
            let r = reward(action, sla);
            prop_assert!([20.0, -10.0, -5.0, 0.0].contains(&r));
            // Positive iff the scale-up was needed.
            prop_assert_eq!(r > 0.0, action == 1 && sla);
        }
    }

    fn toy_set(n: usize) -> EpisodeSet {
        let episodes = (0..n)
            .map(|i| Episode { obs: vec![i as f64], sla_violated: i % 4 == 0, target_row: i })
            .collect();
        EpisodeSet { episodes, obs_dim: 1 }
    }

    #[test]
    fn step_without_reset_errors() {
        let mut env = Environment::new(toy_set(8), 0).unwrap();
        assert!(matches!(env.step(0), Err(AgentError::NoActiveEpisode)));
        env.reset();
        let (_, _, done) = env.step(0).unwrap();
        assert!(done);
    }

    #[test]
    fn step_reward_matches_active_label() {
        let mut env = Environment::new(toy_set(16), 3).unwrap();
        env.reset();
        for _ in 0..200 {
            let label = env.active_label().unwrap();
            let (r, _, _) = env.step(1).unwrap();
            assert_eq!(r, if label { 20.0 } else { -5.0 });
        }
    }

    #[test]
    fn sampling_is_seeded_and_uniformish() {
        let mut a = Environment::new(toy_set(10), 7).unwrap();
        let mut b = Environment::new(toy_set(10), 7).unwrap();
        let mut counts = [0usize; 10];
        for _ in 0..5000 {
            let oa = a.reset()[0];
            let ob = b.reset()[0];
            assert_eq!(oa, ob);
            counts[oa as usize] += 1;
        }
        // Every index is hit roughly uniformly (expected 500 each).
        assert!(counts.iter().all(|&c| c > 350 && c < 650), "{counts:?}");
    }

    #[test]
    fn buffer_evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(3);
        let t = |v: f64| Transition { s: vec![v], a: 0, r: 0.0, s_next: vec![], done: true };
        for v in 0..5 {
            buf.push(t(v as f64));
        }
        assert_eq!(buf.len(), 3);
        let held: Vec<f64> = buf.items.iter().map(|t| t.s[0]).collect();
        // Slots now hold 3, 4, 2 — 0 and 1 were evicted.
        assert!(held.contains(&2.0) && held.contains(&3.0) && held.contains(&4.0));
    }

    proptest! {
        #[test]
        fn buffer_never_exceeds_capacity(cap in 1usize..50, pushes in 0usize..200) {
            let mut buf = ReplayBuffer::new(cap);
            for v in 0..pushes {
                buf.push(Transition { s: vec![v as f64], a: 0, r: 0.0, s_next: vec![], done: true });
            }
            prop_assert_eq!(buf.len(), pushes.min(cap));
        }
    }

    #[test]
    fn episodes_from_forecaster_have_expected_dims() {
        use crate::forecaster::ForecastMode;
        use crate::telemetry::{synthesize, SynthConfig, METRIC_COUNT};
        use crate::topology::build_default_graph;

        let g = build_default_graph();
        let cfg = SynthConfig { seed: 9, steps: 120, burst_rate: 0.05, burst_magnitude: 1.0 };
        let (table, _) = synthesize(&g, &cfg).unwrap();
        let qt = QuantileTransform::fit_with(table.values().view(), 50);
        let model = ForecastModel::new(&g, 2, 8, 4, 4, METRIC_COUNT, ForecastMode::Single, 0).unwrap();
        let rules = SloRuleSet::default_rules();

        let set = build_episodes(&model, &qt, &table, &rules, ObsSpec::FirstStep).unwrap();
        assert_eq!(set.obs_dim, 6 * METRIC_COUNT);
        assert_eq!(set.len(), 120 - 4 - 4 + 1);
        assert!(set.episodes.iter().all(|e| e.obs.len() == set.obs_dim));

        let full = build_episodes(&model, &qt, &table, &rules, ObsSpec::FullHorizon).unwrap();
        assert_eq!(full.obs_dim, 4 * 6 * METRIC_COUNT);

        // Labels match direct rule evaluation on the ground-truth table.
        for e in &set.episodes {
            let direct = evaluate_sla(&rules, &Frame::new(&table, e.target_row)).unwrap();
            assert_eq!(e.sla_violated, direct.sla);
        }
    }
}
