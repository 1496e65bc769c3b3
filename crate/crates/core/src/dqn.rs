//! DQN scheduler: ε-greedy acting over the enumerated joint action space,
//! uniform experience replay and a periodically synchronised target network.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{ActionError, ActionSpace, JointAction, DEFAULT_ACTION_CAP};
use crate::env::{run_episode, EnvError, Environment, NetworkState};
use crate::nn::{self, AdamConfig, AdamState, Mlp, NnError, QTarget};
use crate::rng::{derive_seed, labels, stream, SimRng};
use crate::schedulers::{PolicyView, Scheduler};

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("training diverged in episode {episode}: parameters became non-finite")]
    Diverged { episode: usize },
    #[error("invalid DQN configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Actions(#[from] ActionError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("writing learning curve: {0}")]
    Csv(#[from] csv::Error),
    #[error("reading DQN config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// The next state lies past the last slot of the episode.
    pub terminal: bool,
}

/// Bounded FIFO of experiences.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
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

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }

    /// Uniform indices, drawn with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<usize> {
        (0..count).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    /// Fraction of all episodes over which ε falls linearly to `end`.
    pub decay_fraction: f64,
    pub total_episodes: usize,
}

/// Linear decay from `start` to `end`, constant afterwards.
pub fn epsilon_at(schedule: &EpsilonSchedule, episode: usize) -> f64 {
    let horizon = schedule.decay_fraction * schedule.total_episodes as f64;
    if horizon <= 0.0 {
        return schedule.end;
    }
    let progress = episode as f64 / horizon;
    if progress >= 1.0 {
        return schedule.end;
    }
    schedule.start + (schedule.end - schedule.start) * progress
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSync {
    /// Copy θ into θ⁻ every `target_sync_period` optimizer steps.
    OptimizerSteps,
    /// Copy θ into θ⁻ after every `target_sync_period` episodes.
    Episodes,
}

fn d_lr() -> f64 {
    0.001
}
fn d_decay_rate() -> f64 {
    0.95
}
fn d_decay_steps() -> u64 {
    10_000
}
fn d_gamma() -> f64 {
    1.0
}
fn d_eps_start() -> f64 {
    1.0
}
fn d_eps_end() -> f64 {
    0.05
}
fn d_eps_fraction() -> f64 {
    0.5
}
fn d_replay() -> usize {
    50_000
}
fn d_batch() -> usize {
    16
}
fn d_sync_period() -> u64 {
    10
}
fn d_sync() -> TargetSync {
    TargetSync::OptimizerSteps
}
fn d_episodes() -> usize {
    1_000_000
}
fn d_hidden() -> Vec<usize> {
    vec![1024, 1024]
}
fn d_true() -> bool {
    true
}
fn d_eval_episodes() -> usize {
    200
}
fn d_cap() -> u64 {
    DEFAULT_ACTION_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_decay_rate")]
    pub lr_decay_rate: f64,
    #[serde(default = "d_decay_steps")]
    pub lr_decay_steps: u64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_eps_start")]
    pub epsilon_start: f64,
    #[serde(default = "d_eps_end")]
    pub epsilon_end: f64,
    #[serde(default = "d_eps_fraction")]
    pub epsilon_decay_fraction: f64,
    #[serde(default = "d_replay")]
    pub replay_capacity: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_sync_period")]
    pub target_sync_period: u64,
    #[serde(default = "d_sync")]
    pub target_sync: TargetSync,
    #[serde(default = "d_episodes")]
    pub episodes: usize,
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    /// Divide every observation entry by the horizon before the network.
    #[serde(default = "d_true")]
    pub normalize_inputs: bool,
    /// Positive factor applied to rewards before they enter TD targets;
    /// unset means 1 / (M·T).
    #[serde(default)]
    pub reward_scale: Option<f64>,
    /// Greedy evaluation every this many episodes; 0 disables it.
    #[serde(default)]
    pub eval_interval: usize,
    #[serde(default = "d_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "d_cap")]
    pub action_cap: u64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl DqnConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, DqnError> {
        let cfg: DqnConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DqnError> {
        let bad = |m: &str| Err(DqnError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.epsilon_end)
            || !(0.0..=1.0).contains(&self.epsilon_start)
            || self.epsilon_end > self.epsilon_start
        {
            return bad("need 0 <= epsilon_end <= epsilon_start <= 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return bad("need 1 <= batch_size <= replay_capacity");
        }
        if self.target_sync_period == 0 {
            return bad("target_sync_period must be at least 1");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if self.reward_scale.is_some_and(|s| !(s > 0.0 && s.is_finite())) {
            return bad("reward_scale must be positive");
        }
        Ok(())
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            decay_fraction: self.epsilon_decay_fraction,
            total_episodes: self.episodes,
        }
    }

    pub fn reward_scale_for(&self, env: &Environment) -> f64 {
        self.reward_scale
            .unwrap_or_else(|| 1.0 / (env.num_devices() as f64 * env.horizon() as f64))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            decay_rate: self.lr_decay_rate,
            decay_steps: self.lr_decay_steps,
            ..AdamConfig::default()
        }
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice over `num_actions` network outputs.
pub fn select_action<R: Rng + ?Sized>(
    net: &Mlp,
    state: &[f64],
    epsilon: f64,
    num_actions: usize,
    rng: &mut R,
) -> Result<usize, NnError> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..num_actions));
    }
    Ok(argmax(&net.forward(state)?))
}

/// `r` for terminal transitions, else `r + γ max_a Q(x', a | θ⁻)`.
pub fn td_target(exp: &Experience, target_net: &Mlp, gamma: f64) -> Result<f64, NnError> {
    if exp.terminal || gamma == 0.0 {
        return Ok(exp.reward);
    }
    let q = target_net.forward(&exp.next_state)?;
    Ok(exp.reward + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

fn encode(state: &NetworkState, horizon: u32, normalize: bool) -> Vec<f64> {
    let mut x = state.observe();
    if normalize {
        let t = horizon as f64;
        for v in &mut x {
            *v /= t;
        }
    }
    x
}

/// Greedy scheduler driven by a trained network.
#[derive(Debug, Clone)]
pub struct DqnPolicy {
    pub net: Mlp,
    pub space: ActionSpace,
    pub horizon: u32,
    pub normalize_inputs: bool,
}

impl DqnPolicy {
    pub fn action_index(&self, view: &PolicyView<'_>) -> usize {
        let state = NetworkState {
            t: view.t,
            aoi_uav: view.aoi_uav.to_vec(),
            aoi_tbs: view.aoi_tbs.to_vec(),
            stored_gen: Vec::new(),
        };
        let q = self
            .net
            .forward(&encode(&state, self.horizon, self.normalize_inputs))
            .expect("network matches the state size");
        argmax(&q)
    }
}

impl Scheduler for DqnPolicy {
    fn name(&self) -> &str {
        "dqn"
    }

    fn decide(&mut self, view: &PolicyView<'_>, _rng: &mut SimRng) -> JointAction {
        let i = self.action_index(view);
        self.space.action_at(i as u64).expect("argmax is a valid index")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub epsilon: f64,
    pub train_return: f64,
    pub eval_avg_aoi_eq10: Option<f64>,
    pub eval_avg_aoi_per_slot: Option<f64>,
}

pub fn write_curve<W: Write>(curve: &[CurvePoint], out: W) -> Result<(), DqnError> {
    let mut w = csv::Writer::from_writer(out);
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean summed and per-slot base-station AoI of greedy rollouts.
pub fn evaluate(env: &Environment, scheduler: &mut dyn Scheduler, episodes: usize, seed: u64) -> Result<(f64, f64), EnvError> {
    let mut sum = 0.0;
    for i in 0..episodes {
        let ep = run_episode(env, scheduler, derive_seed(seed, i as u64), false)?;
        sum += ep.metrics.finalize(env.num_devices(), env.horizon())?.aoi_tbs;
    }
    let mean = sum / episodes.max(1) as f64;
    Ok((mean, mean / env.horizon() as f64))
}

/// Owns the online network, its target copy, the optimizer and the replay
/// memory for one training run.
pub struct Trainer {
    pub config: DqnConfig,
    pub env: Environment,
    pub space: ActionSpace,
    pub net: Mlp,
    pub target: Mlp,
    pub adam: AdamState,
    pub memory: ReplayMemory,
    explore_rng: SimRng,
    replay_rng: SimRng,
    channel_rng: SimRng,
}

impl Trainer {
    pub fn new(env: Environment, config: DqnConfig) -> Result<Self, DqnError> {
        config.validate()?;
        let space = ActionSpace::with_cap(
            &env.topology,
            env.scenario.sample_channels,
            env.scenario.update_channels,
            config.action_cap,
        )?;
        let mut sizes = vec![2 * env.num_devices() + 1];
        sizes.extend(&config.hidden);
        sizes.push(space.len() as usize);
        let net = Mlp::new(&sizes, &mut stream(config.seed, labels::NET_INIT));
        let adam = AdamState::new(&net, config.adam());
        Ok(Trainer {
            target: net.clone(),
            net,
            adam,
            memory: ReplayMemory::new(config.replay_capacity),
            explore_rng: stream(config.seed, labels::EXPLORATION),
            replay_rng: stream(config.seed, labels::REPLAY),
            channel_rng: stream(config.seed, labels::CHANNEL),
            space,
            env,
            config,
        })
    }

    pub fn encode(&self, state: &NetworkState) -> Vec<f64> {
        encode(state, self.env.horizon(), self.config.normalize_inputs)
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.adam.step
    }

    /// One optimizer step on a uniform mini-batch; `None` while the memory
    /// holds fewer than `batch_size` experiences.
    pub fn learn(&mut self) -> Result<Option<f64>, DqnError> {
        let b = self.config.batch_size;
        if self.memory.len() < b {
            return Ok(None);
        }
        let idx = self.memory.sample_indices(b, &mut self.replay_rng);
        let mut batch = Vec::with_capacity(b);
        for i in idx {
            let e = self.memory.get(i).expect("index in range");
            batch.push(QTarget {
                state: e.state.clone(),
                action: e.action,
                target: td_target(e, &self.target, self.config.gamma)?,
            });
        }
        let loss = nn::backward_and_step(&mut self.net, &mut self.adam, &batch)?;
        if self.config.target_sync == TargetSync::OptimizerSteps
            && self.adam.step.is_multiple_of(self.config.target_sync_period)
        {
            self.target.clone_from(&self.net);
        }
        Ok(Some(loss))
    }

    /// One training episode; returns the unscaled return.
    pub fn run_episode(&mut self, episode: usize) -> Result<f64, DqnError> {
        let eps = epsilon_at(&self.config.epsilon_schedule(), episode);
        let horizon = self.env.horizon();
        let mut state = self.env.reset();
        let scale = self.config.reward_scale_for(&self.env);
        let mut ret = 0.0;
        while state.t <= horizon {
            let x = self.encode(&state);
            let a = select_action(&self.net, &x, eps, self.space.len() as usize, &mut self.explore_rng)?;
            let action = self.space.action_at(a as u64)?;
            let tr = self.env.step(&state, &action, &mut self.channel_rng)?;
            ret += tr.reward as f64;
            self.memory.push(Experience {
                state: x,
                action: a,
                reward: tr.reward as f64 * scale,
                next_state: self.encode(&tr.state),
                terminal: tr.state.t > horizon,
            });
            match self.learn() {
                Err(DqnError::Nn(NnError::NonFiniteGradient)) => return Err(DqnError::Diverged { episode }),
                other => {
                    other?;
                }
            }
            if !self.net.is_finite() {
                return Err(DqnError::Diverged { episode });
            }
            state = tr.state;
        }
        if self.config.target_sync == TargetSync::Episodes
            && (episode as u64 + 1).is_multiple_of(self.config.target_sync_period)
        {
            self.target.clone_from(&self.net);
        }
        Ok(ret)
    }

    pub fn policy(&self) -> DqnPolicy {
        DqnPolicy {
            net: self.net.clone(),
            space: self.space.clone(),
            horizon: self.env.horizon(),
            normalize_inputs: self.config.normalize_inputs,
        }
    }

    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<(f64, f64), DqnError> {
        Ok(evaluate(&self.env, &mut self.policy(), episodes, seed)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: DqnPolicy,
    pub adam: AdamState,
    pub curve: Vec<CurvePoint>,
}

/// Runs the full training loop of `config.episodes` episodes.
pub fn train(env: Environment, config: DqnConfig) -> Result<TrainOutput, DqnError> {
    let mut trainer = Trainer::new(env, config)?;
    let eval_seed = derive_seed(trainer.config.seed, labels::EVALUATION);
    let schedule = trainer.config.epsilon_schedule();
    let mut curve = Vec::with_capacity(trainer.config.episodes);
    for episode in 0..trainer.config.episodes {
        let train_return = trainer.run_episode(episode)?;
        let interval = trainer.config.eval_interval;
        let last = episode + 1 == trainer.config.episodes;
        let eval = if interval > 0 && ((episode + 1) % interval == 0 || last) {
            Some(trainer.evaluate(trainer.config.eval_episodes, eval_seed)?)
        } else {
            None
        };
        curve.push(CurvePoint {
            episode,
            epsilon: epsilon_at(&schedule, episode),
            train_return,
            eval_avg_aoi_eq10: eval.map(|e| e.0),
            eval_avg_aoi_per_slot: eval.map(|e| e.1),
        });
    }
    Ok(TrainOutput {
        policy: trainer.policy(),
        adam: trainer.adam,
        curve,
    })
}

impl TrainOutput {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DqnError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        nn::save_checkpoint(f, &self.policy.net, Some(&self.adam))?;
        Ok(())
    }
}

/// Rebuilds a greedy policy from a checkpoint for the given environment.
pub fn load_policy(path: impl AsRef<Path>, env: &Environment, config: &DqnConfig) -> Result<DqnPolicy, DqnError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let (net, _) = nn::load_checkpoint(f)?;
    let space = ActionSpace::with_cap(
        &env.topology,
        env.scenario.sample_channels,
        env.scenario.update_channels,
        config.action_cap,
    )?;
    if net.input_size() != 2 * env.num_devices() + 1 || net.output_size() as u64 != space.len() {
        return Err(DqnError::Config(format!(
            "checkpoint network {:?} does not fit this scenario",
            net.sizes()
        )));
    }
    Ok(DqnPolicy {
        net,
        space,
        horizon: env.horizon(),
        normalize_inputs: config.normalize_inputs,
    })
}
