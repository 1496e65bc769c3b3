//! Slotted AoI dynamics at the UAVs and at the base station.
//!
//! Within one slot the update leg reads the UAV state as it was at the start
//! of the slot, so a packet sampled in slot `t` reaches the base station no
//! earlier than slot `t + 1`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{check_feasibility, JointAction, Violation};
use crate::model::{draw_delivery, freshest_gen_time, ScenarioConfig, Topology};
use crate::rng::{labels, stream, SimRng};
use crate::schedulers::{PolicyView, Scheduler};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("infeasible action: {}", list(.0))]
    Infeasible(Vec<Violation>),
    #[error("episode already finished at slot {t} (horizon {horizon})")]
    EpisodeOver { t: u32, horizon: u32 },
    #[error("episode incomplete: {recorded} of {horizon} slots recorded")]
    Incomplete { recorded: u32, horizon: u32 },
    #[error("writing trace: {0}")]
    Trace(#[from] csv::Error),
}

fn list(vs: &[Violation]) -> String {
    vs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkState {
    pub t: u32,
    pub aoi_uav: Vec<u32>,
    pub aoi_tbs: Vec<u32>,
    /// Generation slot of the packet each device has stored at its UAV.
    pub stored_gen: Vec<u32>,
}

impl NetworkState {
    pub fn initial(num_devices: usize) -> Self {
        NetworkState {
            t: 1,
            aoi_uav: vec![1; num_devices],
            aoi_tbs: vec![1; num_devices],
            stored_gen: vec![0; num_devices],
        }
    }

    pub fn sum_tbs(&self) -> u64 {
        self.aoi_tbs.iter().map(|&a| a as u64).sum()
    }

    pub fn sum_uav(&self) -> u64 {
        self.aoi_uav.iter().map(|&a| a as u64).sum()
    }

    /// `(t, aoi_uav[..], aoi_tbs[..])` as a flat vector.
    pub fn observe(&self) -> Vec<f64> {
        std::iter::once(self.t as f64)
            .chain(self.aoi_uav.iter().map(|&a| a as f64))
            .chain(self.aoi_tbs.iter().map(|&a| a as f64))
            .collect()
    }
}

/// Which scheduled transmissions got through in one slot, per device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deliveries {
    pub sampled: Vec<bool>,
    pub updated: Vec<bool>,
}

impl Deliveries {
    pub fn all_succeed(action: &JointAction, num_devices: usize) -> Self {
        let mut d = Deliveries {
            sampled: vec![false; num_devices],
            updated: vec![false; num_devices],
        };
        for m in action.sampled_devices() {
            d.sampled[m] = true;
        }
        for &m in &action.update_set {
            d.updated[m] = true;
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: NetworkState,
    /// Negative total base-station AoI of the post-transition state.
    pub reward: i64,
    pub deliveries: Deliveries,
}

#[derive(Debug, Clone)]
pub struct Environment {
    pub scenario: ScenarioConfig,
    pub topology: Topology,
}

impl Environment {
    pub fn new(scenario: ScenarioConfig, topology: Topology) -> Self {
        Environment { scenario, topology }
    }

    pub fn num_devices(&self) -> usize {
        self.scenario.num_devices
    }

    pub fn horizon(&self) -> u32 {
        self.scenario.horizon
    }

    pub fn reset(&self) -> NetworkState {
        NetworkState::initial(self.num_devices())
    }

    pub fn view<'a>(&'a self, state: &'a NetworkState) -> PolicyView<'a> {
        PolicyView {
            t: state.t,
            aoi_uav: &state.aoi_uav,
            aoi_tbs: &state.aoi_tbs,
            topology: &self.topology,
            sample_channels: self.scenario.sample_channels,
            update_channels: self.scenario.update_channels,
        }
    }

    pub fn validate(&self, state: &NetworkState, action: &JointAction) -> Result<(), EnvError> {
        if state.t > self.horizon() {
            return Err(EnvError::EpisodeOver {
                t: state.t,
                horizon: self.horizon(),
            });
        }
        let v = check_feasibility(
            action,
            &self.topology,
            self.scenario.sample_channels,
            self.scenario.update_channels,
        );
        if v.is_empty() {
            Ok(())
        } else {
            Err(EnvError::Infeasible(v))
        }
    }

    /// Draws link outcomes: sample legs in UAV then device order, then update legs.
    pub fn draw_deliveries<R: Rng + ?Sized>(&self, action: &JointAction, rng: &mut R) -> Deliveries {
        let m = self.num_devices();
        let mut d = Deliveries {
            sampled: vec![false; m],
            updated: vec![false; m],
        };
        for dev in action.sampled_devices() {
            d.sampled[dev] = draw_delivery(self.scenario.sample_loss_of(dev), rng);
        }
        for &dev in &action.update_set {
            d.updated[dev] = draw_delivery(self.scenario.update_loss_of(dev), rng);
        }
        d
    }

    /// Applies one slot given the link outcomes. Outcome flags of devices
    /// that were not scheduled are ignored.
    pub fn apply(
        &self,
        state: &NetworkState,
        action: &JointAction,
        deliveries: Deliveries,
    ) -> Result<Transition, EnvError> {
        self.validate(state, action)?;
        let t = state.t;
        let mut next = state.clone();
        next.t = t + 1;
        for m in 0..self.num_devices() {
            next.aoi_tbs[m] = if action.is_updated(m) && deliveries.updated[m] {
                state.aoi_uav[m] + 1
            } else {
                state.aoi_tbs[m] + 1
            };
        }
        for m in 0..self.num_devices() {
            let uav = self.topology.assignment[m];
            if action.is_sampled(uav, m) && deliveries.sampled[m] {
                let fresh = freshest_gen_time(&self.scenario.traffic, m, t);
                next.stored_gen[m] = state.stored_gen[m].max(fresh);
                next.aoi_uav[m] = t + 1 - next.stored_gen[m];
            } else {
                next.aoi_uav[m] = state.aoi_uav[m] + 1;
            }
        }
        let reward = -(next.sum_tbs() as i64);
        Ok(Transition {
            state: next,
            reward,
            deliveries,
        })
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &NetworkState,
        action: &JointAction,
        rng: &mut R,
    ) -> Result<Transition, EnvError> {
        self.validate(state, action)?;
        let d = self.draw_deliveries(action, rng);
        self.apply(state, action, d)
    }
}

/// Running AoI sums over the slots `1..=T` of one episode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub sum_aoi_uav: u64,
    pub sum_aoi_tbs: u64,
    pub per_device_final_aoi_tbs: Vec<u32>,
    pub per_slot_reward: Vec<i64>,
    pub slots_recorded: u32,
}

impl EpisodeMetrics {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds the AoI values of the state at the start of its slot.
    pub fn record_slot(&mut self, state: &NetworkState) {
        self.sum_aoi_uav += state.sum_uav();
        self.sum_aoi_tbs += state.sum_tbs();
        self.per_device_final_aoi_tbs = state.aoi_tbs.clone();
        self.slots_recorded += 1;
    }

    pub fn record_reward(&mut self, reward: i64) {
        self.per_slot_reward.push(reward);
    }

    pub fn finalize(&self, num_devices: usize, horizon: u32) -> Result<MetricsSummary, EnvError> {
        if self.slots_recorded != horizon {
            return Err(EnvError::Incomplete {
                recorded: self.slots_recorded,
                horizon,
            });
        }
        let m = num_devices as f64;
        let t = horizon as f64;
        let summed_tbs = self.sum_aoi_tbs as f64 / m;
        let eq9_uav = self.sum_aoi_uav as f64 / m;
        Ok(MetricsSummary {
            aoi_tbs: summed_tbs,
            aoi_tbs_per_slot: summed_tbs / t,
            aoi_uav: eq9_uav,
            aoi_uav_per_slot: eq9_uav / t,
            per_device_final_aoi_tbs: self.per_device_final_aoi_tbs.clone(),
        })
    }
}

/// Episode averages. `aoi_tbs` and `aoi_uav` are summed over slots and
/// averaged over devices; the `_per_slot` variants are further divided by T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub aoi_tbs: f64,
    pub aoi_tbs_per_slot: f64,
    pub aoi_uav: f64,
    pub aoi_uav_per_slot: f64,
    pub per_device_final_aoi_tbs: Vec<u32>,
}

/// One CSV row of a per-slot trace. Device labels are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u32,
    pub action: String,
    pub sample_delivered: String,
    pub update_delivered: String,
    pub aoi_uav: String,
    pub aoi_tbs: String,
    pub reward: i64,
}

fn join_labels<I: IntoIterator<Item = usize>>(xs: I) -> String {
    xs.into_iter().map(|x| (x + 1).to_string()).collect::<Vec<_>>().join(" ")
}

fn join_values(xs: &[u32]) -> String {
    xs.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

impl TraceRecord {
    fn new(state: &NetworkState, action: &JointAction, tr: &Transition) -> Self {
        TraceRecord {
            t: state.t,
            action: action.to_string(),
            sample_delivered: join_labels(action.sampled_devices().filter(|&m| tr.deliveries.sampled[m])),
            update_delivered: join_labels(action.update_set.iter().copied().filter(|&m| tr.deliveries.updated[m])),
            aoi_uav: join_values(&tr.state.aoi_uav),
            aoi_tbs: join_values(&tr.state.aoi_tbs),
            reward: tr.reward,
        }
    }
}

pub fn write_trace<W: Write>(records: &[TraceRecord], out: W) -> Result<(), EnvError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Result of one simulated episode.
#[derive(Debug, Clone)]
pub struct Episode {
    pub metrics: EpisodeMetrics,
    pub trace: Vec<TraceRecord>,
}

/// Runs one episode of `scheduler`. Link outcomes and policy randomness come
/// from separate streams of `seed`, so every policy sees the same channel
/// realisation for a given seed.
pub fn run_episode(
    env: &Environment,
    scheduler: &mut dyn Scheduler,
    seed: u64,
    keep_trace: bool,
) -> Result<Episode, EnvError> {
    let mut channel: SimRng = stream(seed, labels::CHANNEL);
    let mut policy_rng: SimRng = stream(seed, labels::POLICY);
    scheduler.reset();
    let mut state = env.reset();
    let mut metrics = EpisodeMetrics::new();
    let mut trace = Vec::new();
    while state.t <= env.horizon() {
        metrics.record_slot(&state);
        let action = scheduler.decide(&env.view(&state), &mut policy_rng);
        let tr = env.step(&state, &action, &mut channel)?;
        metrics.record_reward(tr.reward);
        if keep_trace {
            trace.push(TraceRecord::new(&state, &action, &tr));
        }
        state = tr.state;
    }
    Ok(Episode { metrics, trace })
}
