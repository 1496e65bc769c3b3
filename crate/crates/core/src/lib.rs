//! Age-of-information scheduling for two-hop UAV-relayed IoT networks.
//!
//! IoT devices are sampled by their serving UAV over access-link channels and
//! the stored packets are relayed to a terrestrial base station over backhaul
//! channels. The crate provides the slotted AoI simulator, the greedy
//! MAF-MAD scheduler and its baselines, a DQN scheduler built on a small
//! dense network, an exact dynamic-programming oracle for tiny instances, and
//! an experiment harness.

pub mod actions;
pub mod dqn;
pub mod env;
pub mod harness;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod rng;
pub mod schedulers;
pub mod stats;

pub use actions::{ActionSpace, JointAction, Violation};
pub use env::{EpisodeMetrics, Environment, MetricsSummary, NetworkState};
pub use model::{build_topology, ScenarioConfig, Topology, TrafficModel};
pub use schedulers::{PolicyView, Scheduler};
