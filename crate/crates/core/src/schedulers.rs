//! Scheduling policies. A policy sees only the current ages and the
//! topology, never generation instants or loss probabilities.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::actions::JointAction;
use crate::model::Topology;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy)]
pub struct PolicyView<'a> {
    pub t: u32,
    pub aoi_uav: &'a [u32],
    pub aoi_tbs: &'a [u32],
    pub topology: &'a Topology,
    pub sample_channels: usize,
    pub update_channels: usize,
}

impl PolicyView<'_> {
    pub fn num_devices(&self) -> usize {
        self.aoi_uav.len()
    }
}

pub trait Scheduler {
    fn name(&self) -> &str;

    fn decide(&mut self, view: &PolicyView<'_>, rng: &mut SimRng) -> JointAction;

    /// Clears per-episode state.
    fn reset(&mut self) {}
}

/// The `count` candidates with the largest key, ascending by device index.
/// Ties go to the lower index.
fn top_by<F: Fn(usize) -> i64>(candidates: &[usize], count: usize, key: F) -> Vec<usize> {
    let mut order: Vec<usize> = candidates.to_vec();
    order.sort_by_key(|&m| (std::cmp::Reverse(key(m)), m));
    order.truncate(count);
    order.sort_unstable();
    order
}

fn maf_sampling(view: &PolicyView<'_>) -> Vec<Vec<usize>> {
    view.topology
        .cells
        .iter()
        .map(|cell| top_by(cell, view.sample_channels.min(cell.len()), |m| view.aoi_uav[m] as i64))
        .collect()
}

fn all_devices(view: &PolicyView<'_>) -> Vec<usize> {
    (0..view.num_devices()).collect()
}

/// Samples the oldest devices at each UAV and updates the devices with the
/// largest gap between base-station age and UAV age.
///
/// Among devices with equal gap, one that is sampled in the same slot is
/// updated first, then the lowest index. With one channel per hop this
/// choice keeps the greedy schedule optimal on lossless generate-at-will
/// instances, where plain lowest-index ties can lose a slot.
pub fn maf_mad(view: &PolicyView<'_>) -> JointAction {
    let sampling = maf_sampling(view);
    let mut sampled_now = vec![false; view.num_devices()];
    for &m in sampling.iter().flatten() {
        sampled_now[m] = true;
    }
    let k = view.update_channels.min(view.num_devices());
    let update = top_by(&all_devices(view), k, |m| {
        let gap = view.aoi_tbs[m] as i64 - view.aoi_uav[m] as i64;
        2 * gap + sampled_now[m] as i64
    });
    JointAction::new(sampling, update)
}

/// Oldest-first on both hops.
pub fn maf(view: &PolicyView<'_>) -> JointAction {
    let k = view.update_channels.min(view.num_devices());
    let update = top_by(&all_devices(view), k, |m| view.aoi_tbs[m] as i64);
    JointAction::new(maf_sampling(view), update)
}

/// Cyclic pointers: one per UAV into its cell, one over all devices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RrCursor {
    pub sample: Vec<usize>,
    pub update: usize,
}

impl RrCursor {
    pub fn new(num_uavs: usize) -> Self {
        RrCursor {
            sample: vec![0; num_uavs],
            update: 0,
        }
    }

    /// Cursor after `slots` slots from a fresh start.
    pub fn after(view: &PolicyView<'_>, slots: u32) -> Self {
        let s = slots as usize;
        let m = view.num_devices();
        RrCursor {
            sample: view
                .topology
                .cells
                .iter()
                .map(|c| if c.is_empty() { 0 } else { s * view.sample_channels.min(c.len()) % c.len() })
                .collect(),
            update: s * view.update_channels.min(m) % m,
        }
    }
}

fn take_cyclic(pool: &[usize], from: usize, count: usize) -> (Vec<usize>, usize) {
    if pool.is_empty() {
        return (Vec::new(), 0);
    }
    let taken = (0..count).map(|i| pool[(from + i) % pool.len()]).collect();
    (taken, (from + count) % pool.len())
}

pub fn round_robin(view: &PolicyView<'_>, cursor: &RrCursor) -> (JointAction, RrCursor) {
    let mut next = RrCursor::new(view.topology.num_uavs());
    let sample_sets = view
        .topology
        .cells
        .iter()
        .enumerate()
        .map(|(n, cell)| {
            let (s, p) = take_cyclic(cell, cursor.sample[n], view.sample_channels.min(cell.len()));
            next.sample[n] = p;
            s
        })
        .collect();
    let k = view.update_channels.min(view.num_devices());
    let (update, p) = take_cyclic(&all_devices(view), cursor.update, k);
    next.update = p;
    (JointAction::new(sample_sets, update), next)
}

/// Uniform subsets of the allowed sizes, drawn without replacement.
pub fn random_policy(view: &PolicyView<'_>, rng: &mut SimRng) -> JointAction {
    let sample_sets = view
        .topology
        .cells
        .iter()
        .map(|cell| {
            sample(rng, cell.len(), view.sample_channels.min(cell.len()))
                .into_iter()
                .map(|i| cell[i])
                .collect()
        })
        .collect();
    let m = view.num_devices();
    let update = sample(rng, m, view.update_channels.min(m)).into_vec();
    JointAction::new(sample_sets, update)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MafMad;

#[derive(Debug, Clone, Copy, Default)]
pub struct Maf;

#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    cursor: Option<RrCursor>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomScheduler;

impl Scheduler for MafMad {
    fn name(&self) -> &str {
        "maf-mad"
    }

    fn decide(&mut self, view: &PolicyView<'_>, _rng: &mut SimRng) -> JointAction {
        maf_mad(view)
    }
}

impl Scheduler for Maf {
    fn name(&self) -> &str {
        "maf"
    }

    fn decide(&mut self, view: &PolicyView<'_>, _rng: &mut SimRng) -> JointAction {
        maf(view)
    }
}

impl Scheduler for RoundRobin {
    fn name(&self) -> &str {
        "rr"
    }

    fn decide(&mut self, view: &PolicyView<'_>, _rng: &mut SimRng) -> JointAction {
        let cursor = self
            .cursor
            .take()
            .unwrap_or_else(|| RrCursor::new(view.topology.num_uavs()));
        let (action, next) = round_robin(view, &cursor);
        self.cursor = Some(next);
        action
    }

    fn reset(&mut self) {
        self.cursor = None;
    }
}

impl Scheduler for RandomScheduler {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, view: &PolicyView<'_>, rng: &mut SimRng) -> JointAction {
        random_policy(view, rng)
    }
}

/// A policy whose action is a function of the view alone.
pub trait DeterministicPolicy {
    fn act(&self, view: &PolicyView<'_>) -> JointAction;
}

impl DeterministicPolicy for MafMad {
    fn act(&self, view: &PolicyView<'_>) -> JointAction {
        maf_mad(view)
    }
}

impl DeterministicPolicy for Maf {
    fn act(&self, view: &PolicyView<'_>) -> JointAction {
        maf(view)
    }
}

/// Round robin started from zeroed pointers; its cursor depends only on `t`.
impl DeterministicPolicy for RoundRobin {
    fn act(&self, view: &PolicyView<'_>) -> JointAction {
        round_robin(view, &RrCursor::after(view, view.t - 1)).0
    }
}

impl<F: Fn(&PolicyView<'_>) -> JointAction> DeterministicPolicy for F {
    fn act(&self, view: &PolicyView<'_>) -> JointAction {
        self(view)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    MafMad,
    Maf,
    Rr,
    Random,
    Dqn,
}

impl PolicyName {
    pub const BASELINES: [PolicyName; 4] = [PolicyName::MafMad, PolicyName::Maf, PolicyName::Rr, PolicyName::Random];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyName::MafMad => "maf-mad",
            PolicyName::Maf => "maf",
            PolicyName::Rr => "rr",
            PolicyName::Random => "random",
            PolicyName::Dqn => "dqn",
        }
    }

    /// Builds the scheduler for every name except `dqn`, which needs a network.
    pub fn heuristic(&self) -> Option<Box<dyn Scheduler + Send>> {
        match self {
            PolicyName::MafMad => Some(Box::new(MafMad)),
            PolicyName::Maf => Some(Box::new(Maf)),
            PolicyName::Rr => Some(Box::new(RoundRobin::default())),
            PolicyName::Random => Some(Box::new(RandomScheduler)),
            PolicyName::Dqn => None,
        }
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "maf-mad" => Ok(PolicyName::MafMad),
            "maf" => Ok(PolicyName::Maf),
            "rr" => Ok(PolicyName::Rr),
            "random" => Ok(PolicyName::Random),
            "dqn" => Ok(PolicyName::Dqn),
            other => Err(format!("unknown policy {other:?}; expected maf-mad, maf, rr, random or dqn")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::check_feasibility;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn view<'a>(topo: &'a Topology, uav: &'a [u32], tbs: &'a [u32], l: usize, k: usize) -> PolicyView<'a> {
        PolicyView {
            t: 1,
            aoi_uav: uav,
            aoi_tbs: tbs,
            topology: topo,
            sample_channels: l,
            update_channels: k,
        }
    }

    #[test]
    fn maf_mad_picks_oldest_sample_and_widest_gap() {
        let topo = Topology::from_assignment(vec![0, 0, 0], 1);
        let a = maf_mad(&view(&topo, &[3, 7, 2], &[9, 8, 4], 1, 1));
        assert_eq!(a.sample_sets, vec![vec![1]]);
        assert_eq!(a.update_set, vec![0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let topo = Topology::from_assignment(vec![0, 0, 0], 1);
        let a = maf_mad(&view(&topo, &[5, 5, 1], &[5, 5, 1], 1, 1));
        assert_eq!(a.sample_sets, vec![vec![0]]);
        let a = maf(&view(&topo, &[5, 5, 1], &[4, 4, 4], 1, 1));
        assert_eq!(a.update_set, vec![0]);
    }

    #[test]
    fn mad_ties_prefer_device_sampled_this_slot() {
        // devices 0 and 1 share a gap of 1; only device 1 is sampled now
        let topo = Topology::from_assignment(vec![0, 0, 1], 2);
        let a = maf_mad(&view(&topo, &[1, 3, 2], &[2, 4, 2], 1, 1));
        assert_eq!(a.sample_sets, vec![vec![1], vec![2]]);
        assert_eq!(a.update_set, vec![1]);
        // no sampled device among the tied ones: lowest index
        let a = maf_mad(&view(&topo, &[1, 1, 5], &[3, 3, 5], 1, 1));
        assert_eq!(a.update_set, vec![0]);
    }

    #[test]
    fn maf_and_maf_mad_diverge_on_update() {
        let topo = Topology::from_assignment(vec![0, 0], 1);
        let v = view(&topo, &[9, 2], &[9, 8], 1, 1);
        assert_eq!(maf(&v).update_set, vec![0]);
        assert_eq!(maf_mad(&v).update_set, vec![1]);
        assert_eq!(maf(&v).sample_sets, maf_mad(&v).sample_sets);
    }

    #[test]
    fn round_robin_cycles_updates() {
        let topo = Topology::from_assignment(vec![0, 0, 0], 1);
        let ages = [1, 1, 1];
        let mut cursor = RrCursor::new(1);
        let mut seen = Vec::new();
        for _ in 0..6 {
            let (a, c) = round_robin(&view(&topo, &ages, &ages, 1, 1), &cursor);
            seen.push(a.update_set[0]);
            cursor = c;
        }
        assert_eq!(seen, vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn round_robin_wraps_sampling() {
        let topo = Topology::from_assignment(vec![0, 0, 0], 1);
        let ages = [1, 1, 1];
        let cursor = RrCursor {
            sample: vec![2],
            update: 0,
        };
        let (a, c) = round_robin(&view(&topo, &ages, &ages, 2, 1), &cursor);
        assert_eq!(a.sample_sets, vec![vec![0, 2]]);
        assert_eq!(c.sample, vec![1]);
    }

    #[test]
    fn deterministic_rr_matches_stateful_rr() {
        let topo = Topology::from_assignment(vec![0, 1, 0, 1, 1], 2);
        let ages = [1; 5];
        let mut stateful = RoundRobin::default();
        let mut rng = seeded(0);
        for t in 1..12 {
            let mut v = view(&topo, &ages, &ages, 2, 2);
            v.t = t;
            assert_eq!(stateful.decide(&v, &mut rng), RoundRobin::default().act(&v));
        }
    }

    #[test]
    fn random_full_cell_is_forced() {
        let topo = Topology::from_assignment(vec![0, 0, 1], 2);
        let ages = [1, 1, 1];
        let mut rng = seeded(4);
        for _ in 0..100 {
            let a = random_policy(&view(&topo, &ages, &ages, 2, 1), &mut rng);
            assert_eq!(a.sample_sets, vec![vec![0, 1], vec![2]]);
        }
    }

    #[test]
    fn random_updates_are_uniform() {
        let topo = Topology::from_assignment(vec![0, 0, 0], 1);
        let ages = [1, 1, 1];
        let mut rng = seeded(11);
        let n = 30_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[random_policy(&view(&topo, &ages, &ages, 1, 1), &mut rng).update_set[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn policy_names_parse() {
        for p in [PolicyName::MafMad, PolicyName::Maf, PolicyName::Rr, PolicyName::Random, PolicyName::Dqn] {
            assert_eq!(p.as_str().parse::<PolicyName>().unwrap(), p);
        }
        assert!("greedy".parse::<PolicyName>().is_err());
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<usize>, usize, usize, usize, Vec<u32>, Vec<u32>, u64)> {
        (1usize..4, 1usize..10).prop_flat_map(|(n, m)| {
            (
                proptest::collection::vec(0..n, m),
                Just(n),
                1usize..4,
                1usize..4,
                proptest::collection::vec(1u32..30, m),
                proptest::collection::vec(0u32..30, m),
                any::<u64>(),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn every_policy_is_feasible((assign, n, l, k, uav, extra, seed) in arb_instance()) {
            let topo = Topology::from_assignment(assign, n);
            let tbs: Vec<u32> = uav.iter().zip(&extra).map(|(a, e)| a + e).collect();
            let v = view(&topo, &uav, &tbs, l, k);
            let mut rng = seeded(seed);
            let cursor = RrCursor::after(&v, rng.random_range(0..50));
            for a in [maf_mad(&v), maf(&v), round_robin(&v, &cursor).0, random_policy(&v, &mut rng)] {
                prop_assert!(check_feasibility(&a, &topo, l, k).is_empty());
                prop_assert_eq!(a.update_set.len(), k.min(topo.num_devices()));
            }
        }

        #[test]
        fn shifting_one_device_keeps_mad_choice((assign, n, l, k, uav, extra, seed) in arb_instance(), c in 0u32..50) {
            let topo = Topology::from_assignment(assign, n);
            let tbs: Vec<u32> = uav.iter().zip(&extra).map(|(a, e)| a + e).collect();
            let j = (seed as usize) % topo.num_devices();
            let mut uav2 = uav.clone();
            let mut tbs2 = tbs.clone();
            uav2[j] += c;
            tbs2[j] += c;
            let a = maf_mad(&view(&topo, &uav, &tbs, l, k));
            let b = maf_mad(&view(&topo, &uav2, &tbs2, l, k));
            let gaps = |u: &[usize]| {
                let mut g: Vec<u32> = u.iter().map(|&m| tbs[m] - uav[m]).collect();
                g.sort_unstable();
                g
            };
            prop_assert_eq!(gaps(&a.update_set), gaps(&b.update_set));
            let mut all: Vec<u32> = (0..topo.num_devices()).map(|m| tbs[m] - uav[m]).collect();
            all.sort_unstable_by(|x, y| y.cmp(x));
            let kk = k.min(all.len());
            if kk == all.len() || all[kk - 1] != all[kk] {
                prop_assert_eq!(a.update_set, b.update_set);
            }
        }
    }
}
