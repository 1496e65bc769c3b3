//! The joint action space: which devices each UAV samples and which devices
//! the base station updates in one slot.
//!
//! Actions use the full channel budget, `|S_n| = min(L, |m_n|)` and
//! `|U| = min(K, M)`. An index is a mixed-radix number whose digits are the
//! colexicographic ranks of each UAV's sample combination (UAV 0 most
//! significant) followed by the rank of the update combination (least
//! significant).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Topology;

pub const DEFAULT_ACTION_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction {
    /// Devices sampled by each UAV, ascending.
    pub sample_sets: Vec<Vec<usize>>,
    /// Devices relayed to the base station, ascending.
    pub update_set: Vec<usize>,
}

impl JointAction {
    pub fn new(mut sample_sets: Vec<Vec<usize>>, mut update_set: Vec<usize>) -> Self {
        for s in &mut sample_sets {
            s.sort_unstable();
        }
        update_set.sort_unstable();
        JointAction { sample_sets, update_set }
    }

    pub fn is_sampled(&self, uav: usize, device: usize) -> bool {
        self.sample_sets[uav].binary_search(&device).is_ok()
    }

    pub fn is_updated(&self, device: usize) -> bool {
        self.update_set.binary_search(&device).is_ok()
    }

    pub fn sampled_devices(&self) -> impl Iterator<Item = usize> + '_ {
        self.sample_sets.iter().flatten().copied()
    }
}

/// Trace form `S:[u1:(1,3)|u2:(2)];U:(4)`, with 1-based UAV and device labels.
impl fmt::Display for JointAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn list(f: &mut fmt::Formatter<'_>, xs: &[usize]) -> fmt::Result {
            f.write_str("(")?;
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{}", x + 1)?;
            }
            f.write_str(")")
        }
        f.write_str("S:[")?;
        for (n, s) in self.sample_sets.iter().enumerate() {
            if n > 0 {
                f.write_str("|")?;
            }
            write!(f, "u{}:", n + 1)?;
            list(f, s)?;
        }
        f.write_str("];U:")?;
        list(f, &self.update_set)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// The action names a different number of UAVs than the topology has.
    UavCount { expected: usize, got: usize },
    /// Access-link channel budget exceeded at one UAV.
    SampleCapacity { uav: usize, size: usize, limit: usize },
    /// Backhaul channel budget exceeded.
    UpdateCapacity { size: usize, limit: usize },
    /// A UAV samples a device it does not serve.
    NotInCell { uav: usize, device: usize },
    UnknownDevice { device: usize },
    /// A set is not strictly ascending (unsorted or has duplicates).
    Unsorted { uav: Option<usize> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UavCount { expected, got } => {
                write!(f, "action has {got} sample sets for {expected} UAVs")
            }
            Violation::SampleCapacity { uav, size, limit } => write!(
                f,
                "sampling channel constraint: UAV {uav} samples {size} devices with {limit} channels"
            ),
            Violation::UpdateCapacity { size, limit } => write!(
                f,
                "updating channel constraint: {size} devices updated with {limit} channels"
            ),
            Violation::NotInCell { uav, device } => {
                write!(f, "UAV {uav} samples device {device} outside its cell")
            }
            Violation::UnknownDevice { device } => write!(f, "device {device} does not exist"),
            Violation::Unsorted { uav: Some(n) } => write!(f, "sample set of UAV {n} is not strictly ascending"),
            Violation::Unsorted { uav: None } => f.write_str("update set is not strictly ascending"),
        }
    }
}

fn strictly_ascending(xs: &[usize]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

/// Lists every constraint the action breaks; empty when feasible.
pub fn check_feasibility(action: &JointAction, topology: &Topology, l: usize, k: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let m = topology.num_devices();
    if action.sample_sets.len() != topology.num_uavs() {
        out.push(Violation::UavCount {
            expected: topology.num_uavs(),
            got: action.sample_sets.len(),
        });
    }
    for (uav, set) in action.sample_sets.iter().enumerate() {
        if set.len() > l {
            out.push(Violation::SampleCapacity {
                uav,
                size: set.len(),
                limit: l,
            });
        }
        if !strictly_ascending(set) {
            out.push(Violation::Unsorted { uav: Some(uav) });
        }
        for &device in set {
            if device >= m {
                out.push(Violation::UnknownDevice { device });
            } else if topology.assignment[device] != uav {
                out.push(Violation::NotInCell { uav, device });
            }
        }
    }
    if action.update_set.len() > k {
        out.push(Violation::UpdateCapacity {
            size: action.update_set.len(),
            limit: k,
        });
    }
    if !strictly_ascending(&action.update_set) {
        out.push(Violation::Unsorted { uav: None });
    }
    for &device in &action.update_set {
        if device >= m {
            out.push(Violation::UnknownDevice { device });
        }
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ActionError {
    #[error("action space has {size} actions, above the cap of {cap}")]
    TooLarge { size: u128, cap: u64 },
    #[error("action index {index} out of range for {size} actions")]
    IndexOutOfRange { index: u64, size: u64 },
    #[error("action is not a full-capacity member of this space: {0}")]
    NotInSpace(String),
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Colexicographic rank of a strictly ascending combination.
pub fn colex_rank(combo: &[usize]) -> u128 {
    combo.iter().enumerate().map(|(i, &c)| binomial(c, i + 1)).sum()
}

/// Inverse of [`colex_rank`] for `k`-subsets.
pub fn colex_unrank(mut rank: u128, k: usize) -> Vec<usize> {
    let mut combo = vec![0; k];
    for i in (1..=k).rev() {
        // largest c with C(c, i) <= rank; c >= i - 1 always qualifies
        let mut c = i - 1;
        while binomial(c + 1, i) <= rank {
            c += 1;
        }
        rank -= binomial(c, i);
        combo[i - 1] = c;
    }
    combo
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    cells: Vec<Vec<usize>>,
    assignment: Vec<usize>,
    sample_sizes: Vec<usize>,
    update_size: usize,
    /// Digit bases, one per UAV then one for the update set.
    radices: Vec<u64>,
    total: u64,
}

impl ActionSpace {
    pub fn new(topology: &Topology, l: usize, k: usize) -> Result<Self, ActionError> {
        Self::with_cap(topology, l, k, DEFAULT_ACTION_CAP)
    }

    pub fn count(topology: &Topology, l: usize, k: usize) -> u128 {
        let m = topology.num_devices();
        let mut total = binomial(m, k.min(m));
        for cell in &topology.cells {
            total = total.saturating_mul(binomial(cell.len(), l.min(cell.len())));
        }
        total
    }

    pub fn with_cap(topology: &Topology, l: usize, k: usize, cap: u64) -> Result<Self, ActionError> {
        let size = Self::count(topology, l, k);
        if size > cap as u128 {
            return Err(ActionError::TooLarge { size, cap });
        }
        let m = topology.num_devices();
        let sample_sizes: Vec<usize> = topology.cells.iter().map(|c| l.min(c.len())).collect();
        let update_size = k.min(m);
        let mut radices: Vec<u64> = topology
            .cells
            .iter()
            .zip(&sample_sizes)
            .map(|(c, &s)| binomial(c.len(), s) as u64)
            .collect();
        radices.push(binomial(m, update_size) as u64);
        Ok(ActionSpace {
            cells: topology.cells.clone(),
            assignment: topology.assignment.clone(),
            sample_sizes,
            update_size,
            radices,
            total: size as u64,
        })
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn action_at(&self, index: u64) -> Result<JointAction, ActionError> {
        if index >= self.total {
            return Err(ActionError::IndexOutOfRange {
                index,
                size: self.total,
            });
        }
        let mut digits = vec![0u64; self.radices.len()];
        let mut rest = index;
        for (d, &base) in digits.iter_mut().zip(&self.radices).rev() {
            *d = rest % base;
            rest /= base;
        }
        let sample_sets = self
            .cells
            .iter()
            .zip(&self.sample_sizes)
            .zip(&digits)
            .map(|((cell, &size), &d)| {
                colex_unrank(d as u128, size)
                    .into_iter()
                    .map(|pos| cell[pos])
                    .collect()
            })
            .collect();
        let update_set = colex_unrank(digits[digits.len() - 1] as u128, self.update_size);
        Ok(JointAction {
            sample_sets,
            update_set,
        })
    }

    pub fn index_of(&self, action: &JointAction) -> Result<u64, ActionError> {
        let bad = |why: &str| ActionError::NotInSpace(format!("{action}: {why}"));
        if action.sample_sets.len() != self.cells.len() {
            return Err(bad("wrong number of UAVs"));
        }
        let mut index: u64 = 0;
        for ((set, cell), (&size, &base)) in action
            .sample_sets
            .iter()
            .zip(&self.cells)
            .zip(self.sample_sizes.iter().zip(&self.radices))
        {
            if set.len() != size || !strictly_ascending(set) {
                return Err(bad("sample set size or order"));
            }
            let positions = set
                .iter()
                .map(|d| cell.binary_search(d).map_err(|_| bad("device outside cell")))
                .collect::<Result<Vec<_>, _>>()?;
            index = index * base + colex_rank(&positions) as u64;
        }
        let u = &action.update_set;
        if u.len() != self.update_size || !strictly_ascending(u) || u.iter().any(|&d| d >= self.assignment.len()) {
            return Err(bad("update set size, order or range"));
        }
        let base = self.radices[self.radices.len() - 1];
        Ok(index * base + colex_rank(u) as u64)
    }

    pub fn iter(&self) -> impl Iterator<Item = JointAction> + '_ {
        (0..self.total).map(move |i| self.action_at(i).expect("index in range"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_topology, ScenarioConfig};
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn line_topology(assignment: Vec<usize>, n: usize) -> Topology {
        Topology::from_assignment(assignment, n)
    }

    #[test]
    fn small_counts() {
        let t = line_topology(vec![0, 0, 0], 1);
        assert_eq!(ActionSpace::new(&t, 1, 1).unwrap().len(), 9);
        let t = line_topology(vec![0, 0], 1);
        assert_eq!(ActionSpace::new(&t, 2, 2).unwrap().len(), 1);
        let topo = build_topology(&ScenarioConfig::ideal(12, 2, 1, 1, 10), &mut seeded(0));
        assert_eq!(ActionSpace::new(&topo, 1, 1).unwrap().len(), 432);
    }

    #[test]
    fn first_action_is_lowest_devices() {
        let t = line_topology(vec![0, 0, 0], 1);
        let space = ActionSpace::new(&t, 1, 1).unwrap();
        let a = space.action_at(0).unwrap();
        assert_eq!(a, JointAction::new(vec![vec![0]], vec![0]));
        assert_eq!(space.index_of(&a).unwrap(), 0);
        // update digit varies fastest
        assert_eq!(space.action_at(1).unwrap(), JointAction::new(vec![vec![0]], vec![1]));
        assert_eq!(space.action_at(3).unwrap(), JointAction::new(vec![vec![1]], vec![0]));
    }

    #[test]
    fn full_sweep_round_trips() {
        let t = line_topology(vec![0, 0, 0], 1);
        let space = ActionSpace::new(&t, 1, 1).unwrap();
        for i in 0..space.len() {
            let a = space.action_at(i).unwrap();
            assert_eq!(space.index_of(&a).unwrap(), i);
        }
        assert!(matches!(space.action_at(9), Err(ActionError::IndexOutOfRange { .. })));
    }

    #[test]
    fn cap_is_enforced() {
        let topo = build_topology(&ScenarioConfig::ideal(60, 2, 2, 2, 10), &mut seeded(0));
        let err = ActionSpace::new(&topo, 2, 2).unwrap_err();
        // C(30,2)^2 * C(60,2) = 435 * 435 * 1770
        assert_eq!(
            err,
            ActionError::TooLarge {
                size: 435 * 435 * 1770,
                cap: DEFAULT_ACTION_CAP
            }
        );
    }

    #[test]
    fn rejects_partial_or_foreign_actions() {
        let t = line_topology(vec![0, 1, 0, 1], 2);
        let space = ActionSpace::new(&t, 1, 1).unwrap();
        assert!(space.index_of(&JointAction::new(vec![vec![1], vec![1]], vec![0])).is_err());
        assert!(space.index_of(&JointAction::new(vec![vec![], vec![1]], vec![0])).is_err());
        assert!(space.index_of(&JointAction::new(vec![vec![0], vec![1]], vec![7])).is_err());
    }

    #[test]
    fn violations_are_listed() {
        let t = line_topology(vec![0, 0, 1, 1], 2);
        let ok = JointAction::new(vec![vec![0], vec![3]], vec![2]);
        assert!(check_feasibility(&ok, &t, 1, 1).is_empty());
        let too_many = JointAction::new(vec![vec![0], vec![3]], vec![1, 2]);
        assert_eq!(
            check_feasibility(&too_many, &t, 1, 1),
            vec![Violation::UpdateCapacity { size: 2, limit: 1 }]
        );
        let foreign = JointAction::new(vec![vec![2], vec![3]], vec![1]);
        assert_eq!(
            check_feasibility(&foreign, &t, 1, 1),
            vec![Violation::NotInCell { uav: 0, device: 2 }]
        );
        let both = JointAction::new(vec![vec![0, 1], vec![9]], vec![1]);
        let v = check_feasibility(&both, &t, 1, 1);
        assert!(v.contains(&Violation::SampleCapacity { uav: 0, size: 2, limit: 1 }));
        assert!(v.contains(&Violation::UnknownDevice { device: 9 }));
    }

    #[test]
    fn trace_format() {
        let a = JointAction::new(vec![vec![0, 2], vec![1]], vec![3, 1]);
        assert_eq!(a.to_string(), "S:[u1:(1,3)|u2:(2)];U:(2,4)");
    }

    #[test]
    fn colex_order_small() {
        // 2-subsets of {0,1,2,3} in colex order
        let expect = [[0, 1], [0, 2], [1, 2], [0, 3], [1, 3], [2, 3]];
        for (r, c) in expect.iter().enumerate() {
            assert_eq!(colex_rank(c), r as u128);
            assert_eq!(colex_unrank(r as u128, 2), c.to_vec());
        }
    }

    proptest! {
        #[test]
        fn colex_round_trip(n in 1usize..20, k_frac in 0.0f64..1.0, r_frac in 0.0f64..1.0) {
            let k = ((n as f64) * k_frac) as usize;
            let total = binomial(n, k);
            let rank = ((total as f64 - 1.0) * r_frac) as u128;
            let combo = colex_unrank(rank, k);
            prop_assert!(strictly_ascending(&combo));
            prop_assert!(combo.iter().all(|&c| c < n));
            prop_assert_eq!(colex_rank(&combo), rank);
        }
    }
}
