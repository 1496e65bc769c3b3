//! Exact finite-horizon solutions on tiny instances.
//!
//! The cost of an episode is `Σ_{t=1..T} Σ_m aoi_tbs(t)`; reported costs are
//! that total divided by M. Backward induction runs over the full network
//! state with an expectation over every combination of link outcomes, and
//! states are memoised without aggregation.
//!
//! Expected totals are accumulated in `f64`. On lossless instances every
//! value is an integer well inside the exact range of a double, and with
//! dyadic loss probabilities every product and sum is still exact, so
//! equality comparisons on those instances need no tolerance.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::actions::{ActionError, ActionSpace, JointAction};
use crate::env::{Deliveries, Environment, NetworkState};
use crate::schedulers::DeterministicPolicy;

pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

/// Comparison tolerance for instances with non-dyadic probabilities.
pub const COST_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("node budget {budget} exceeded; naive tree size is about {estimate:.3e} nodes")]
    BudgetExceeded { budget: u64, estimate: f64 },
    #[error(transparent)]
    Actions(#[from] ActionError),
}

/// One link use whose outcome is uncertain.
#[derive(Debug, Clone, Copy)]
enum Leg {
    Sample(usize),
    Update(usize),
}

/// All outcome combinations of `action` with their probabilities.
fn outcomes(env: &Environment, action: &JointAction) -> Vec<(f64, Deliveries)> {
    let base = Deliveries::all_succeed(action, env.num_devices());
    let mut uncertain = Vec::new();
    for m in action.sampled_devices() {
        let p = env.scenario.sample_loss_of(m);
        if p > 0.0 {
            uncertain.push((Leg::Sample(m), p));
        }
    }
    for &m in &action.update_set {
        let p = env.scenario.update_loss_of(m);
        if p > 0.0 {
            uncertain.push((Leg::Update(m), p));
        }
    }
    (0u32..1 << uncertain.len())
        .map(|mask| {
            let mut d = base.clone();
            let mut prob = 1.0;
            for (i, &(leg, loss)) in uncertain.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    prob *= loss;
                    match leg {
                        Leg::Sample(m) => d.sampled[m] = false,
                        Leg::Update(m) => d.updated[m] = false,
                    }
                } else {
                    prob *= 1.0 - loss;
                }
            }
            (prob, d)
        })
        .collect()
}

struct Search<'a> {
    env: &'a Environment,
    budget: u64,
    work: u64,
    estimate: f64,
    memo: HashMap<NetworkState, f64>,
}

impl Search<'_> {
    fn tick(&mut self, n: u64) -> Result<(), OracleError> {
        self.work += n;
        if self.work > self.budget {
            Err(OracleError::BudgetExceeded {
                budget: self.budget,
                estimate: self.estimate,
            })
        } else {
            Ok(())
        }
    }

    fn expected_next(&mut self, state: &NetworkState, action: &JointAction, best: &mut dyn FnMut(&mut Self, &NetworkState) -> Result<f64, OracleError>) -> Result<f64, OracleError> {
        let branches = outcomes(self.env, action);
        self.tick(branches.len() as u64)?;
        let mut acc = 0.0;
        for (p, d) in branches {
            let next = self.env.apply(state, action, d).expect("enumerated actions are feasible").state;
            acc += p * best(self, &next)?;
        }
        Ok(acc)
    }
}

fn estimate_tree(env: &Environment, actions: u64) -> f64 {
    let uncertain = (0..env.num_devices())
        .filter(|&m| env.scenario.sample_loss_of(m) > 0.0)
        .count()
        .min(env.topology.cells.iter().map(|c| env.scenario.sample_channels.min(c.len())).sum())
        + (0..env.num_devices())
            .filter(|&m| env.scenario.update_loss_of(m) > 0.0)
            .count()
            .min(env.scenario.update_channels);
    let per_level = actions as f64 * 2f64.powi(uncertain as i32);
    per_level.powi(env.horizon() as i32 - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalSolution {
    /// Minimal expected `Σ_t Σ_m aoi_tbs(t)`.
    pub expected_total: f64,
    /// `expected_total / M`.
    pub cost: f64,
    /// An optimal first-slot action (lowest index among ties).
    pub root_action: JointAction,
    pub states_visited: usize,
}

pub fn optimal_cost(env: &Environment, budget: u64) -> Result<OptimalSolution, OracleError> {
    let space = ActionSpace::new(&env.topology, env.scenario.sample_channels, env.scenario.update_channels)?;
    let actions: Vec<JointAction> = space.iter().collect();
    let mut search = Search {
        env,
        budget,
        work: 0,
        estimate: estimate_tree(env, space.len()),
        memo: HashMap::new(),
    };

    fn value(s: &mut Search<'_>, actions: &[JointAction], state: &NetworkState) -> Result<f64, OracleError> {
        if let Some(&v) = s.memo.get(state) {
            return Ok(v);
        }
        let here = state.sum_tbs() as f64;
        let v = if state.t >= s.env.horizon() {
            here
        } else {
            let mut best = f64::INFINITY;
            for a in actions {
                let e = s.expected_next(state, a, &mut |s, next| value(s, actions, next))?;
                best = best.min(e);
            }
            here + best
        };
        s.memo.insert(state.clone(), v);
        Ok(v)
    }

    let root = env.reset();
    let total = value(&mut search, &actions, &root)?;
    let root_action = if root.t >= env.horizon() {
        actions[0].clone()
    } else {
        let target = total - root.sum_tbs() as f64;
        let mut chosen = actions[0].clone();
        for a in &actions {
            let e = search.expected_next(&root, a, &mut |s, next| value(s, &actions, next))?;
            if (e - target).abs() <= COST_TOLERANCE * target.abs().max(1.0) {
                chosen = a.clone();
                break;
            }
        }
        chosen
    };
    Ok(OptimalSolution {
        expected_total: total,
        cost: total / env.num_devices() as f64,
        root_action,
        states_visited: search.memo.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyValue {
    pub expected_total: f64,
    pub cost: f64,
}

/// Exact expected cost of a deterministic policy over the outcome tree.
pub fn evaluate_policy_exact(
    env: &Environment,
    policy: &dyn DeterministicPolicy,
    budget: u64,
) -> Result<PolicyValue, OracleError> {
    let mut search = Search {
        env,
        budget,
        work: 0,
        estimate: estimate_tree(env, 1),
        memo: HashMap::new(),
    };

    fn value(s: &mut Search<'_>, policy: &dyn DeterministicPolicy, state: &NetworkState) -> Result<f64, OracleError> {
        if let Some(&v) = s.memo.get(state) {
            return Ok(v);
        }
        let here = state.sum_tbs() as f64;
        let v = if state.t >= s.env.horizon() {
            here
        } else {
            let action = policy.act(&s.env.view(state));
            here + s.expected_next(state, &action, &mut |s, next| value(s, policy, next))?
        };
        s.memo.insert(state.clone(), v);
        Ok(v)
    }

    let total = value(&mut search, policy, &env.reset())?;
    Ok(PolicyValue {
        expected_total: total,
        cost: total / env.num_devices() as f64,
    })
}

/// Optimal and policy cost on one instance, as written by the `oracle` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub optimal_cost: f64,
    pub policy_cost: f64,
    pub gap: f64,
}

pub fn policy_gap(env: &Environment, policy: &dyn DeterministicPolicy, budget: u64) -> Result<GapRow, OracleError> {
    let opt = optimal_cost(env, budget)?;
    let pol = evaluate_policy_exact(env, policy, budget)?;
    Ok(GapRow {
        optimal_cost: opt.cost,
        policy_cost: pol.cost,
        gap: pol.cost - opt.cost,
    })
}
