//! Small selection DAGs whose terminal sets can be listed exhaustively, used
//! to check that a trained policy samples terminal sets in proportion to
//! their rewards.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::policy::{inflow, outflow, sample_trajectory, train_policy, FlowNetwork, PolicyEnv, TrainConfig, TrainLog};
use crate::rng::{substream, Rng};
use crate::state::{init_state, TrajectoryState};

pub type IndexSet = BTreeSet<usize>;

pub struct EnumerableInstance {
    pub init: TrajectoryState,
    pub labels: Vec<Label>,
    pub budget: usize,
    pub rewards: BTreeMap<IndexSet, f64>,
}

impl EnumerableInstance {
    /// Six targets on a regular hexagon lifted to height 1, so pairwise cosine
    /// similarity depends only on ring distance (0.75, 0.25, 0). Predictions
    /// are uniform, two targets per class, budget two, and a pair's reward is
    /// 1, 2 or 3 by ring distance.
    pub fn reference() -> Self {
        let features = Array2::from_shape_fn((6, 3), |(i, k)| {
            let angle = i as f64 * std::f64::consts::PI / 3.0;
            [angle.cos(), angle.sin(), 1.0][k]
        });
        let predictions = Array2::from_elem((6, 3), 1.0 / 3.0);
        let labels = [0, 0, 1, 1, 2, 2].map(Label).to_vec();
        let rewards = terminal_sets(6, 2)
            .into_iter()
            .map(|set| {
                let v: Vec<usize> = set.iter().copied().collect();
                let gap = v[1] - v[0];
                let ring = gap.min(6 - gap);
                (set, ring as f64)
            })
            .collect();
        Self::new(features, &predictions, labels, 2, rewards).expect("static instance")
    }

    pub fn new(
        features: Array2<f64>,
        predictions: &Array2<f64>,
        labels: Vec<Label>,
        budget: usize,
        rewards: BTreeMap<IndexSet, f64>,
    ) -> Result<Self> {
        let init = init_state(features, predictions)?;
        let expected = terminal_sets(init.n(), budget);
        if expected.len() != rewards.len() || expected.iter().any(|s| !rewards.contains_key(s)) {
            return Err(Error::Config("reward table must cover every terminal set".into()));
        }
        if let Some(r) = rewards.values().find(|r| !(**r > 0.0)) {
            return Err(Error::NonPositiveReward(*r));
        }
        Ok(Self {
            init,
            labels,
            budget,
            rewards,
        })
    }

    pub fn reward(&self, ts: &TrajectoryState) -> Result<f64> {
        let key = ts.selected_set();
        self.rewards
            .get(&key)
            .copied()
            .ok_or_else(|| Error::Config(format!("no reward for set {key:?}")))
    }

    /// `r / Σr` over terminal sets.
    pub fn target_distribution(&self) -> BTreeMap<IndexSet, f64> {
        let total: f64 = self.rewards.values().sum();
        self.rewards
            .iter()
            .map(|(s, r)| (s.clone(), r / total))
            .collect()
    }

    /// Every state with `1 ≤ |selected| < budget`.
    pub fn internal_states(&self) -> Result<Vec<TrajectoryState>> {
        let mut out = Vec::new();
        for size in 1..self.budget {
            for set in terminal_sets(self.init.n(), size) {
                let mut ts = self.init.clone();
                for &i in &set {
                    ts = ts.apply_action(i, &self.labels)?;
                }
                out.push(ts);
            }
        }
        Ok(out)
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn terminal_sets(n: usize, k: usize) -> Vec<IndexSet> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<IndexSet>) {
        if cur.len() == k {
            out.push(cur.iter().copied().collect());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

pub fn total_variation(p: &BTreeMap<IndexSet, f64>, q: &BTreeMap<IndexSet, f64>) -> f64 {
    let keys: BTreeSet<&IndexSet> = p.keys().chain(q.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Terminal-set frequencies over `samples` policy rollouts.
pub fn empirical_terminal_distribution(
    net: &FlowNetwork,
    instance: &EnumerableInstance,
    samples: usize,
    rng: &mut Rng,
) -> Result<BTreeMap<IndexSet, f64>> {
    let mut counts: BTreeMap<IndexSet, usize> = BTreeMap::new();
    for _ in 0..samples {
        let traj = sample_trajectory(net, &instance.init, instance.budget, &instance.labels, rng)?;
        *counts
            .entry(traj.last().expect("non-empty").selected_set())
            .or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(s, c)| (s, c as f64 / samples as f64))
        .collect())
}

/// `|log(ε + inflow) − log(ε + outflow)|` at every internal state.
pub fn conservation_gaps(
    net: &FlowNetwork,
    instance: &EnumerableInstance,
    epsilon: f64,
) -> Result<Vec<(IndexSet, f64)>> {
    instance
        .internal_states()?
        .into_iter()
        .map(|ts| {
            let gap = ((epsilon + inflow(net, &ts)?).ln() - (epsilon + outflow(net, &ts)?).ln()).abs();
            Ok((ts.selected_set(), gap))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProportionalityReport {
    pub episodes: usize,
    pub samples: usize,
    pub total_variation: f64,
    pub max_conservation_gap: f64,
    pub target: Vec<(Vec<usize>, f64)>,
    pub empirical: Vec<(Vec<usize>, f64)>,
}

/// Train a fresh flow network on `instance`, then sample it.
pub fn run_proportionality(
    instance: &EnumerableInstance,
    config: &TrainConfig,
    samples: usize,
    seed: u64,
) -> Result<(FlowNetwork, TrainLog, ProportionalityReport)> {
    let mut net = FlowNetwork::new(&mut substream(seed, "policy-init"));
    let env = PolicyEnv {
        init: &instance.init,
        oracle: &instance.labels,
        budget: instance.budget,
    };
    let log = train_policy(
        &mut net,
        &env,
        |ts| instance.reward(ts),
        config,
        &mut substream(seed, "rollout"),
    )?;
    let empirical =
        empirical_terminal_distribution(&net, instance, samples, &mut substream(seed, "evaluation"))?;
    let target = instance.target_distribution();
    let gaps = conservation_gaps(&net, instance, config.epsilon)?;
    let as_rows = |m: &BTreeMap<IndexSet, f64>| {
        m.iter()
            .map(|(s, p)| (s.iter().copied().collect(), *p))
            .collect()
    };
    let report = ProportionalityReport {
        episodes: log.episodes.len(),
        samples,
        total_variation: total_variation(&empirical, &target),
        max_conservation_gap: gaps.iter().map(|g| g.1).fold(0.0, f64::max),
        target: as_rows(&target),
        empirical: as_rows(&empirical),
    };
    Ok((net, log, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_are_enumerated() {
        assert_eq!(terminal_sets(6, 2).len(), 15);
        assert_eq!(terminal_sets(8, 3).len(), 56);
        assert_eq!(terminal_sets(4, 0), vec![IndexSet::new()]);
    }

    #[test]
    fn total_variation_examples() {
        let a: BTreeMap<IndexSet, f64> = [(IndexSet::from([0]), 1.0)].into();
        let b: BTreeMap<IndexSet, f64> = [(IndexSet::from([1]), 1.0)].into();
        assert_eq!(total_variation(&a, &b), 1.0);
        assert_eq!(total_variation(&a, &a), 0.0);
    }

    #[test]
    fn reference_instance_is_consistent() {
        let inst = EnumerableInstance::reference();
        assert_eq!(inst.rewards.len(), 15);
        assert_eq!(inst.internal_states().unwrap().len(), 6);
        let sum: f64 = inst.target_distribution().values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
