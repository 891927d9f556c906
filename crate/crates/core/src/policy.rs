//! Edge-flow network over the selection DAG and its flow-matching training.
//!
//! Each candidate action is scored from its own 4-value state row; the network
//! output is the log edge flow.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpSpec, Optimizer, OptimizerConfig, OutputTransform, Parameters};
use crate::rng::Rng;
use crate::state::{LabelOracle, TrajectoryState};

pub const ROW_DIM: usize = 4;
pub const HIDDEN: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowNetwork {
    pub mlp: Mlp,
}

impl FlowNetwork {
    pub fn spec() -> MlpSpec {
        MlpSpec::new(vec![ROW_DIM, HIDDEN, 1], Activation::Relu, OutputTransform::Identity)
    }

    pub fn new(rng: &mut Rng) -> Self {
        Self {
            mlp: Mlp::new(Self::spec(), rng).expect("static spec"),
        }
    }

    pub fn zeros() -> Self {
        Self {
            mlp: Mlp::zeros(Self::spec()).expect("static spec"),
        }
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.input_dim() != ROW_DIM || mlp.output_dim() != 1 {
            return Err(Error::Checkpoint(format!(
                "flow network must map {ROW_DIM} inputs to 1 output, got {} → {}",
                mlp.input_dim(),
                mlp.output_dim()
            )));
        }
        Ok(Self {
            mlp: Mlp::from_parts(mlp.spec, mlp.params)?,
        })
    }

    /// Log edge flows for a batch of state rows.
    pub fn log_flows(&self, rows: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.mlp.predict(rows)?.column(0).to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let raw: FlowNetwork =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_mlp(raw.mlp)
    }
}

fn rows_matrix(rows: &[[f64; 4]]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), ROW_DIM), |(i, j)| rows[i][j])
}

/// `F(s → s ∪ {action})`.
pub fn edge_flow(net: &FlowNetwork, ts: &TrajectoryState, action: usize) -> Result<f64> {
    if action >= ts.n() || ts.is_selected(action) {
        return Err(Error::InvalidAction {
            action,
            reason: "not a candidate",
        });
    }
    Ok(net.log_flows(&rows_matrix(&[ts.row(action)]))?[0].exp())
}

fn candidate_log_flows(net: &FlowNetwork, ts: &TrajectoryState) -> Result<(Vec<usize>, Vec<f64>)> {
    let candidates = ts.candidate_actions();
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let rows: Vec<_> = candidates.iter().map(|&a| ts.row(a)).collect();
    let logs = net.log_flows(&rows_matrix(&rows))?;
    Ok((candidates, logs))
}

/// Edge flows normalized over the outgoing edges of `ts`.
pub fn forward_policy(net: &FlowNetwork, ts: &TrajectoryState) -> Result<Vec<(usize, f64)>> {
    let (candidates, logs) = candidate_log_flows(net, ts)?;
    let probs = softmax(&logs);
    Ok(candidates.into_iter().zip(probs).collect())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Roll out `budget` actions from `init`; returns `s_0 … s_f`.
pub fn sample_trajectory<O: LabelOracle + ?Sized>(
    net: &FlowNetwork,
    init: &TrajectoryState,
    budget: usize,
    oracle: &O,
    rng: &mut Rng,
) -> Result<Vec<TrajectoryState>> {
    let available = init.candidate_actions().len();
    if budget > available {
        return Err(Error::BudgetTooLarge {
            budget,
            pool: available,
        });
    }
    let mut states = Vec::with_capacity(budget + 1);
    states.push(init.clone());
    for _ in 0..budget {
        let current = states.last().expect("non-empty");
        let (candidates, logs) = candidate_log_flows(net, current)?;
        let probs = softmax(&logs);
        let pick = WeightedIndex::new(&probs)
            .map_err(|e| Error::NonFinite(format!("forward policy: {e}")))?
            .sample(rng);
        let next = current.apply_action(candidates[pick], oracle)?;
        states.push(next);
    }
    Ok(states)
}

/// Sum of edge flows from every parent into `ts`.
pub fn inflow(net: &FlowNetwork, ts: &TrajectoryState) -> Result<f64> {
    if ts.step() == 0 {
        return Err(Error::InitialState);
    }
    let rows = ts
        .selected_indices()
        .into_iter()
        .map(|j| ts.parent_edge_row(j))
        .collect::<Result<Vec<_>>>()?;
    Ok(net.log_flows(&rows_matrix(&rows))?.iter().map(|l| l.exp()).sum())
}

/// Sum of edge flows leaving `ts`.
pub fn outflow(net: &FlowNetwork, ts: &TrajectoryState) -> Result<f64> {
    let (_, logs) = candidate_log_flows(net, ts).map_err(|e| match e {
        Error::NoCandidates => Error::TerminalState,
        e => e,
    })?;
    Ok(logs.iter().map(|l| l.exp()).sum())
}

/// Flow-matching loss of one trajectory and its parameter gradient.
///
/// For every non-initial state, `(log(ε + inflow) − log(ε + outflow))²`, with
/// the terminal reward in place of the outflow at `s_f`.
pub fn flow_matching_loss(
    net: &FlowNetwork,
    trajectory: &[TrajectoryState],
    reward: f64,
    epsilon: f64,
) -> Result<(f64, Parameters)> {
    if !(reward > 0.0 && reward.is_finite()) {
        return Err(Error::NonPositiveReward(reward));
    }
    let mut loss = 0.0;
    let mut grads = net.mlp.params.zeros_like();
    let last = trajectory.len().saturating_sub(1);
    for (t, ts) in trajectory.iter().enumerate().skip(1) {
        let parents: Vec<[f64; 4]> = ts
            .selected_indices()
            .into_iter()
            .map(|j| ts.parent_edge_row(j))
            .collect::<Result<_>>()?;
        let children: Vec<[f64; 4]> = if t == last {
            Vec::new()
        } else {
            ts.candidate_actions().into_iter().map(|a| ts.row(a)).collect()
        };
        let rows: Vec<[f64; 4]> = parents.iter().chain(&children).copied().collect();
        let (out, tape) = net.mlp.forward(&rows_matrix(&rows))?;
        let flows: Vec<f64> = out.column(0).iter().map(|l| l.exp()).collect();
        let (in_flows, out_flows) = flows.split_at(parents.len());
        let inflow: f64 = in_flows.iter().sum();
        let outflow = if t == last {
            reward
        } else {
            out_flows.iter().sum()
        };
        let delta = (epsilon + inflow).ln() - (epsilon + outflow).ln();
        loss += delta * delta;

        let mut d_out = Array2::zeros((rows.len(), 1));
        for (k, f) in in_flows.iter().enumerate() {
            d_out[[k, 0]] = 2.0 * delta * f / (epsilon + inflow);
        }
        for (k, f) in out_flows.iter().enumerate() {
            d_out[[parents.len() + k, 0]] = -2.0 * delta * f / (epsilon + outflow);
        }
        let (g, _) = net.mlp.backward(&tape, &d_out)?;
        grads.add_scaled(&g, 1.0);
    }
    Ok((loss, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes_max: usize,
    pub trajectory_buffer: usize,
    pub epsilon: f64,
    pub learning_rate: f64,
    /// Stop when the mean loss of a window improves on the previous window
    /// by less than this fraction; `None` disables the check.
    pub plateau_tolerance: Option<f64>,
    pub plateau_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes_max: 2000,
            trajectory_buffer: 5,
            epsilon: 1e-8,
            learning_rate: 0.001,
            plateau_tolerance: Some(1e-4),
            plateau_window: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trajectory_buffer == 0 || self.plateau_window == 0 {
            return Err(Error::Config("trajectory_buffer and plateau_window must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.learning_rate > 0.0) {
            return Err(Error::Config("epsilon and learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub loss: f64,
    pub mean_reward: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeRecord>,
    pub stopped_on_plateau: bool,
}

impl TrainLog {
    fn plateaued(&self, window: usize, tolerance: f64) -> bool {
        let n = self.episodes.len();
        if n < 2 * window || !n.is_multiple_of(window) {
            return false;
        }
        let mean = |s: &[EpisodeRecord]| s.iter().map(|e| e.loss).sum::<f64>() / s.len() as f64;
        let prev = mean(&self.episodes[n - 2 * window..n - window]);
        let cur = mean(&self.episodes[n - window..]);
        prev <= 0.0 || (prev - cur) / prev < tolerance
    }
}

/// Everything a rollout needs besides the network.
pub struct PolicyEnv<'a, O: LabelOracle + ?Sized> {
    pub init: &'a TrajectoryState,
    pub oracle: &'a O,
    pub budget: usize,
}

/// Flow-matching training: each episode samples a buffer of trajectories,
/// averages their losses and takes one Adam step.
pub fn train_policy<O, R>(
    net: &mut FlowNetwork,
    env: &PolicyEnv<'_, O>,
    mut reward_fn: R,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainLog>
where
    O: LabelOracle + ?Sized,
    R: FnMut(&TrajectoryState) -> Result<f64>,
{
    config.validate()?;
    let mut optimizer = Optimizer::new(OptimizerConfig::adam(config.learning_rate));
    let mut log = TrainLog::default();
    for episode in 0..config.episodes_max {
        let mut grads = net.mlp.params.zeros_like();
        let mut loss = 0.0;
        let mut reward_sum = 0.0;
        for _ in 0..config.trajectory_buffer {
            let trajectory = sample_trajectory(net, env.init, env.budget, env.oracle, rng)?;
            let reward = reward_fn(trajectory.last().expect("non-empty"))?;
            let (l, g) = flow_matching_loss(net, &trajectory, reward, config.epsilon)?;
            loss += l;
            reward_sum += reward;
            grads.add_scaled(&g, 1.0);
        }
        let k = config.trajectory_buffer as f64;
        grads.scale(1.0 / k);
        optimizer.step(&mut net.mlp.params, &grads)?;
        log.episodes.push(EpisodeRecord {
            episode,
            loss: loss / k,
            mean_reward: reward_sum / k,
        });
        if let Some(tol) = config.plateau_tolerance {
            if log.plateaued(config.plateau_window, tol) {
                log::info!("flow-matching loss plateaued after {} episodes", episode + 1);
                log.stopped_on_plateau = true;
                break;
            }
        }
    }
    Ok(log)
}
