//! Selection-DAG state: an `n × 4` matrix over the target pool plus the
//! caches that make transitions cost `O(n)`.
//!
//! Columns: max cosine similarity to a selected sample, max cosine similarity
//! to a class prototype of the selected samples, prediction entropy, and the
//! labeled indicator. Additions use running maxima; removals (parent states)
//! rescan only the entries whose maximum was attained by the removed sample
//! or the moved prototype. [`compute_state_oracle`] recomputes everything from
//! scratch and is the reference both paths are tested against.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::{Domain, Label};
use crate::error::{Error, Result};
use crate::nn::entropy;

/// Value of the similarity columns while nothing is selected.
pub const SENTINEL: f64 = -1.0;

pub const INST_SIM: usize = 0;
pub const CLASS_SIM: usize = 1;
pub const ENTROPY: usize = 2;
pub const LABELED: usize = 3;

const DIST_TOL: f64 = 1e-6;

/// Source of ground-truth labels for selected target samples.
pub trait LabelOracle {
    fn reveal(&self, index: usize) -> Option<Label>;
}

impl LabelOracle for Domain {
    fn reveal(&self, index: usize) -> Option<Label> {
        Domain::reveal(self, index)
    }
}

impl LabelOracle for [Label] {
    fn reveal(&self, index: usize) -> Option<Label> {
        self.get(index).copied()
    }
}

impl LabelOracle for Vec<Label> {
    fn reveal(&self, index: usize) -> Option<Label> {
        self.get(index).copied()
    }
}

/// The `n × 4` state matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct StateMatrix(pub Array2<f64>);

impl StateMatrix {
    fn initial(entropy: &[f64]) -> Self {
        let mut m = Array2::zeros((entropy.len(), 4));
        for (i, h) in entropy.iter().enumerate() {
            m[[i, INST_SIM]] = SENTINEL;
            m[[i, CLASS_SIM]] = SENTINEL;
            m[[i, ENTROPY]] = *h;
        }
        StateMatrix(m)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn row(&self, i: usize) -> [f64; 4] {
        let r = self.0.row(i);
        [r[0], r[1], r[2], r[3]]
    }

    pub fn labeled_count(&self) -> usize {
        self.0.column(LABELED).iter().filter(|&&v| v == 1.0).count()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &StateMatrix) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Pairwise cosine similarities of the target features.
#[derive(Clone, Debug)]
pub struct SimilarityCache {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityCache {
    pub fn build(features: &Array2<f64>, norms: &[f64]) -> Self {
        let n = features.nrows();
        let gram = features.dot(&features.t());
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let c = cosine_from_dot(gram[[i, j]], norms[i], norms[j]);
                values[i * n + j] = c;
                values[j * n + i] = c;
            }
        }
        Self { n, values }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

#[inline]
fn cosine_from_dot(dot: f64, na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    cosine_from_dot(a.dot(&b), a.dot(&a).sqrt(), b.dot(&b).sqrt())
}

fn validate_predictions(predictions: &Array2<f64>) -> Result<Vec<f64>> {
    predictions
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let sum: f64 = row.sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > DIST_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "prediction row {i} is not a distribution (sum {sum})"
                )));
            }
            Ok(entropy(row.as_slice().unwrap_or(&row.to_vec())))
        })
        .collect()
}

/// Per-episode frozen quantities shared by every trajectory.
#[derive(Clone, Debug)]
pub struct Episode {
    features: Array2<f64>,
    norms: Vec<f64>,
    entropy: Vec<f64>,
    sim: SimilarityCache,
}

impl Episode {
    pub fn new(features: Array2<f64>, predictions: &Array2<f64>) -> Result<Self> {
        if features.nrows() != predictions.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: predictions.nrows(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target features".into()));
        }
        let entropy = validate_predictions(predictions)?;
        let norms: Vec<f64> = features.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let zeros = norms.iter().filter(|&&n| n == 0.0).count();
        if zeros > 0 {
            log::warn!("{zeros} zero-norm target feature vectors; their cosine similarities are 0");
        }
        let sim = SimilarityCache::build(&features, &norms);
        Ok(Self {
            features,
            norms,
            entropy,
            sim,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn entropy(&self) -> &[f64] {
        &self.entropy
    }

    pub fn similarity(&self) -> &SimilarityCache {
        &self.sim
    }

    #[inline]
    fn dot(&self, i: usize, j: usize) -> f64 {
        self.sim.get(i, j) * self.norms[i] * self.norms[j]
    }
}

/// Running class prototype with cached dot products against every target.
#[derive(Clone, Debug)]
pub struct Prototype {
    mean: Vec<f64>,
    count: usize,
    norm: f64,
    /// `mean · g(x_i)` for every target `i`.
    dots: Vec<f64>,
}

impl Prototype {
    fn singleton(ep: &Episode, j: usize) -> Self {
        let mean = ep.features.row(j).to_vec();
        Self {
            norm: ep.norms[j],
            dots: (0..ep.n()).map(|i| ep.dot(i, j)).collect(),
            mean,
            count: 1,
        }
    }

    fn added(&self, ep: &Episode, j: usize) -> Self {
        let c = self.count as f64;
        let mean: Vec<f64> = self
            .mean
            .iter()
            .zip(ep.features.row(j))
            .map(|(m, g)| (m * c + g) / (c + 1.0))
            .collect();
        Self {
            norm: norm(&mean),
            dots: (0..ep.n())
                .map(|i| (c * self.dots[i] + ep.dot(i, j)) / (c + 1.0))
                .collect(),
            mean,
            count: self.count + 1,
        }
    }

    /// `None` when `j` was the only member.
    fn removed(&self, ep: &Episode, j: usize) -> Option<Self> {
        if self.count <= 1 {
            return None;
        }
        let c = self.count as f64;
        let mean = self.removed_mean(ep, j);
        Some(Self {
            norm: norm(&mean),
            dots: (0..ep.n())
                .map(|i| (c * self.dots[i] - ep.dot(i, j)) / (c - 1.0))
                .collect(),
            mean,
            count: self.count - 1,
        })
    }

    fn removed_mean(&self, ep: &Episode, j: usize) -> Vec<f64> {
        let c = self.count as f64;
        self.mean
            .iter()
            .zip(ep.features.row(j))
            .map(|(m, g)| (m * c - g) / (c - 1.0))
            .collect()
    }

    #[inline]
    fn cos(&self, ep: &Episode, i: usize) -> f64 {
        cosine_from_dot(self.dots[i], self.norm, ep.norms[i])
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A node of the selection DAG together with its caches.
#[derive(Clone, Debug)]
pub struct TrajectoryState {
    episode: Arc<Episode>,
    state: StateMatrix,
    /// Selected index attaining the column-1 maximum of each row.
    inst_arg: Vec<Option<usize>>,
    /// Prototype class attaining the column-2 maximum of each row.
    class_arg: Vec<Option<Label>>,
    selected: Vec<(usize, Label)>,
    prototypes: BTreeMap<Label, Arc<Prototype>>,
}

/// Build the initial state from target features `g(x)` and class probabilities.
pub fn init_state(features: Array2<f64>, predictions: &Array2<f64>) -> Result<TrajectoryState> {
    Ok(TrajectoryState::initial(Arc::new(Episode::new(
        features,
        predictions,
    )?)))
}

impl TrajectoryState {
    pub fn initial(episode: Arc<Episode>) -> Self {
        let n = episode.n();
        Self {
            state: StateMatrix::initial(&episode.entropy),
            inst_arg: vec![None; n],
            class_arg: vec![None; n],
            selected: Vec::new(),
            prototypes: BTreeMap::new(),
            episode,
        }
    }

    pub fn episode(&self) -> &Arc<Episode> {
        &self.episode
    }

    pub fn state(&self) -> &StateMatrix {
        &self.state
    }

    pub fn n(&self) -> usize {
        self.episode.n()
    }

    pub fn step(&self) -> usize {
        self.selected.len()
    }

    pub fn selected(&self) -> &[(usize, Label)] {
        &self.selected
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        self.selected.iter().map(|&(i, _)| i).collect()
    }

    /// DAG node identity: the selected index set, independent of order.
    pub fn selected_set(&self) -> BTreeSet<usize> {
        self.selected.iter().map(|&(i, _)| i).collect()
    }

    pub fn is_selected(&self, i: usize) -> bool {
        self.state.0[[i, LABELED]] == 1.0
    }

    pub fn row(&self, i: usize) -> [f64; 4] {
        self.state.row(i)
    }

    pub fn prototypes(&self) -> impl Iterator<Item = (Label, &Prototype)> {
        self.prototypes.iter().map(|(l, p)| (*l, p.as_ref()))
    }

    /// Unselected target indices.
    pub fn candidate_actions(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.is_selected(i)).collect()
    }

    fn best_class(&self, i: usize) -> (f64, Option<Label>) {
        let mut best = (SENTINEL, None);
        for (&label, p) in &self.prototypes {
            let c = p.cos(&self.episode, i);
            if best.1.is_none() || c > best.0 {
                best = (c, Some(label));
            }
        }
        best
    }

    fn best_instance(&self, i: usize) -> (f64, Option<usize>) {
        let mut best = (SENTINEL, None);
        for &(k, _) in &self.selected {
            let c = self.episode.sim.get(i, k);
            if best.1.is_none() || c > best.0 {
                best = (c, Some(k));
            }
        }
        best
    }

    /// Child state after selecting `action` and revealing its label.
    pub fn apply_action<O: LabelOracle + ?Sized>(&self, action: usize, oracle: &O) -> Result<Self> {
        if action >= self.n() {
            return Err(Error::InvalidAction {
                action,
                reason: "index out of range",
            });
        }
        if self.is_selected(action) {
            return Err(Error::InvalidAction {
                action,
                reason: "already selected",
            });
        }
        let label = oracle.reveal(action).ok_or(Error::InvalidAction {
            action,
            reason: "oracle has no label",
        })?;
        let ep = Arc::clone(&self.episode);
        let mut next = self.clone();
        next.selected.push((action, label));
        next.state.0[[action, LABELED]] = 1.0;

        for i in 0..ep.n() {
            let s = ep.sim.get(i, action);
            if next.inst_arg[i].is_none() || s > next.state.0[[i, INST_SIM]] {
                next.state.0[[i, INST_SIM]] = s;
                next.inst_arg[i] = Some(action);
            }
        }

        let proto = match self.prototypes.get(&label) {
            Some(p) => p.added(&ep, action),
            None => Prototype::singleton(&ep, action),
        };
        next.prototypes.insert(label, Arc::new(proto));
        let proto = Arc::clone(&next.prototypes[&label]);
        for i in 0..ep.n() {
            let c = proto.cos(&ep, i);
            let current = next.state.0[[i, CLASS_SIM]];
            if next.class_arg[i] == Some(label) && c < current {
                // The moved prototype held the maximum; rescan classes.
                let (v, arg) = next.best_class(i);
                next.state.0[[i, CLASS_SIM]] = v;
                next.class_arg[i] = arg;
            } else if next.class_arg[i].is_none() || c > current || next.class_arg[i] == Some(label)
            {
                next.state.0[[i, CLASS_SIM]] = c;
                next.class_arg[i] = Some(label);
            }
        }
        Ok(next)
    }

    /// Parent state obtained by un-selecting `index`.
    pub fn remove(&self, index: usize) -> Result<Self> {
        let pos = self
            .selected
            .iter()
            .position(|&(i, _)| i == index)
            .ok_or(Error::InvalidAction {
                action: index,
                reason: "not selected",
            })?;
        let ep = Arc::clone(&self.episode);
        let mut parent = self.clone();
        let (_, label) = parent.selected.remove(pos);
        parent.state.0[[index, LABELED]] = 0.0;

        for i in 0..ep.n() {
            if parent.inst_arg[i] == Some(index) {
                let (v, arg) = parent.best_instance(i);
                parent.state.0[[i, INST_SIM]] = v;
                parent.inst_arg[i] = arg;
            }
        }

        let downdated = self.prototypes[&label].removed(&ep, index);
        match downdated {
            Some(p) => {
                parent.prototypes.insert(label, Arc::new(p));
            }
            None => {
                parent.prototypes.remove(&label);
            }
        }
        let moved = parent.prototypes.get(&label).cloned();
        for i in 0..ep.n() {
            if parent.class_arg[i] == Some(label) {
                let (v, arg) = parent.best_class(i);
                parent.state.0[[i, CLASS_SIM]] = v;
                parent.class_arg[i] = arg;
            } else if let Some(p) = &moved {
                let c = p.cos(&ep, i);
                if c > parent.state.0[[i, CLASS_SIM]] {
                    parent.state.0[[i, CLASS_SIM]] = c;
                    parent.class_arg[i] = Some(label);
                }
            }
        }
        Ok(parent)
    }

    /// One parent per selected sample, each paired with the removed index.
    pub fn enumerate_parents(&self) -> Vec<(TrajectoryState, usize)> {
        self.selected
            .iter()
            .map(|&(j, _)| (self.remove(j).expect("selected index"), j))
            .collect()
    }

    /// Row `j` of the parent obtained by removing `j`, i.e. the state row
    /// scored by the edge `parent → self`. Costs `O(t + d_z + |classes|)`.
    pub fn parent_edge_row(&self, j: usize) -> Result<[f64; 4]> {
        let label = self
            .selected
            .iter()
            .find(|&&(i, _)| i == j)
            .map(|&(_, l)| l)
            .ok_or(Error::InvalidAction {
                action: j,
                reason: "not selected",
            })?;
        let ep = &self.episode;
        let mut inst = None::<f64>;
        for &(k, _) in &self.selected {
            if k != j {
                let s = ep.sim.get(j, k);
                inst = Some(inst.map_or(s, |m| m.max(s)));
            }
        }
        let mut class = None::<f64>;
        for (&l, p) in &self.prototypes {
            let c = if l == label {
                if p.count <= 1 {
                    continue;
                }
                let mean = p.removed_mean(ep, j);
                let dot: f64 = mean.iter().zip(ep.features.row(j)).map(|(a, b)| a * b).sum();
                cosine_from_dot(dot, norm(&mean), ep.norms[j])
            } else {
                p.cos(ep, j)
            };
            class = Some(class.map_or(c, |m| m.max(c)));
        }
        Ok([
            inst.unwrap_or(SENTINEL),
            class.unwrap_or(SENTINEL),
            ep.entropy[j],
            0.0,
        ])
    }
}

/// Recompute the state matrix from scratch for a selected set.
pub fn compute_state_oracle(
    features: &Array2<f64>,
    predictions: &Array2<f64>,
    selected: &[(usize, Label)],
) -> Result<StateMatrix> {
    let entropy = validate_predictions(predictions)?;
    let mut state = StateMatrix::initial(&entropy);
    let prototypes = prototype_oracle(features, selected);
    for i in 0..features.nrows() {
        let gi = features.row(i);
        let inst = selected
            .iter()
            .map(|&(j, _)| cosine(gi, features.row(j)))
            .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c))));
        let class = prototypes
            .values()
            .map(|(mean, _)| cosine(gi, ArrayView1::from(mean.as_slice())))
            .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.max(c))));
        state.0[[i, INST_SIM]] = inst.unwrap_or(SENTINEL);
        state.0[[i, CLASS_SIM]] = class.unwrap_or(SENTINEL);
    }
    for &(j, _) in selected {
        state.0[[j, LABELED]] = 1.0;
    }
    Ok(state)
}

/// Class means and counts computed directly from the selected members.
pub fn prototype_oracle(
    features: &Array2<f64>,
    selected: &[(usize, Label)],
) -> BTreeMap<Label, (Vec<f64>, usize)> {
    let mut sums: BTreeMap<Label, (Vec<f64>, usize)> = BTreeMap::new();
    for &(j, label) in selected {
        let entry = sums
            .entry(label)
            .or_insert_with(|| (vec![0.0; features.ncols()], 0));
        for (s, g) in entry.0.iter_mut().zip(features.row(j)) {
            *s += g;
        }
        entry.1 += 1;
    }
    for (sum, count) in sums.values_mut() {
        for s in sum.iter_mut() {
            *s /= *count as f64;
        }
    }
    sums
}

/// One line of a trajectory dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub index: usize,
    pub label: Label,
    /// Row of the chosen sample just before it was selected.
    pub row: [f64; 4],
}

/// Per-step records of a trajectory `s_0 … s_f`.
pub fn trajectory_records(states: &[TrajectoryState]) -> Vec<TrajectoryRecord> {
    states
        .windows(2)
        .enumerate()
        .map(|(step, w)| {
            let &(index, label) = w[1].selected.last().expect("child has a selection");
            TrajectoryRecord {
                step,
                index,
                label,
                row: w[0].row(index),
            }
        })
        .collect()
}

/// Write a trajectory as JSON lines.
pub fn dump_trajectory<W: Write>(states: &[TrajectoryState], mut out: W) -> Result<()> {
    for record in trajectory_records(states) {
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
