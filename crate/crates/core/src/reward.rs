//! Terminal reward: negative MMD between target and selected features plus
//! macro-averaged class accuracy, shifted to stay positive.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Offset added so that `−mmd + accuracy` maps into a positive range.
pub const REWARD_OFFSET: f64 = 1.0;

/// RBF bandwidths: an explicit list or the pooled median pairwise distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BandwidthRepr", into = "BandwidthRepr")]
pub enum Bandwidths {
    Median,
    Fixed(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BandwidthRepr {
    Token(String),
    List(Vec<f64>),
}

impl TryFrom<BandwidthRepr> for Bandwidths {
    type Error = String;

    fn try_from(r: BandwidthRepr) -> std::result::Result<Self, String> {
        match r {
            BandwidthRepr::Token(t) if t == "median" => Ok(Bandwidths::Median),
            BandwidthRepr::Token(t) => Err(format!("unknown bandwidth token {t:?}")),
            BandwidthRepr::List(v) if v.is_empty() => Err("empty bandwidth list".into()),
            BandwidthRepr::List(v) if v.iter().any(|s| !(s.is_finite() && *s > 0.0)) => {
                Err("bandwidths must be positive".into())
            }
            BandwidthRepr::List(v) => Ok(Bandwidths::Fixed(v)),
        }
    }
}

impl From<Bandwidths> for BandwidthRepr {
    fn from(b: Bandwidths) -> Self {
        match b {
            Bandwidths::Median => BandwidthRepr::Token("median".into()),
            Bandwidths::Fixed(v) => BandwidthRepr::List(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub kernel_bandwidths: Bandwidths,
    pub accuracy_weight: f64,
    pub mmd_weight: f64,
    pub reward_floor: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            kernel_bandwidths: Bandwidths::Median,
            accuracy_weight: 1.0,
            mmd_weight: 1.0,
            reward_floor: 1e-6,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.accuracy_weight >= 0.0 && self.mmd_weight >= 0.0) {
            return Err(Error::Config("reward weights must be non-negative".into()));
        }
        if !(self.reward_floor > 0.0 && self.reward_floor.is_finite()) {
            return Err(Error::Config("reward_floor must be positive".into()));
        }
        if let Bandwidths::Fixed(v) = &self.kernel_bandwidths {
            if v.is_empty() || v.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::Config("bandwidths must be positive".into()));
            }
        }
        Ok(())
    }
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over the pooled rows; 1 if degenerate.
pub fn median_bandwidth(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let pooled: Vec<_> = a.rows().into_iter().chain(b.rows()).collect();
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn kernel_mean(x: ArrayView2<f64>, y: ArrayView2<f64>, gammas: &[f64]) -> f64 {
    let mut total = 0.0;
    for xi in x.rows() {
        for yj in y.rows() {
            let d = sq_dist(xi, yj);
            total += gammas.iter().map(|g| (-g * d).exp()).sum::<f64>();
        }
    }
    total / (x.nrows() * y.nrows()) as f64
}

/// Biased (V-statistic) squared MMD under a sum of RBF kernels
/// `exp(−‖x−y‖² / 2σ²)`.
pub fn mmd(a: &Array2<f64>, b: &Array2<f64>, config: &RewardConfig) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::EmptyDomain);
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mmd input".into()));
    }
    let sigmas = match &config.kernel_bandwidths {
        Bandwidths::Median => vec![median_bandwidth(a.view(), b.view())],
        Bandwidths::Fixed(v) => v.clone(),
    };
    let gammas: Vec<f64> = sigmas.iter().map(|s| 1.0 / (2.0 * s * s)).collect();
    let aa = kernel_mean(a.view(), a.view(), &gammas);
    let bb = kernel_mean(b.view(), b.view(), &gammas);
    let ab = kernel_mean(a.view(), b.view(), &gammas);
    // The V-statistic is a squared RKHS norm; clip rounding below zero.
    Ok((aa + bb - 2.0 * ab).max(0.0))
}

/// Mean over classes present in `truth` of the per-class accuracy.
pub fn average_class_accuracy(predictions: &[Label], truth: &[Label]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let mut per_class: BTreeMap<Label, (usize, usize)> = BTreeMap::new();
    for (p, t) in predictions.iter().zip(truth) {
        let e = per_class.entry(*t).or_default();
        e.1 += 1;
        if p == t {
            e.0 += 1;
        }
    }
    let sum: f64 = per_class
        .values()
        .map(|&(hit, total)| hit as f64 / total as f64)
        .sum();
    Ok(sum / per_class.len() as f64)
}

/// Components of a terminal reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub value: f64,
    pub mmd: f64,
    pub accuracy: f64,
    /// Set when the floor was active.
    pub floored: bool,
}

/// `max(floor, −mmd_weight·MMD(target, selected) + accuracy_weight·acc + 1)`.
pub fn terminal_reward(
    target_features: &Array2<f64>,
    selected_features: &Array2<f64>,
    predictions: &[Label],
    truth: &[Label],
    config: &RewardConfig,
) -> Result<Reward> {
    let mmd = mmd(target_features, selected_features, config)?;
    let accuracy = average_class_accuracy(predictions, truth)?;
    Ok(combine(mmd, accuracy, config))
}

/// Reward from precomputed components.
pub fn combine(mmd: f64, accuracy: f64, config: &RewardConfig) -> Reward {
    let raw = -config.mmd_weight * mmd + config.accuracy_weight * accuracy + REWARD_OFFSET;
    let floored = !(raw > config.reward_floor);
    Reward {
        value: if floored { config.reward_floor } else { raw },
        mmd,
        accuracy,
        floored,
    }
}
