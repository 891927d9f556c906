//! End-to-end runs: scenario construction, the selection strategies, final
//! adaptation, metrics and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{
    apply_subsample_protocol, empirical_label_distribution, generate_scenario, jsd, load_domain_csv,
    Domain, DomainRole, Label, LabelDistribution, ScenarioSpec,
};
use crate::error::{Error, Result};
use crate::guan::{train_guan, GuanConfig, GuanData, GuanModel};
use crate::policy::{sample_trajectory, train_policy, EpisodeRecord, FlowNetwork, PolicyEnv, TrainConfig};
use crate::reward::{average_class_accuracy, terminal_reward, Reward, RewardConfig};
use crate::rng::{indexed_substream, substream};
use crate::state::{init_state, TrajectoryState, ENTROPY};
use crate::theory::{bound_report, BoundReport, DiscreteJoint, LabelSpaces};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Gflowda,
    Random,
    Entropy,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Gflowda => "gflowda",
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gflowda" => Ok(Strategy::Gflowda),
            "random" => Ok(Strategy::Random),
            "entropy" => Ok(Strategy::Entropy),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioSource {
    /// Generated from a spec; its seed is replaced by the run seed.
    Synthetic(ScenarioSpec),
    Files { source: PathBuf, target: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSource,
    /// Per-label retain fractions applied to the source domain.
    pub source_subsample: Option<BTreeMap<Label, f64>>,
    pub budget_fraction: f64,
    pub train: TrainConfig,
    pub reward: RewardConfig,
    pub guan: GuanConfig,
    pub pretrain_epochs: usize,
    pub guan_epochs_per_reward: usize,
    pub final_epochs: usize,
    /// Terminal sets sampled from the trained policy to pick the final one.
    pub final_candidates: usize,
    pub fine_tune_episodes: usize,
    pub eval_split_fraction: f64,
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSource::Synthetic(reference_scenario()),
            source_subsample: None,
            budget_fraction: 0.05,
            train: TrainConfig {
                episodes_max: 100,
                plateau_tolerance: None,
                ..TrainConfig::default()
            },
            reward: RewardConfig::default(),
            guan: GuanConfig::default(),
            pretrain_epochs: 150,
            guan_epochs_per_reward: 50,
            final_epochs: 150,
            final_candidates: 32,
            fine_tune_episodes: 30,
            eval_split_fraction: 0.2,
            strategy: Strategy::Gflowda,
            seeds: vec![0],
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::Config("budget_fraction must lie in (0, 1]".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if !(self.eval_split_fraction > 0.0 && self.eval_split_fraction < 1.0) {
            return Err(Error::Config("eval_split_fraction must lie in (0, 1)".into()));
        }
        if self.final_candidates == 0 {
            return Err(Error::Config("final_candidates must be positive".into()));
        }
        if let ScenarioSource::Synthetic(spec) = &self.scenario {
            spec.validate()?;
        }
        self.train.validate()?;
        self.reward.validate()
    }
}

/// Two-dimensional scenario with 4 common, 2 source-private and 2
/// target-private classes placed on a circle, a small mean shift and
/// different label priors on each side.
pub fn reference_scenario() -> ScenarioSpec {
    let means = (0..8u32)
        .map(|k| {
            let a = k as f64 * std::f64::consts::PI / 4.0;
            (Label(k), vec![4.0 * a.cos(), 4.0 * a.sin()])
        })
        .collect();
    let dist = |pairs: &[(u32, f64)]| {
        LabelDistribution::from_pairs(pairs.iter().map(|&(l, p)| (Label(l), p))).expect("static priors")
    };
    ScenarioSpec {
        feature_dim: 2,
        common_labels: [0, 1, 2, 3].map(Label).to_vec(),
        source_private: [4, 5].map(Label).to_vec(),
        target_private: [6, 7].map(Label).to_vec(),
        source_priors: dist(&[(0, 0.1), (1, 0.15), (2, 0.2), (3, 0.25), (4, 0.15), (5, 0.15)]),
        target_priors: dist(&[(0, 0.3), (1, 0.2), (2, 0.1), (3, 0.05), (6, 0.25), (7, 0.1)]),
        class_means: means,
        target_offset: vec![0.4, -0.3],
        target_means: BTreeMap::new(),
        class_scales: (0..8u32).map(|k| (Label(k), 0.8)).collect(),
        source_count: 400,
        target_count: 400,
        seed: 0,
    }
}

/// Source domain, unlabeled target pool and labeled evaluation split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub source: Domain,
    pub pool: Domain,
    pub eval: Domain,
}

/// Build the domains for one seed. Synthetic scenarios draw the evaluation
/// split as extra target samples; file scenarios carve it out of the target.
pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let (mut source, pool, eval) = match &config.scenario {
        ScenarioSource::Synthetic(spec) => {
            let mut spec = spec.clone();
            spec.seed = seed;
            let (source, pool) = generate_scenario(&spec)?;
            let count = ((spec.target_count as f64) * config.eval_split_fraction).round().max(1.0) as usize;
            let eval = spec.sample_domain(DomainRole::Target, count, &mut substream(seed, "scenario/eval"))?;
            (source, pool, eval)
        }
        ScenarioSource::Files { source, target } => {
            let source = load_domain_csv(source, DomainRole::Source)?;
            let target = load_domain_csv(target, DomainRole::Target)?;
            if target.examples.iter().any(|e| e.label.is_none()) {
                return Err(Error::Config("target CSV needs ground-truth labels for evaluation".into()));
            }
            let mut order: Vec<usize> = (0..target.len()).collect();
            order.shuffle(&mut substream(seed, "eval-split"));
            let count = ((target.len() as f64) * config.eval_split_fraction).round().max(1.0) as usize;
            if count >= target.len() {
                return Err(Error::Config("evaluation split leaves an empty pool".into()));
            }
            let mut eval_idx = order[..count].to_vec();
            let mut pool_idx = order[count..].to_vec();
            eval_idx.sort_unstable();
            pool_idx.sort_unstable();
            let mut pool = target.subset(DomainRole::Target, &pool_idx);
            pool.label_space = target.label_space.clone();
            (source, pool, target.subset(DomainRole::Target, &eval_idx))
        }
    };
    if let Some(retain) = &config.source_subsample {
        source = apply_subsample_protocol(&source, retain, seed)?;
    }
    if source.dim() != pool.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim().unwrap_or(0),
            got: pool.dim().unwrap_or(0),
        });
    }
    Ok(Prepared { source, pool, eval })
}

/// `⌈fraction · n⌉`.
pub fn budget_for(fraction: f64, n: usize) -> Result<usize> {
    let b = (fraction * n as f64 - 1e-9).ceil().max(1.0) as usize;
    if b > n {
        return Err(Error::BudgetTooLarge { budget: b, pool: n });
    }
    Ok(b)
}

fn truth(domain: &Domain) -> Result<Vec<Label>> {
    domain
        .labels()
        .into_iter()
        .map(|l| l.ok_or_else(|| Error::Config("domain has unlabeled examples".into())))
        .collect()
}

/// Source-trained model plus the frozen episode it induces on the pool.
pub struct Session {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub data: Prepared,
    pub base: GuanModel,
    pub pool_features: Array2<f64>,
    pub init: TrajectoryState,
    pub budget: usize,
    eval_x: Array2<f64>,
    eval_y: Vec<Label>,
    cache: BTreeMap<Vec<usize>, Reward>,
}

impl Session {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let data = prepare(config, seed)?;
        let budget = budget_for(config.budget_fraction, data.pool.len())?;
        let dim = data.source.dim().ok_or(Error::EmptyDomain)?;
        let mut base = GuanModel::new(
            dim,
            &data.source.label_space,
            config.guan.clone(),
            &mut substream(seed, "guan-init"),
        )?;
        let pre = GuanData::from_domains(&data.source, &data.pool, &[])?;
        train_guan(&mut base, &pre, config.pretrain_epochs, &mut substream(seed, "guan-pretrain"))?;
        let pool_x = data.pool.feature_matrix();
        let pool_features = base.features(&pool_x)?;
        let init = init_state(pool_features.clone(), &base.probabilities(&pool_x)?)?;
        let eval_x = data.eval.feature_matrix();
        let eval_y = truth(&data.eval)?;
        Ok(Self {
            seed,
            config: config.clone(),
            data,
            base,
            pool_features,
            init,
            budget,
            eval_x,
            eval_y,
            cache: BTreeMap::new(),
        })
    }

    /// Reward of a selection: a clone of the source-trained model is adapted
    /// with the revealed labels, scored on the evaluation split, and the
    /// selection is compared with the pool in the frozen feature space.
    /// Results are cached per index set.
    pub fn reward(&mut self, selected: &[usize]) -> Result<Reward> {
        let mut key = selected.to_vec();
        key.sort_unstable();
        if let Some(r) = self.cache.get(&key) {
            return Ok(*r);
        }
        let mut model = self.base.clone();
        let data = GuanData::from_domains(&self.data.source, &self.data.pool, &key)?;
        let mut rng = indexed_substream(self.seed, "reward-guan", set_hash(&key));
        train_guan(&mut model, &data, self.config.guan_epochs_per_reward, &mut rng)?;
        let preds = model.predict_labels(&self.eval_x)?;
        let chosen = self.pool_features.select(Axis(0), &key);
        let r = terminal_reward(&self.pool_features, &chosen, &preds, &self.eval_y, &self.config.reward)?;
        self.cache.insert(key, r);
        Ok(r)
    }

    pub fn cached_rewards(&self) -> usize {
        self.cache.len()
    }

    /// Train (unless `episodes` is 0) and pick the best of
    /// `final_candidates` sampled terminal sets.
    pub fn select_with_policy(
        &mut self,
        net: &mut FlowNetwork,
        episodes: usize,
    ) -> Result<(Vec<usize>, Vec<EpisodeRecord>)> {
        let init = self.init.clone();
        let pool = self.data.pool.clone();
        let env = PolicyEnv {
            init: &init,
            oracle: &pool,
            budget: self.budget,
        };
        let cfg = TrainConfig {
            episodes_max: episodes,
            ..self.config.train.clone()
        };
        let mut rollout = substream(self.seed, "rollout");
        let log = train_policy(
            net,
            &env,
            |ts| Ok(self.reward(&ts.selected_indices())?.value),
            &cfg,
            &mut rollout,
        )?;
        let mut rng = substream(self.seed, "final-selection");
        let mut best: Option<(f64, Vec<usize>)> = None;
        for _ in 0..self.config.final_candidates {
            let traj = sample_trajectory(net, &init, self.budget, &pool, &mut rng)?;
            let set = traj.last().expect("non-empty").selected_indices();
            let r = self.reward(&set)?.value;
            if best.as_ref().is_none_or(|(v, _)| r > *v) {
                best = Some((r, set));
            }
        }
        Ok((best.expect("at least one candidate").1, log.episodes))
    }

    /// Top-`budget` pool indices by prediction entropy; ties go to the lower index.
    pub fn entropy_selection(&self) -> Vec<usize> {
        let col = self.init.state().0.column(ENTROPY).to_vec();
        let mut order: Vec<usize> = (0..col.len()).collect();
        order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
        order.truncate(self.budget);
        order
    }

    pub fn random_selection(&self) -> Vec<usize> {
        rand::seq::index::sample(
            &mut substream(self.seed, "random-selection"),
            self.data.pool.len(),
            self.budget,
        )
        .into_vec()
    }

    /// Final adaptation with `selected` revealed, then metrics.
    pub fn finish(
        &mut self,
        strategy: &str,
        selected: Vec<usize>,
        curves: Vec<EpisodeRecord>,
        started: Instant,
    ) -> Result<RunResult> {
        let reward = self.reward(&selected)?;
        let mut model = self.base.clone();
        let data = GuanData::from_domains(&self.data.source, &self.data.pool, &selected)?;
        train_guan(&mut model, &data, self.config.final_epochs, &mut substream(self.seed, "guan-final"))?;

        let pool_truth = truth(&self.data.pool)?;
        let pool_pred = model.predict_labels(&data.xt)?;
        let accuracy = average_class_accuracy(&pool_pred, &pool_truth)?;
        let eval_accuracy = average_class_accuracy(&model.predict_labels(&self.eval_x)?, &self.eval_y)?;
        let chosen = self.data.pool.subset(DomainRole::Selected, &selected);
        let jsd_value = jsd(
            &empirical_label_distribution(&chosen)?,
            &empirical_label_distribution(&self.data.pool)?,
        );
        let discovered: BTreeSet<Label> = data.yl.iter().copied().collect();

        let bound = self.bound_estimate(&model, &data, &pool_pred, &pool_truth, &discovered);
        let projection = project(&self.data.pool, &selected)?;
        let mut sorted = selected;
        sorted.sort_unstable();
        Ok(RunResult {
            strategy: strategy.to_string(),
            seed: self.seed,
            budget: self.budget,
            pool_size: self.data.pool.len(),
            accuracy,
            eval_accuracy,
            jsd: jsd_value,
            reward,
            classes_discovered: discovered.len(),
            selected_labels: sorted.iter().map(|&i| pool_truth[i]).collect(),
            selected: sorted,
            curves,
            bound,
            projection,
            runtime_secs: started.elapsed().as_secs_f64(),
        })
    }

    fn bound_estimate(
        &self,
        model: &GuanModel,
        data: &GuanData,
        pool_pred: &[Label],
        pool_truth: &[Label],
        selected_labels: &BTreeSet<Label>,
    ) -> Option<BoundReport> {
        let s = &self.data.source.label_space;
        let t = &self.data.pool.label_space;
        let spaces = LabelSpaces {
            common: s.intersection(t).copied().collect(),
            source_private: s.difference(t).copied().collect(),
            target_private: t.difference(s).copied().collect(),
            selected: selected_labels.clone(),
        };
        let estimate = || -> Result<BoundReport> {
            let js = DiscreteJoint::from_predictions(&data.ys, &model.predict_labels(&data.xs)?)?;
            let jl = DiscreteJoint::from_predictions(&data.yl, &model.predict_labels(&data.xl)?)?;
            let jt = DiscreteJoint::from_predictions(pool_truth, pool_pred)?;
            bound_report(&js, &jl, &jt, &spaces, true)
        };
        estimate()
            .map_err(|e| log::warn!("bound estimate unavailable: {e}"))
            .ok()
    }
}

fn set_hash(key: &[usize]) -> u64 {
    key.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &i| {
        (h ^ i as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub x: f64,
    pub y: f64,
    pub label: Label,
    pub selected: bool,
}

/// First two principal components of the pool's raw features.
pub fn pca_2d(x: &Array2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, 2));
    if n == 0 || d == 0 {
        return out;
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = x - &mean;
    let m = DMatrix::from_row_iterator(n, d, centered.iter().copied());
    let cov = m.transpose() * &m / n.max(2).saturating_sub(1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    for (c, &k) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        // Fix the sign so the largest-magnitude loading is positive.
        let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            v.iter_mut().for_each(|e| *e = -*e);
        }
        for (r, row) in centered.rows().into_iter().enumerate() {
            out[[r, c]] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
    }
    out
}

fn project(pool: &Domain, selected: &[usize]) -> Result<Vec<ProjectionRow>> {
    let coords = pca_2d(&pool.feature_matrix());
    let chosen: BTreeSet<usize> = selected.iter().copied().collect();
    let labels = truth(pool)?;
    Ok((0..pool.len())
        .map(|i| ProjectionRow {
            x: coords[[i, 0]],
            y: coords[[i, 1]],
            label: labels[i],
            selected: chosen.contains(&i),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub strategy: String,
    pub seed: u64,
    pub budget: usize,
    pub pool_size: usize,
    /// Average class accuracy on the target pool after final adaptation.
    pub accuracy: f64,
    /// Average class accuracy on the evaluation split.
    pub eval_accuracy: f64,
    /// JSD between the selected and pool label distributions, in bits.
    pub jsd: f64,
    pub reward: Reward,
    pub classes_discovered: usize,
    pub selected: Vec<usize>,
    pub selected_labels: Vec<Label>,
    pub curves: Vec<EpisodeRecord>,
    pub bound: Option<BoundReport>,
    pub projection: Vec<ProjectionRow>,
    pub runtime_secs: f64,
}

/// Train a policy from scratch and select with it.
pub fn run_gflowda(config: &ExperimentConfig, seed: u64) -> Result<(RunResult, FlowNetwork)> {
    let started = Instant::now();
    let mut session = Session::new(config, seed)?;
    let mut net = FlowNetwork::new(&mut substream(seed, "policy-init"));
    let (selected, curves) = session.select_with_policy(&mut net, config.train.episodes_max)?;
    log::info!(
        "seed {seed}: {} distinct rewards evaluated",
        session.cached_rewards()
    );
    Ok((session.finish("gflowda", selected, curves, started)?, net))
}

pub fn run_baseline(config: &ExperimentConfig, strategy: Strategy, seed: u64) -> Result<RunResult> {
    let started = Instant::now();
    let mut session = Session::new(config, seed)?;
    let selected = match strategy {
        Strategy::Random => session.random_selection(),
        Strategy::Entropy => session.entropy_selection(),
        Strategy::Gflowda => return Err(Error::Config("gflowda is not a baseline".into())),
    };
    session.finish(strategy.name(), selected, Vec::new(), started)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferMode {
    Frozen,
    FineTune,
}

/// Select on a new scenario with a previously trained policy, either as is
/// or after `fine_tune_episodes` more episodes.
pub fn transfer_policy(
    checkpoint: &Path,
    config: &ExperimentConfig,
    mode: TransferMode,
    seed: u64,
) -> Result<(RunResult, FlowNetwork)> {
    let started = Instant::now();
    let mut net = FlowNetwork::load(checkpoint)?;
    let mut session = Session::new(config, seed)?;
    let (episodes, name) = match mode {
        TransferMode::Frozen => (0, "transfer-frozen"),
        TransferMode::FineTune => (config.fine_tune_episodes, "transfer-fine-tune"),
    };
    let (selected, curves) = session.select_with_policy(&mut net, episodes)?;
    Ok((session.finish(name, selected, curves, started)?, net))
}

/// One run per configured seed with the configured strategy.
pub fn run_all(config: &ExperimentConfig) -> Result<Vec<(RunResult, Option<FlowNetwork>)>> {
    config
        .seeds
        .iter()
        .map(|&seed| match config.strategy {
            Strategy::Gflowda => run_gflowda(config, seed).map(|(r, n)| (r, Some(n))),
            s => run_baseline(config, s, seed).map(|r| (r, None)),
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(row).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BoundEntry<'a> {
    strategy: &'a str,
    seed: u64,
    report: &'a Option<BoundReport>,
}

/// Write `results.csv`, `timing.csv`, `curves.csv`, `bound.json`,
/// `projection.csv` and `runs.json` into `dir`.
///
/// Every file except `timing.csv` depends only on the results, so repeated
/// runs with the same config and seed reproduce them byte for byte.
pub fn emit_report(results: &[RunResult], dir: &Path) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Config("no results to report".into()));
    }
    fs::create_dir_all(dir)?;
    write_rows(
        &dir.join("results.csv"),
        &[
            "strategy",
            "seed",
            "budget",
            "accuracy",
            "eval_accuracy",
            "jsd",
            "reward",
            "mmd",
            "reward_accuracy",
            "classes_discovered",
        ],
        results.iter().map(|r| {
            vec![
                r.strategy.clone(),
                r.seed.to_string(),
                r.budget.to_string(),
                r.accuracy.to_string(),
                r.eval_accuracy.to_string(),
                r.jsd.to_string(),
                r.reward.value.to_string(),
                r.reward.mmd.to_string(),
                r.reward.accuracy.to_string(),
                r.classes_discovered.to_string(),
            ]
        }),
    )?;
    write_rows(
        &dir.join("timing.csv"),
        &["strategy", "seed", "runtime_secs"],
        results
            .iter()
            .map(|r| vec![r.strategy.clone(), r.seed.to_string(), r.runtime_secs.to_string()]),
    )?;
    write_rows(
        &dir.join("curves.csv"),
        &["strategy", "seed", "episode", "loss", "mean_reward"],
        results.iter().flat_map(|r| {
            r.curves.iter().map(move |e| {
                vec![
                    r.strategy.clone(),
                    r.seed.to_string(),
                    e.episode.to_string(),
                    e.loss.to_string(),
                    e.mean_reward.to_string(),
                ]
            })
        }),
    )?;
    let bounds: Vec<BoundEntry> = results
        .iter()
        .map(|r| BoundEntry {
            strategy: &r.strategy,
            seed: r.seed,
            report: &r.bound,
        })
        .collect();
    fs::write(dir.join("bound.json"), serde_json::to_string_pretty(&bounds)?)?;
    write_projection(&results[0], &dir.join("projection.csv"))?;
    if results.len() > 1 {
        for r in results {
            write_projection(r, &dir.join(format!("projection_{}_{}.csv", r.strategy, r.seed)))?;
        }
    }
    fs::write(dir.join("runs.json"), serde_json::to_string(results)?)?;
    Ok(())
}

fn write_projection(r: &RunResult, path: &Path) -> Result<()> {
    write_rows(
        path,
        &["x", "y", "label", "selected"],
        r.projection.iter().map(|p| {
            vec![
                p.x.to_string(),
                p.y.to_string(),
                p.label.to_string(),
                u8::from(p.selected).to_string(),
            ]
        }),
    )
}

pub fn load_runs(path: &Path) -> Result<Vec<RunResult>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut spec = reference_scenario();
        spec.source_count = 80;
        spec.target_count = 60;
        ExperimentConfig {
            scenario: ScenarioSource::Synthetic(spec),
            budget_fraction: 0.1,
            train: TrainConfig {
                episodes_max: 3,
                trajectory_buffer: 2,
                plateau_tolerance: None,
                ..TrainConfig::default()
            },
            pretrain_epochs: 20,
            guan_epochs_per_reward: 5,
            final_epochs: 10,
            final_candidates: 4,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn budget_is_ceiling() {
        assert_eq!(budget_for(0.05, 400).unwrap(), 20);
        assert_eq!(budget_for(0.05, 401).unwrap(), 21);
        assert_eq!(budget_for(1.0, 7).unwrap(), 7);
        assert_eq!(budget_for(0.01, 10).unwrap(), 1);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.budget_fraction = 0.0;
        assert!(cfg.validate().is_err());
        cfg.budget_fraction = 0.5;
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        let json = serde_json::to_string(&ExperimentConfig::default()).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ExperimentConfig::default());
        let partial: ExperimentConfig = serde_json::from_str(r#"{"strategy":"entropy","seeds":[3]}"#).unwrap();
        assert_eq!(partial.strategy, Strategy::Entropy);
    }

    #[test]
    fn entropy_selection_matches_sort_oracle() {
        let session = Session::new(&tiny_config(), 1).unwrap();
        let ent = session.init.episode().entropy().to_vec();
        let got = session.entropy_selection();
        let mut pairs: Vec<(f64, usize)> = ent.iter().copied().zip(0..).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<usize> = pairs[..session.budget].iter().map(|p| p.1).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn baselines_are_reproducible_and_exact_size() {
        let cfg = tiny_config();
        for s in [Strategy::Random, Strategy::Entropy] {
            let a = run_baseline(&cfg, s, 4).unwrap();
            let b = run_baseline(&cfg, s, 4).unwrap();
            assert_eq!(a.selected, b.selected);
            assert_eq!(a.selected.len(), 6);
            assert_eq!(a.accuracy, b.accuracy);
        }
    }

    #[test]
    fn full_budget_selects_everything() {
        let mut cfg = tiny_config();
        cfg.budget_fraction = 1.0;
        let r = run_baseline(&cfg, Strategy::Random, 2).unwrap();
        assert_eq!(r.selected, (0..60).collect::<Vec<_>>());
        assert_eq!(r.jsd, 0.0);
    }

    #[test]
    fn gflowda_run_and_transfer() {
        let cfg = tiny_config();
        let (r, net) = run_gflowda(&cfg, 5).unwrap();
        assert_eq!(r.selected.len(), r.budget);
        assert_eq!(r.curves.len(), 3);
        assert!(r.reward.value > 0.0);
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("policy.json");
        net.save(&ckpt).unwrap();
        let (frozen, _) = transfer_policy(&ckpt, &cfg, TransferMode::Frozen, 6).unwrap();
        let (tuned, _) = transfer_policy(&ckpt, &cfg, TransferMode::FineTune, 6).unwrap();
        assert!(frozen.curves.is_empty());
        assert_eq!(tuned.curves.len(), cfg.fine_tune_episodes);
        assert_eq!(frozen.selected.len(), tuned.selected.len());
    }

    #[test]
    fn report_files_are_reproducible() {
        let cfg = tiny_config();
        let r = run_baseline(&cfg, Strategy::Entropy, 0).unwrap();
        let s = run_baseline(&cfg, Strategy::Random, 0).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        emit_report(&[r.clone(), s.clone()], a.path()).unwrap();
        let reloaded = load_runs(&a.path().join("runs.json")).unwrap();
        assert_eq!(reloaded, vec![r, s]);
        emit_report(&reloaded, b.path()).unwrap();
        for f in ["results.csv", "curves.csv", "bound.json", "projection.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let results = fs::read_to_string(a.path().join("results.csv")).unwrap();
        assert_eq!(results.lines().count(), 3);
        let proj = fs::read_to_string(a.path().join("projection.csv")).unwrap();
        assert_eq!(proj.lines().next().unwrap(), "x,y,label,selected");
        assert_eq!(proj.lines().count(), 61);
        assert!(emit_report(&[], a.path()).is_err());
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let x = Array2::from_shape_fn((50, 2), |(i, k)| if k == 0 { i as f64 } else { 0.01 * (i % 3) as f64 });
        let p = pca_2d(&x);
        let spread0 = p.column(0).iter().map(|v| v * v).sum::<f64>();
        let spread1 = p.column(1).iter().map(|v| v * v).sum::<f64>();
        assert!(spread0 > 100.0 * spread1);
        assert!(p[[49, 0]] > 0.0);
    }

    #[test]
    fn file_scenario_splits_target() {
        let dir = tempfile::tempdir().unwrap();
        let (source, target) = generate_scenario(&reference_scenario()).unwrap();
        let sp = dir.path().join("source.csv");
        let tp = dir.path().join("target.csv");
        crate::data::save_domain_csv(&source, &sp).unwrap();
        crate::data::save_domain_csv(&target, &tp).unwrap();
        let cfg = ExperimentConfig {
            scenario: ScenarioSource::Files { source: sp, target: tp },
            ..tiny_config()
        };
        let p = prepare(&cfg, 0).unwrap();
        assert_eq!(p.pool.len() + p.eval.len(), 400);
        assert_eq!(p.eval.len(), 80);
    }
}
