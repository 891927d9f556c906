//! Acceptance criteria, one line of output per criterion.
//!
//! Runs with a custom harness so the verdict lines always show up in
//! `cargo test` output; the process exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};

use gflowda::data::{jsd, Label, LabelDistribution};
use gflowda::enumerable::{run_proportionality, EnumerableInstance};
use gflowda::experiment::{run_baseline, run_gflowda, ExperimentConfig, Strategy};
use gflowda::guan::{
    adversarial_loss_selected, adversarial_loss_source, classification_loss, GuanConfig, GuanData,
    GuanModel, LossGrads,
};
use gflowda::nn::Parameters;
use gflowda::policy::{flow_matching_loss, sample_trajectory, FlowNetwork, TrainConfig};
use gflowda::reward::{average_class_accuracy, mmd, terminal_reward, Bandwidths, RewardConfig};
use gflowda::rng::{indexed_substream, Rng};
use gflowda::state::{compute_state_oracle, init_state, prototype_oracle, TrajectoryState, LABELED};
use gflowda::theory::check_bound_family;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let tag = format!("{:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64());
    match out {
        Ok(d) if elapsed <= limit => Ok(format!("{d} ({tag})")),
        Ok(d) => Err(format!("{d} (too slow: {tag})")),
        Err(d) => Err(format!("{d} ({tag})")),
    }
}

fn random_simplex(n: usize, rng: &mut Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| <Exp1 as Distribution<f64>>::sample(&Exp1, rng) + 1e-6).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn random_predictions(rows: usize, classes: usize, rng: &mut Rng) -> Array2<f64> {
    let mut p = Array2::zeros((rows, classes));
    for mut row in p.rows_mut() {
        for (r, v) in row.iter_mut().zip(random_simplex(classes, rng)) {
            *r = v;
        }
    }
    p
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over the whole parameter vector.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-12)
}

fn central_difference(params: &Parameters, mut f: impl FnMut(&Parameters) -> f64) -> Vec<f64> {
    let h = 1e-4;
    let base = params.flat();
    let mut probe = params.clone();
    (0..base.len())
        .map(|k| {
            let mut p = base.clone();
            p[k] = base[k] + h;
            probe.set_flat(&p);
            let up = f(&probe);
            p[k] = base[k] - h;
            probe.set_flat(&p);
            let down = f(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn criterion_1_2() -> (Outcome, Outcome) {
    let start = Instant::now();
    let instance = EnumerableInstance::reference();
    let cfg = TrainConfig {
        plateau_tolerance: None,
        ..TrainConfig::default()
    };
    let (_, _, report) = run_proportionality(&instance, &cfg, 20_000, 0).expect("proportionality run");
    let elapsed = start.elapsed();
    let c1 = ensure(
        report.total_variation <= 0.05 && elapsed <= Duration::from_secs(120),
        format!(
            "TV {:.4} <= 0.05 after {} episodes, 20000 samples ({:.1}s, limit 120s)",
            report.total_variation,
            report.episodes,
            elapsed.as_secs_f64()
        ),
    );
    let c2 = ensure(
        report.max_conservation_gap <= 0.05,
        format!("max |log inflow - log outflow| {:.4} <= 0.05", report.max_conservation_gap),
    );
    (c1, c2)
}

fn criterion_3() -> Outcome {
    timed(Duration::from_secs(60), || {
        let mut steps = 0;
        let mut worst: f64 = 0.0;
        for run in 0..50u64 {
            let mut rng = indexed_substream(3, "acceptance-state", run);
            let n = rng.random_range(20..=200);
            let d = rng.random_range(2..=8);
            let classes = rng.random_range(2..=6);
            let budget = rng.random_range(1..=20);
            let features = random_matrix(n, d, &mut rng);
            let preds = random_predictions(n, classes, &mut rng);
            let labels: Vec<Label> = (0..n).map(|_| Label(rng.random_range(0..classes as u32))).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut ts = init_state(features.clone(), &preds).map_err(|e| e.to_string())?;
            for &a in &order[..budget] {
                ts = ts.apply_action(a, &labels).map_err(|e| e.to_string())?;
                steps += 1;
                let oracle = compute_state_oracle(&features, &preds, ts.selected()).map_err(|e| e.to_string())?;
                worst = worst.max(ts.state().max_abs_diff(&oracle));
                let protos = prototype_oracle(&features, ts.selected());
                let incremental: BTreeMap<Label, (Vec<f64>, usize)> = ts
                    .prototypes()
                    .map(|(l, p)| (l, (p.mean().to_vec(), p.count())))
                    .collect();
                if incremental.keys().ne(protos.keys()) {
                    return Err(format!("run {run}: prototype classes differ"));
                }
                for (l, (mean, count)) in &protos {
                    let (m, c) = &incremental[l];
                    if c != count {
                        return Err(format!("run {run}: prototype count for {l}"));
                    }
                    worst = m.iter().zip(mean).fold(worst, |w, (a, b)| w.max((a - b).abs()));
                }
                let parents = ts.enumerate_parents();
                let col4: f64 = ts.state().0.column(LABELED).sum();
                if parents.len() as f64 != col4 {
                    return Err(format!("run {run}: {} parents but column sum {col4}", parents.len()));
                }
                for (parent, j) in &parents {
                    let reduced: Vec<(usize, Label)> =
                        ts.selected().iter().copied().filter(|&(i, _)| i != *j).collect();
                    let po = compute_state_oracle(&features, &preds, &reduced).map_err(|e| e.to_string())?;
                    worst = worst.max(parent.state().max_abs_diff(&po));
                }
            }
        }
        ensure(
            worst <= 1e-6,
            format!("50 trajectories, {steps} steps, max deviation {worst:.2e} <= 1e-6, parent counts exact"),
        )
    })
}

fn criterion_4() -> Outcome {
    timed(Duration::from_secs(30), || {
        let s = check_bound_family(1000, 0, 1e-9).map_err(|e| e.to_string())?;
        ensure(
            s.violations == 0 && s.min_slack >= -1e-9,
            format!("1000 scenarios, {} violations, min slack {:.3e}", s.violations, s.min_slack),
        )
    })
}

fn flow_instance(seed: u64) -> (FlowNetwork, Vec<TrajectoryState>, f64) {
    let mut rng = indexed_substream(5, "acceptance-flow-grad", seed);
    let n = rng.random_range(4..=8);
    let budget = rng.random_range(2..=3);
    let features = random_matrix(n, 3, &mut rng);
    let preds = random_predictions(n, 3, &mut rng);
    let labels: Vec<Label> = (0..n).map(|_| Label(rng.random_range(0..3))).collect();
    let net = FlowNetwork::new(&mut rng);
    let init = init_state(features, &preds).expect("valid instance");
    let traj = sample_trajectory(&net, &init, budget, &labels, &mut rng).expect("rollout");
    let reward = rng.random_range(0.2..2.0);
    (net, traj, reward)
}

fn guan_instance(seed: u64) -> (GuanModel, GuanData) {
    let mut rng = indexed_substream(5, "acceptance-guan-grad", seed);
    let dim = rng.random_range(2..=3);
    let ns = rng.random_range(6..=10);
    let nl = rng.random_range(2..=4);
    let nt = rng.random_range(4..=8);
    let mut ys: Vec<Label> = (0..ns).map(|i| Label((i % 3) as u32)).collect();
    ys.shuffle(&mut rng);
    let yl: Vec<Label> = (0..nl).map(|_| Label([0, 1, 5][rng.random_range(0..3)])).collect();
    let data = GuanData {
        xs: random_matrix(ns, dim, &mut rng),
        ys,
        xl: random_matrix(nl, dim, &mut rng),
        yl,
        xt: random_matrix(nt, dim, &mut rng),
        yt: None,
    };
    let cfg = GuanConfig {
        hidden_dim: 5,
        feature_dim: 4,
        discriminator_hidden: 4,
        ..GuanConfig::default()
    };
    let source: BTreeSet<Label> = [0, 1, 2].map(Label).into();
    let mut model = GuanModel::new(dim, &source, cfg, &mut rng).expect("model");
    model.ensure_labels(data.yl.iter().copied(), &mut rng);
    (model, data)
}

fn guan_check(model: &GuanModel, loss: impl Fn(&GuanModel) -> LossGrads) -> f64 {
    let analytic = loss(model);
    let mut worst: f64 = 0.0;
    for which in 0..3 {
        let grad = [&analytic.g, &analytic.h, &analytic.d][which].flat();
        let params = [&model.g, &model.h, &model.d][which].params.clone();
        let numeric = central_difference(&params, |p| {
            let mut m = model.clone();
            [&mut m.g, &mut m.h, &mut m.d][which].params = p.clone();
            loss(&m).value
        });
        worst = worst.max(relative_error(&grad, &numeric));
    }
    worst
}

fn criterion_5() -> Outcome {
    let mut flow: f64 = 0.0;
    for seed in 0..10 {
        let (net, traj, reward) = flow_instance(seed);
        let (_, grads) = flow_matching_loss(&net, &traj, reward, 1e-8).map_err(|e| e.to_string())?;
        let numeric = central_difference(&net.mlp.params, |p| {
            let mut probe = net.clone();
            probe.mlp.params = p.clone();
            flow_matching_loss(&probe, &traj, reward, 1e-8).expect("loss").0
        });
        flow = flow.max(relative_error(&grads.flat(), &numeric));
    }
    let (mut adv_s, mut adv_l, mut cls): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..10 {
        let (model, data) = guan_instance(seed);
        let w = model.sample_weights(&data).map_err(|e| e.to_string())?;
        adv_s = adv_s.max(guan_check(&model, |m| adversarial_loss_source(m, &data, &w).expect("loss")));
        adv_l = adv_l.max(guan_check(&model, |m| adversarial_loss_selected(m, &data, &w).expect("loss")));
        cls = cls.max(guan_check(&model, |m| classification_loss(m, &data).expect("loss")));
    }
    let worst = flow.max(adv_s).max(adv_l).max(cls);
    ensure(
        worst <= 1e-4,
        format!(
            "max relative error over 10 instances each: flow matching {flow:.1e}, adversarial source {adv_s:.1e}, adversarial selected {adv_l:.1e}, classification {cls:.1e} (<= 1e-4)"
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = indexed_substream(6, "acceptance-mmd", 0);
    let cfg = RewardConfig::default();
    let fixed = RewardConfig {
        kernel_bandwidths: Bandwidths::Fixed(vec![0.5, 2.0]),
        ..RewardConfig::default()
    };
    let (mut self_max, mut asym_max, mut min_mmd, mut min_reward): (f64, f64, f64, f64) =
        (0.0, 0.0, f64::INFINITY, f64::INFINITY);
    for i in 0..100 {
        let c = if i % 2 == 0 { &cfg } else { &fixed };
        let d = rng.random_range(1..=6);
        let a = random_matrix(rng.random_range(1..=30), d, &mut rng);
        let mut b = random_matrix(rng.random_range(1..=30), d, &mut rng);
        b.mapv_inplace(|v| 1.5 * v + 0.7);
        let ab = mmd(&a, &b, c).map_err(|e| e.to_string())?;
        let ba = mmd(&b, &a, c).map_err(|e| e.to_string())?;
        self_max = self_max.max(mmd(&a, &a, c).map_err(|e| e.to_string())?);
        asym_max = asym_max.max((ab - ba).abs());
        min_mmd = min_mmd.min(ab);
    }
    for i in 0..100 {
        let d = rng.random_range(1..=5);
        let n = rng.random_range(2..=40);
        let target = random_matrix(n, d, &mut rng);
        let k = rng.random_range(1..=n);
        let idx: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
        let selected = target.select(Axis(0), &idx);
        let m = rng.random_range(1..=20);
        let preds: Vec<Label> = (0..m).map(|_| Label(rng.random_range(0..4))).collect();
        let truth: Vec<Label> = (0..m).map(|_| Label(rng.random_range(0..4))).collect();
        let c = RewardConfig {
            mmd_weight: if i % 3 == 0 { 50.0 } else { 1.0 },
            ..RewardConfig::default()
        };
        let r = terminal_reward(&target, &selected, &preds, &truth, &c).map_err(|e| e.to_string())?;
        min_reward = min_reward.min(r.value);
    }
    ensure(
        self_max <= 1e-9 && asym_max <= 1e-12 && min_mmd >= 0.0 && min_reward > 0.0,
        format!(
            "max mmd(X,X) {self_max:.1e}, max asymmetry {asym_max:.1e}, min mmd {min_mmd:.3e} over 100 pairs, min reward {min_reward:.3e} over 100 inputs"
        ),
    )
}

fn criterion_7() -> Outcome {
    timed(Duration::from_secs(900), || {
        let cfg = ExperimentConfig::default();
        let mut sums = [[0.0; 3]; 3];
        let seeds = 10u64;
        for seed in 0..seeds {
            let (g, _) = run_gflowda(&cfg, seed).map_err(|e| e.to_string())?;
            let r = run_baseline(&cfg, Strategy::Random, seed).map_err(|e| e.to_string())?;
            let e = run_baseline(&cfg, Strategy::Entropy, seed).map_err(|e| e.to_string())?;
            for (k, run) in [&g, &r, &e].into_iter().enumerate() {
                sums[k][0] += run.jsd / seeds as f64;
                sums[k][1] += run.accuracy / seeds as f64;
                sums[k][2] += run.classes_discovered as f64 / seeds as f64;
            }
        }
        let [g, r, e] = sums;
        ensure(
            g[0] < r[0] && g[1] > e[1] && g[2] >= e[2],
            format!(
                "10 seeds: JSD gflowda {:.4} < random {:.4}; accuracy gflowda {:.4} > entropy {:.4}; classes gflowda {:.2} >= entropy {:.2}",
                g[0], r[0], g[1], e[1], g[2], e[2]
            ),
        )
    })
}

fn brute_jsd(p: &BTreeMap<Label, f64>, q: &BTreeMap<Label, f64>) -> f64 {
    let keys: BTreeSet<&Label> = p.keys().chain(q.keys()).collect();
    let (mut kl_pm, mut kl_qm) = (0.0, 0.0);
    for k in keys {
        let a = *p.get(k).unwrap_or(&0.0);
        let b = *q.get(k).unwrap_or(&0.0);
        let m = (a + b) / 2.0;
        if a > 0.0 {
            kl_pm += a * (a.ln() - m.ln());
        }
        if b > 0.0 {
            kl_qm += b * (b.ln() - m.ln());
        }
    }
    (kl_pm + kl_qm) / 2.0 / std::f64::consts::LN_2
}

fn brute_accuracy(pred: &[Label], truth: &[Label]) -> f64 {
    let classes: BTreeSet<Label> = truth.iter().copied().collect();
    let mut total = 0.0;
    for c in &classes {
        let members: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == *c).collect();
        let hits = members.iter().filter(|&&i| pred[i] == *c).count();
        total += hits as f64 / members.len() as f64;
    }
    total / classes.len() as f64
}

fn criterion_8() -> Outcome {
    let mut rng = indexed_substream(8, "acceptance-metrics", 0);
    let (mut jsd_err, mut acc_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let k = rng.random_range(1..=6);
        let dist = |rng: &mut Rng| -> BTreeMap<Label, f64> {
            let labels: Vec<u32> = (0..8).filter(|_| rng.random_bool(0.6)).take(k).collect();
            let labels = if labels.is_empty() { vec![0] } else { labels };
            labels.iter().map(|&l| Label(l)).zip(random_simplex(labels.len(), rng)).collect()
        };
        let p = dist(&mut rng);
        let q = dist(&mut rng);
        let got = jsd(
            &LabelDistribution::new(p.clone()).map_err(|e| e.to_string())?,
            &LabelDistribution::new(q.clone()).map_err(|e| e.to_string())?,
        );
        jsd_err = jsd_err.max((got - brute_jsd(&p, &q)).abs());

        let n = rng.random_range(1..=50);
        let truth: Vec<Label> = (0..n).map(|_| Label(rng.random_range(0..5))).collect();
        let pred: Vec<Label> = (0..n).map(|_| Label(rng.random_range(0..5))).collect();
        let got = average_class_accuracy(&pred, &truth).map_err(|e| e.to_string())?;
        acc_err = acc_err.max((got - brute_accuracy(&pred, &truth)).abs());
    }
    let p = LabelDistribution::from_pairs([(Label(0), 0.3), (Label(1), 0.7)]).map_err(|e| e.to_string())?;
    let same = jsd(&p, &p);
    let disjoint = jsd(&LabelDistribution::point_mass(Label(0)), &LabelDistribution::point_mass(Label(1)));
    ensure(
        jsd_err <= 1e-12 && acc_err <= 1e-12 && same == 0.0 && disjoint == 1.0,
        format!(
            "max |jsd - brute| {jsd_err:.1e}, max |accuracy - brute| {acc_err:.1e} over 100 inputs; jsd(p,p) = {same}, disjoint = {disjoint}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = gflowda::experiment::reference_scenario();
    spec.source_count = 120;
    spec.target_count = 100;
    let cfg = ExperimentConfig {
        scenario: gflowda::experiment::ScenarioSource::Synthetic(spec),
        train: TrainConfig {
            episodes_max: 5,
            plateau_tolerance: None,
            ..TrainConfig::default()
        },
        pretrain_epochs: 40,
        guan_epochs_per_reward: 10,
        final_epochs: 40,
        final_candidates: 8,
        seeds: vec![0, 1],
        ..ExperimentConfig::default()
    };
    let cfg_path = dir.path().join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut compared = Vec::new();
    for strategy in ["gflowda", "random", "entropy"] {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{strategy}_{rep}"));
            let status = Command::new(env!("CARGO_BIN_EXE_gflowda"))
                .arg("run")
                .arg("--config")
                .arg(&cfg_path)
                .arg("--strategy")
                .arg(strategy)
                .arg("--out")
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!(
                    "{strategy}: exit {:?}: {}",
                    status.status.code(),
                    String::from_utf8_lossy(&status.stderr)
                ));
            }
            outputs.push(std::fs::read(out.join("results.csv")).map_err(|e| e.to_string())?);
        }
        if outputs[0] != outputs[1] {
            return Err(format!("{strategy}: results.csv differs between identical runs"));
        }
        compared.push(strategy);
    }
    Ok(format!("byte-identical results.csv on repeated CLI runs for {}", compared.join(", ")))
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    panic::catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        format!("panicked: {msg}")
    })
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let (c1, c2) = guarded(criterion_1_2).unwrap_or_else(|e| (Err(e.clone()), Err(e)));
    results.push((1, "proportional sampling", c1));
    results.push((2, "flow conservation", c2));
    let checks: [(u32, &str, fn() -> Outcome); 7] = [
        (3, "incremental state oracle equivalence", criterion_3),
        (4, "risk bound soundness", criterion_4),
        (5, "gradient checks", criterion_5),
        (6, "mmd and reward properties", criterion_6),
        (7, "directional end-to-end", criterion_7),
        (8, "metric exactness", criterion_8),
        (9, "determinism", criterion_9),
    ];
    for (id, name, check) in checks {
        results.push((id, name, guarded(check).and_then(|o| o)));
    }

    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(d) => println!("PASS criterion {id} ({name}): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
