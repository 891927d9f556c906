//! Weighted adversarial adaptation network: feature extractor `g`, classifier
//! `h` over the source labels plus revealed target labels, and domain
//! discriminator `d`.
//!
//! Training alternates a discriminator step on the two adversarial losses with
//! a feature/classifier step on `classification − adversarial_weight ·
//! adversarial`. Sample weights are computed from current predictions and
//! treated as constants.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{label_counts, Domain, Label};
use crate::error::{Error, Result};
use crate::nn::{
    cross_entropy, entropy, Activation, Dense, Mlp, MlpSpec, Optimizer, OptimizerConfig,
    OutputTransform, Parameters,
};
use crate::rng::Rng;

/// Discriminator outputs are clamped to `[D_CLAMP, 1 − D_CLAMP]` before logs.
pub const D_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightConfig {
    pub lambda: f64,
    pub ratio_clip: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            ratio_clip: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuanConfig {
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub discriminator_hidden: usize,
    pub optimizer: OptimizerConfig,
    /// Scale of the adversarial term in the feature/classifier step.
    pub adversarial_weight: f64,
    /// When false, only the classification loss is trained.
    pub adaptation: bool,
    /// Mini-batch size; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub weights: WeightConfig,
}

impl Default for GuanConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 16,
            feature_dim: 8,
            discriminator_hidden: 8,
            optimizer: OptimizerConfig::adam(0.01),
            adversarial_weight: 1.0,
            adaptation: true,
            batch_size: None,
            weights: WeightConfig::default(),
        }
    }
}

/// `λ` outside `Y′ = Y_l ∩ Y_s`, else `P_l(y)/P_s(y)` capped at `ratio_clip`.
/// `p_l` and `p_s` may be unnormalized; only their ratio matters.
pub fn source_weight(
    y: Label,
    p_l: &BTreeMap<Label, f64>,
    p_s: &BTreeMap<Label, f64>,
    y_prime: &BTreeSet<Label>,
    cfg: &WeightConfig,
) -> Result<f64> {
    let ps = *p_s.get(&y).ok_or(Error::UnknownLabel(y))?;
    if !y_prime.contains(&y) {
        return Ok(cfg.lambda);
    }
    if !(ps > 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "source probability of label {y} is {ps}"
        )));
    }
    let ratio = p_l.get(&y).copied().unwrap_or(0.0) / ps;
    if ratio > cfg.ratio_clip {
        log::debug!("source weight for label {y} clipped from {ratio} to {}", cfg.ratio_clip);
    }
    Ok(ratio.min(cfg.ratio_clip))
}

/// Stable label → output-slot assignment for the classifier head.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSlots {
    labels: Vec<Label>,
}

impl LabelSlots {
    pub fn new(labels: impl IntoIterator<Item = Label>) -> Self {
        let mut slots = Self::default();
        for l in labels {
            slots.insert(l);
        }
        slots
    }

    fn insert(&mut self, label: Label) -> bool {
        if self.labels.contains(&label) {
            return false;
        }
        self.labels.push(label);
        true
    }

    pub fn slot(&self, label: Label) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn label(&self, slot: usize) -> Label {
        self.labels[slot]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn slots_of(&self, set: &BTreeSet<Label>) -> Vec<usize> {
        set.iter().filter_map(|&l| self.slot(l)).collect()
    }
}

/// `(w_t, w′_t)`: predicted mass on `Y_s` averaged over `|Y_s|`, and on `Y_l`
/// averaged over `|Y_l|` (0 when `Y_l` is empty).
pub fn target_weights(
    y_hat: &[f64],
    slots: &LabelSlots,
    y_s: &BTreeSet<Label>,
    y_l: &BTreeSet<Label>,
) -> (f64, f64) {
    weights_from_slots(y_hat, &slots.slots_of(y_s), y_s.len(), &slots.slots_of(y_l), y_l.len())
}

fn weights_from_slots(y_hat: &[f64], s: &[usize], u: usize, l: &[usize], v: usize) -> (f64, f64) {
    let mass = |idx: &[usize]| idx.iter().map(|&i| y_hat[i]).sum::<f64>();
    let w_t = if u == 0 { 0.0 } else { mass(s) / u as f64 };
    let w_tp = if v == 0 { 0.0 } else { mass(l) / v as f64 };
    (w_t, w_tp)
}

/// Training inputs: labeled source, labeled selected targets, unlabeled pool.
#[derive(Clone, Debug)]
pub struct GuanData {
    pub xs: Array2<f64>,
    pub ys: Vec<Label>,
    pub xl: Array2<f64>,
    pub yl: Vec<Label>,
    pub xt: Array2<f64>,
    /// Ground truth of the pool, used only for metrics.
    pub yt: Option<Vec<Label>>,
}

impl GuanData {
    pub fn from_domains(source: &Domain, target: &Domain, selected: &[usize]) -> Result<Self> {
        let labels = |d: &Domain, idx: &mut dyn Iterator<Item = usize>| -> Result<Vec<Label>> {
            idx.map(|i| d.reveal(i).ok_or(Error::EmptyDomain)).collect()
        };
        let xt = target.feature_matrix();
        let xl = ndarray::stack(
            Axis(0),
            &selected.iter().map(|&i| xt.row(i)).collect::<Vec<_>>(),
        )
        .unwrap_or_else(|_| Array2::zeros((0, xt.ncols())));
        Ok(Self {
            xs: source.feature_matrix(),
            ys: labels(source, &mut (0..source.len()))?,
            xl,
            yl: labels(target, &mut selected.iter().copied())?,
            yt: target.labels().into_iter().collect(),
            xt,
        })
    }

    fn subset(&self, s: &[usize], l: &[usize], t: &[usize]) -> GuanData {
        GuanData {
            xs: self.xs.select(Axis(0), s),
            ys: s.iter().map(|&i| self.ys[i]).collect(),
            xl: self.xl.select(Axis(0), l),
            yl: l.iter().map(|&i| self.yl[i]).collect(),
            xt: self.xt.select(Axis(0), t),
            yt: self.yt.as_ref().map(|y| t.iter().map(|&i| y[i]).collect()),
        }
    }
}

/// Per-sample weights entering the adversarial losses.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWeights {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    pub target_selected: Vec<f64>,
}

/// A loss value with gradients for the three networks.
#[derive(Clone, Debug)]
pub struct LossGrads {
    pub value: f64,
    pub g: Parameters,
    pub h: Parameters,
    pub d: Parameters,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub adversarial_source: f64,
    pub adversarial_selected: f64,
    pub classification: f64,
    /// A discriminator output hit the clamp.
    pub clamped: bool,
    /// No selected samples, so the selected adversarial term is 0.
    pub selected_empty: bool,
}

struct Forward {
    ns: usize,
    nl: usize,
    nt: usize,
    tape_g: crate::nn::Tape,
    probs: Array2<f64>,
    tape_h: crate::nn::Tape,
    disc: Vec<f64>,
    tape_d: crate::nn::Tape,
    ys: Vec<usize>,
    yl: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub adversarial_source: f64,
    pub adversarial_selected: f64,
    pub classification: f64,
    pub source_accuracy: f64,
    /// Accuracy on the unlabeled pool when its ground truth is known.
    pub target_accuracy: Option<f64>,
    pub clamped: bool,
}

/// Prediction for one sample over the extended label space.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub probs: Vec<f64>,
    pub entropy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GuanModel {
    pub config: GuanConfig,
    pub g: Mlp,
    pub h: Mlp,
    pub d: Mlp,
    pub slots: LabelSlots,
    /// Labels of the source domain, fixed at construction.
    pub source_labels: BTreeSet<Label>,
    #[serde(skip)]
    optimizers: Option<Box<[Optimizer; 3]>>,
}

impl PartialEq for GuanModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.g == other.g
            && self.h == other.h
            && self.d == other.d
            && self.slots == other.slots
            && self.source_labels == other.source_labels
    }
}

impl GuanModel {
    pub fn new(
        raw_dim: usize,
        source_labels: &BTreeSet<Label>,
        config: GuanConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if source_labels.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let g = Mlp::new(
            MlpSpec::new(
                vec![raw_dim, config.hidden_dim, config.feature_dim],
                Activation::Relu,
                OutputTransform::Identity,
            ),
            rng,
        )?;
        let h = Mlp::new(
            MlpSpec::new(
                vec![config.feature_dim, source_labels.len()],
                Activation::Relu,
                OutputTransform::Softmax,
            ),
            rng,
        )?;
        let d = Mlp::new(
            MlpSpec::new(
                vec![config.feature_dim, config.discriminator_hidden, 1],
                Activation::Relu,
                OutputTransform::Sigmoid,
            ),
            rng,
        )?;
        Ok(Self {
            g,
            h,
            d,
            slots: LabelSlots::new(source_labels.iter().copied()),
            source_labels: source_labels.clone(),
            config,
            optimizers: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.slots.len()
    }

    /// Add a freshly initialized output slot for every unseen label.
    pub fn ensure_labels(&mut self, labels: impl IntoIterator<Item = Label>, rng: &mut Rng) -> usize {
        let mut added = 0;
        for label in labels {
            if self.slots.insert(label) {
                let layer = &mut self.h.params.layers[0];
                let fresh = Dense::init(layer.inputs(), 1, rng);
                layer.weights.push_row(fresh.weights.row(0)).expect("matching width");
                layer.bias = ndarray::concatenate(Axis(0), &[layer.bias.view(), fresh.bias.view()])
                    .expect("1-d bias");
                *self.h.spec.layer_sizes.last_mut().expect("spec") += 1;
                added += 1;
            }
        }
        added
    }

    /// Extracted features `g(x)`.
    pub fn features(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.g.predict(x)
    }

    /// Class probabilities over the extended label space.
    pub fn probabilities(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.h.predict(&self.g.predict(x)?)
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<Prediction>> {
        let probs = self.probabilities(x)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|row| {
                let probs = row.to_vec();
                let slot = argmax(&probs);
                Prediction {
                    label: self.slots.label(slot),
                    entropy: entropy(&probs),
                    probs,
                }
            })
            .collect())
    }

    pub fn predict_labels(&self, x: &Array2<f64>) -> Result<Vec<Label>> {
        let probs = self.probabilities(x)?;
        Ok(probs
            .rows()
            .into_iter()
            .map(|r| self.slots.label(argmax(r.as_slice().expect("contiguous"))))
            .collect())
    }

    fn slot_indices(&self, labels: &[Label]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|&l| self.slots.slot(l).ok_or(Error::UnknownLabel(l)))
            .collect()
    }

    fn forward(&self, data: &GuanData) -> Result<Forward> {
        let (ns, nl, nt) = (data.xs.nrows(), data.xl.nrows(), data.xt.nrows());
        let ys = self.slot_indices(&data.ys)?;
        let yl = self.slot_indices(&data.yl)?;
        let x = ndarray::concatenate(Axis(0), &[data.xs.view(), data.xl.view(), data.xt.view()])
            .map_err(|_| Error::DimensionMismatch {
                expected: data.xs.ncols(),
                got: data.xt.ncols(),
            })?;
        let (z, tape_g) = self.g.forward(&x)?;
        let (probs, tape_h) = self.h.forward(&z)?;
        let (disc, tape_d) = self.d.forward(&z)?;
        Ok(Forward {
            ns,
            nl,
            nt,
            tape_g,
            probs,
            tape_h,
            disc: disc.column(0).to_vec(),
            tape_d,
            ys,
            yl,
        })
    }

    /// Source weights from empirical `P_s`, `P_l`, and target weights from
    /// the current predictions.
    pub fn sample_weights(&self, data: &GuanData) -> Result<SampleWeights> {
        let probs = self.probabilities(&data.xt)?;
        self.weights_with_probs(data, &probs)
    }

    fn weights_with_probs(&self, data: &GuanData, target_probs: &Array2<f64>) -> Result<SampleWeights> {
        let to_map = |c: BTreeMap<Label, usize>| -> BTreeMap<Label, f64> {
            let total: usize = c.values().sum();
            c.into_iter()
                .map(|(l, n)| (l, n as f64 / total.max(1) as f64))
                .collect()
        };
        let p_s = to_map(label_counts(data.ys.iter().copied()));
        let p_l = to_map(label_counts(data.yl.iter().copied()));
        let y_l: BTreeSet<Label> = p_l.keys().copied().collect();
        let y_prime: BTreeSet<Label> = y_l.intersection(&self.source_labels).copied().collect();
        let mut cache = BTreeMap::new();
        let source = data
            .ys
            .iter()
            .map(|&y| {
                if let Some(&w) = cache.get(&y) {
                    return Ok(w);
                }
                let w = source_weight(y, &p_l, &p_s, &y_prime, &self.config.weights)?;
                cache.insert(y, w);
                Ok(w)
            })
            .collect::<Result<Vec<_>>>()?;
        let s_slots = self.slots.slots_of(&self.source_labels);
        let l_slots = self.slots.slots_of(&y_l);
        let (target, target_selected) = target_probs
            .rows()
            .into_iter()
            .map(|r| {
                weights_from_slots(
                    r.as_slice().expect("contiguous"),
                    &s_slots,
                    self.source_labels.len(),
                    &l_slots,
                    y_l.len(),
                )
            })
            .unzip();
        Ok(SampleWeights {
            source,
            target,
            target_selected,
        })
    }

    fn check_weights(fw: &Forward, w: &SampleWeights) -> Result<()> {
        if w.source.len() != fw.ns {
            return Err(Error::DimensionMismatch {
                expected: fw.ns,
                got: w.source.len(),
            });
        }
        if w.target.len() != fw.nt || w.target_selected.len() != fw.nt {
            return Err(Error::DimensionMismatch {
                expected: fw.nt,
                got: w.target.len(),
            });
        }
        Ok(())
    }

    fn loss_values(fw: &Forward, w: &SampleWeights) -> LossValues {
        let clamp = |v: f64| v.clamp(D_CLAMP, 1.0 - D_CLAMP);
        let clamped = fw.disc.iter().any(|&v| v != clamp(v));
        let (ns, nl, nt) = (fw.ns as f64, fw.nl as f64, fw.nt as f64);
        let src = &fw.disc[..fw.ns];
        let sel = &fw.disc[fw.ns..fw.ns + fw.nl];
        let tgt = &fw.disc[fw.ns + fw.nl..];
        let mean_or_zero = |sum: f64, n: f64| if n > 0.0 { sum / n } else { 0.0 };
        let t_term = |ws: &[f64]| {
            mean_or_zero(
                -tgt.iter().zip(ws).map(|(&d, &w)| w * (1.0 - clamp(d)).ln()).sum::<f64>(),
                nt,
            )
        };
        let adv_s = mean_or_zero(
            -src.iter().zip(&w.source).map(|(&d, &w)| w * clamp(d).ln()).sum::<f64>(),
            ns,
        ) + t_term(&w.target);
        let adv_l = if fw.nl == 0 {
            0.0
        } else {
            -sel.iter().map(|&d| clamp(d).ln()).sum::<f64>() / nl + t_term(&w.target_selected)
        };
        let ce = |rows: std::ops::Range<usize>, labels: &[usize]| {
            let n = labels.len();
            if n == 0 {
                return 0.0;
            }
            rows.zip(labels)
                .map(|(i, &y)| cross_entropy(fw.probs.row(i).as_slice().expect("contiguous"), y).loss)
                .sum::<f64>()
                / n as f64
        };
        let cls = ce(0..fw.ns, &fw.ys) + ce(fw.ns..fw.ns + fw.nl, &fw.yl);
        LossValues {
            adversarial_source: adv_s,
            adversarial_selected: adv_l,
            classification: cls,
            clamped,
            selected_empty: fw.nl == 0,
        }
    }

    /// Gradient of `a_s·L_adv^s + a_l·L_adv^l + a_c·L_cls`. When `only_d` is
    /// set the feature and classifier gradients are left at zero.
    fn gradients(
        &self,
        fw: &Forward,
        w: &SampleWeights,
        (a_s, a_l, a_c): (f64, f64, f64),
        only_d: bool,
    ) -> Result<(Parameters, Parameters, Parameters)> {
        let (ns, nl, nt) = (fw.ns, fw.nl, fw.nt);
        let n = ns + nl + nt;
        let mut d_disc = Array2::zeros((n, 1));
        for (i, &raw) in fw.disc.iter().enumerate() {
            let inside = (D_CLAMP..=1.0 - D_CLAMP).contains(&raw);
            if !inside {
                continue;
            }
            d_disc[[i, 0]] = if i < ns {
                -a_s * w.source[i] / (ns as f64 * raw)
            } else if i < ns + nl {
                -a_l / (nl as f64 * raw)
            } else {
                let k = i - ns - nl;
                let mut coef = a_s * w.target[k];
                if nl > 0 {
                    coef += a_l * w.target_selected[k];
                }
                coef / (nt as f64 * (1.0 - raw))
            };
        }
        let (grad_d, dz_d) = self.d.backward(&fw.tape_d, &d_disc)?;
        if only_d {
            return Ok((self.g.params.zeros_like(), self.h.params.zeros_like(), grad_d));
        }
        let mut d_probs = Array2::zeros(fw.probs.dim());
        if a_c != 0.0 {
            let mut fill = |offset: usize, labels: &[usize]| {
                let count = labels.len() as f64;
                for (k, &y) in labels.iter().enumerate() {
                    let row = offset + k;
                    let ce = cross_entropy(fw.probs.row(row).as_slice().expect("contiguous"), y);
                    for (c, g) in ce.grad.iter().enumerate() {
                        d_probs[[row, c]] = a_c * g / count;
                    }
                }
            };
            fill(0, &fw.ys);
            fill(ns, &fw.yl);
        }
        let (grad_h, dz_h) = self.h.backward(&fw.tape_h, &d_probs)?;
        let (grad_g, _) = self.g.backward(&fw.tape_g, &(dz_d + dz_h))?;
        Ok((grad_g, grad_h, grad_d))
    }

    fn loss_with_grads(
        &self,
        data: &GuanData,
        weights: &SampleWeights,
        coefs: (f64, f64, f64),
    ) -> Result<(LossValues, LossGrads)> {
        let fw = self.forward(data)?;
        Self::check_weights(&fw, weights)?;
        let values = Self::loss_values(&fw, weights);
        let (g, h, d) = self.gradients(&fw, weights, coefs, false)?;
        let value = coefs.0 * values.adversarial_source
            + coefs.1 * values.adversarial_selected
            + coefs.2 * values.classification;
        Ok((values, LossGrads { value, g, h, d }))
    }

    /// Loss values under the given weights.
    pub fn losses(&self, data: &GuanData, weights: &SampleWeights) -> Result<LossValues> {
        let fw = self.forward(data)?;
        Self::check_weights(&fw, weights)?;
        Ok(Self::loss_values(&fw, weights))
    }

    /// One alternating update on `data`; returns losses measured before the
    /// feature/classifier step.
    fn step(&mut self, data: &GuanData) -> Result<(LossValues, Array2<f64>)> {
        if self.config.adaptation {
            let fw = self.forward(data)?;
            let target_probs = fw.probs.slice(ndarray::s![fw.ns + fw.nl.., ..]).to_owned();
            let w = self.weights_with_probs(data, &target_probs)?;
            let (_, _, grad_d) = self.gradients(&fw, &w, (1.0, 1.0, 0.0), true)?;
            let opts = optimizers(&mut self.optimizers, &self.config.optimizer);
            opts[2].step(&mut self.d.params, &grad_d)?;
        }
        let fw = self.forward(data)?;
        let target_probs = fw.probs.slice(ndarray::s![fw.ns + fw.nl.., ..]).to_owned();
        let w = self.weights_with_probs(data, &target_probs)?;
        let values = Self::loss_values(&fw, &w);
        let adv = if self.config.adaptation {
            -self.config.adversarial_weight
        } else {
            0.0
        };
        let (grad_g, grad_h, _) = self.gradients(&fw, &w, (adv, adv, 1.0), false)?;
        let opts = optimizers(&mut self.optimizers, &self.config.optimizer);
        opts[0].step(&mut self.g.params, &grad_g)?;
        opts[1].step(&mut self.h.params, &grad_h)?;
        Ok((values, fw.probs))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let model: GuanModel =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        for net in [&model.g, &model.h, &model.d] {
            Mlp::from_parts(net.spec.clone(), net.params.clone())?;
        }
        if model.h.output_dim() != model.slots.len() {
            return Err(Error::Checkpoint(format!(
                "classifier has {} outputs for {} labels",
                model.h.output_dim(),
                model.slots.len()
            )));
        }
        Ok(model)
    }
}

fn optimizers<'a>(
    slot: &'a mut Option<Box<[Optimizer; 3]>>,
    cfg: &OptimizerConfig,
) -> &'a mut [Optimizer; 3] {
    slot.get_or_insert_with(|| {
        Box::new([
            Optimizer::new(cfg.clone()),
            Optimizer::new(cfg.clone()),
            Optimizer::new(cfg.clone()),
        ])
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn accuracy(probs: ndarray::ArrayView2<f64>, truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = probs
        .rows()
        .into_iter()
        .zip(truth)
        .filter(|(r, &y)| argmax(r.as_slice().expect("contiguous")) == y)
        .count();
    hits as f64 / truth.len() as f64
}

/// Adversarial source loss and its gradients under fixed weights.
pub fn adversarial_loss_source(model: &GuanModel, data: &GuanData, weights: &SampleWeights) -> Result<LossGrads> {
    Ok(model.loss_with_grads(data, weights, (1.0, 0.0, 0.0))?.1)
}

/// Adversarial loss of the selected targets against the pool.
pub fn adversarial_loss_selected(model: &GuanModel, data: &GuanData, weights: &SampleWeights) -> Result<LossGrads> {
    Ok(model.loss_with_grads(data, weights, (0.0, 1.0, 0.0))?.1)
}

/// Mean cross-entropy over the source plus mean over the selected targets.
pub fn classification_loss(model: &GuanModel, data: &GuanData) -> Result<LossGrads> {
    let weights = SampleWeights {
        source: vec![0.0; data.xs.nrows()],
        target: vec![0.0; data.xt.nrows()],
        target_selected: vec![0.0; data.xt.nrows()],
    };
    Ok(model.loss_with_grads(data, &weights, (0.0, 0.0, 1.0))?.1)
}

/// Train for `epochs`, growing the classifier head for any newly revealed
/// selected label first.
pub fn train_guan(
    model: &mut GuanModel,
    data: &GuanData,
    epochs: usize,
    rng: &mut Rng,
) -> Result<Vec<EpochMetrics>> {
    if data.xs.nrows() == 0 {
        return Err(Error::EmptyDomain);
    }
    model.ensure_labels(data.yl.iter().copied(), rng);
    let ys = model.slot_indices(&data.ys)?;
    let yt = data
        .yt
        .as_ref()
        .map(|y| y.iter().map(|&l| model.slots.slot(l)).collect::<Vec<_>>());
    let mut metrics = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (values, probs) = match model.config.batch_size {
            None => model.step(data)?,
            Some(size) => {
                let mut totals = LossValues::default();
                let mut s: Vec<usize> = (0..data.xs.nrows()).collect();
                let mut t: Vec<usize> = (0..data.xt.nrows()).collect();
                let mut l: Vec<usize> = (0..data.xl.nrows()).collect();
                s.shuffle(rng);
                t.shuffle(rng);
                l.shuffle(rng);
                let batches = s.len().div_ceil(size.max(1));
                for (k, chunk) in s.chunks(size.max(1)).enumerate() {
                    let pick = |v: &[usize]| -> Vec<usize> {
                        if v.is_empty() {
                            return vec![];
                        }
                        (0..size.min(v.len())).map(|j| v[(k * size + j) % v.len()]).collect()
                    };
                    let (v, _) = model.step(&data.subset(chunk, &pick(&l), &pick(&t)))?;
                    totals.adversarial_source += v.adversarial_source / batches as f64;
                    totals.adversarial_selected += v.adversarial_selected / batches as f64;
                    totals.classification += v.classification / batches as f64;
                    totals.clamped |= v.clamped;
                    totals.selected_empty = v.selected_empty;
                }
                (totals, model.probabilities(&ndarray::concatenate(
                    Axis(0),
                    &[data.xs.view(), data.xl.view(), data.xt.view()],
                ).expect("matching widths"))?)
            }
        };
        if values.clamped {
            log::debug!("discriminator output clamped in epoch {epoch}");
        }
        let offset = data.xs.nrows() + data.xl.nrows();
        let target_accuracy = yt.as_ref().map(|truth| {
            let hits = truth
                .iter()
                .enumerate()
                .filter(|(i, &slot)| {
                    slot.is_some_and(|s| argmax(probs.row(offset + i).as_slice().expect("contiguous")) == s)
                })
                .count();
            hits as f64 / truth.len().max(1) as f64
        });
        metrics.push(EpochMetrics {
            epoch,
            adversarial_source: values.adversarial_source,
            adversarial_selected: values.adversarial_selected,
            classification: values.classification,
            source_accuracy: accuracy(probs.slice(ndarray::s![..data.xs.nrows(), ..]), &ys),
            target_accuracy,
            clamped: values.clamped,
        });
    }
    Ok(metrics)
}

/// Write per-epoch metrics as CSV.
pub fn write_metrics_csv(metrics: &[EpochMetrics], path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "epoch",
        "adversarial_source",
        "adversarial_selected",
        "classification",
        "source_accuracy",
        "target_accuracy",
        "clamped",
    ])
    .map_err(csv_err)?;
    for m in metrics {
        w.write_record([
            m.epoch.to_string(),
            m.adversarial_source.to_string(),
            m.adversarial_selected.to_string(),
            m.classification.to_string(),
            m.source_accuracy.to_string(),
            m.target_accuracy.map_or(String::new(), |a| a.to_string()),
            m.clamped.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
