//! Synthetic label-shift scenarios, domains and label-distribution utilities.
//!
//! A scenario has a common label space shared by both domains plus a private
//! label space on each side. Each class is an isotropic Gaussian; target
//! class means are the source means translated by an offset, which realizes
//! the conditional shift. Per-domain class counts are apportioned exactly
//! from the priors, then the example order is shuffled with the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

/// Class label id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub u32);

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

const DIST_TOL: f64 = 1e-9;

/// Normalized mapping label -> probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Label, f64>", into = "BTreeMap<Label, f64>")]
pub struct LabelDistribution {
    probs: BTreeMap<Label, f64>,
}

impl LabelDistribution {
    pub fn new(probs: BTreeMap<Label, f64>) -> Result<Self> {
        let mut total = 0.0;
        for (label, &p) in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "probability {p} for label {label}"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > DIST_TOL {
            return Err(Error::InvalidDistribution(format!("total mass {total}")));
        }
        Ok(Self { probs })
    }

    pub fn from_pairs<I: IntoIterator<Item = (Label, f64)>>(pairs: I) -> Result<Self> {
        Self::new(pairs.into_iter().collect())
    }

    pub fn point_mass(label: Label) -> Self {
        Self {
            probs: BTreeMap::from([(label, 1.0)]),
        }
    }

    pub fn from_counts(counts: &BTreeMap<Label, usize>) -> Result<Self> {
        let total: usize = counts.values().sum();
        if total == 0 {
            return Err(Error::EmptyDomain);
        }
        Ok(Self {
            probs: counts
                .iter()
                .map(|(&l, &c)| (l, c as f64 / total as f64))
                .collect(),
        })
    }

    /// Probability of `label`; zero when it is outside the mapping.
    pub fn prob(&self, label: Label) -> f64 {
        self.probs.get(&label).copied().unwrap_or(0.0)
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.probs.keys().copied()
    }

    /// Labels with strictly positive probability.
    pub fn support(&self) -> BTreeSet<Label> {
        self.probs
            .iter()
            .filter(|(_, &p)| p > 0.0)
            .map(|(&l, _)| l)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Label, f64)> + '_ {
        self.probs.iter().map(|(&l, &p)| (l, p))
    }
}

impl TryFrom<BTreeMap<Label, f64>> for LabelDistribution {
    type Error = Error;

    fn try_from(probs: BTreeMap<Label, f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<LabelDistribution> for BTreeMap<Label, f64> {
    fn from(d: LabelDistribution) -> Self {
        d.probs
    }
}

/// Synthetic scenario definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub feature_dim: usize,
    pub common_labels: Vec<Label>,
    pub source_private: Vec<Label>,
    pub target_private: Vec<Label>,
    pub source_priors: LabelDistribution,
    pub target_priors: LabelDistribution,
    /// Source-domain class means.
    pub class_means: BTreeMap<Label, Vec<f64>>,
    /// Translation applied to every target class mean.
    #[serde(default)]
    pub target_offset: Vec<f64>,
    /// Per-label target mean overrides (applied instead of mean + offset).
    #[serde(default)]
    pub target_means: BTreeMap<Label, Vec<f64>>,
    pub class_scales: BTreeMap<Label, f64>,
    pub source_count: usize,
    pub target_count: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainRole {
    Source,
    Target,
    Selected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: Option<Label>,
}

/// A set of examples sharing one role.
///
/// Target domains carry ground-truth labels for evaluation; the selection
/// pipeline reads them only through [`Domain::reveal`].
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub role: DomainRole,
    pub examples: Vec<Example>,
    pub label_space: BTreeSet<Label>,
}

impl ScenarioSpec {
    pub fn source_labels(&self) -> BTreeSet<Label> {
        self.common_labels
            .iter()
            .chain(&self.source_private)
            .copied()
            .collect()
    }

    pub fn target_labels(&self) -> BTreeSet<Label> {
        self.common_labels
            .iter()
            .chain(&self.target_private)
            .copied()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        let common: BTreeSet<_> = self.common_labels.iter().copied().collect();
        let sp: BTreeSet<_> = self.source_private.iter().copied().collect();
        let tp: BTreeSet<_> = self.target_private.iter().copied().collect();
        if common.len() != self.common_labels.len()
            || sp.len() != self.source_private.len()
            || tp.len() != self.target_private.len()
        {
            return bad("duplicate label in a label set".into());
        }
        if !common.is_disjoint(&sp) || !common.is_disjoint(&tp) || !sp.is_disjoint(&tp) {
            return bad("label sets must be pairwise disjoint".into());
        }
        for (name, priors, space) in [
            ("source", &self.source_priors, self.source_labels()),
            ("target", &self.target_priors, self.target_labels()),
        ] {
            let keys: BTreeSet<_> = priors.labels().collect();
            if keys != space {
                return bad(format!("{name} priors must cover exactly the {name} label space"));
            }
            if priors.iter().any(|(_, p)| p <= 0.0) {
                return bad(format!("{name} priors must be strictly positive"));
            }
        }
        if self.source_count == 0 || self.target_count == 0 {
            return bad("domain counts must be positive".into());
        }
        if !self.target_offset.is_empty() && self.target_offset.len() != self.feature_dim {
            return bad("target_offset has wrong dimension".into());
        }
        for label in self.source_labels().union(&self.target_labels()) {
            match self.class_means.get(label) {
                Some(m) if m.len() == self.feature_dim && m.iter().all(|v| v.is_finite()) => {}
                Some(_) => return bad(format!("mean for label {label} has wrong dimension")),
                None => return bad(format!("missing mean for label {label}")),
            }
            match self.class_scales.get(label) {
                Some(s) if *s > 0.0 && s.is_finite() => {}
                _ => return bad(format!("missing or non-positive scale for label {label}")),
            }
        }
        for (label, m) in &self.target_means {
            if m.len() != self.feature_dim {
                return bad(format!("target mean for label {label} has wrong dimension"));
            }
        }
        Ok(())
    }

    fn mean_for(&self, role: DomainRole, label: Label) -> Vec<f64> {
        if role == DomainRole::Target {
            if let Some(m) = self.target_means.get(&label) {
                return m.clone();
            }
            let mut m = self.class_means[&label].clone();
            for (v, o) in m.iter_mut().zip(&self.target_offset) {
                *v += o;
            }
            return m;
        }
        self.class_means[&label].clone()
    }

    /// Draw `count` examples from the source or target distribution.
    pub fn sample_domain(&self, role: DomainRole, count: usize, rng: &mut Rng) -> Result<Domain> {
        self.validate()?;
        let (priors, space) = match role {
            DomainRole::Source => (&self.source_priors, self.source_labels()),
            DomainRole::Target => (&self.target_priors, self.target_labels()),
            DomainRole::Selected => {
                return Err(Error::InvalidScenario("cannot sample a selected domain".into()))
            }
        };
        let counts = apportion(priors, count)?;
        let mut labels: Vec<Label> = Vec::with_capacity(count);
        for (&label, &c) in &counts {
            labels.extend(std::iter::repeat_n(label, c));
        }
        labels.shuffle(rng);
        let examples = labels
            .into_iter()
            .map(|label| {
                let mean = self.mean_for(role, label);
                let scale = self.class_scales[&label];
                let features = mean
                    .iter()
                    .map(|m| m + scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Example {
                    features,
                    label: Some(label),
                }
            })
            .collect();
        Ok(Domain {
            role,
            examples,
            label_space: space,
        })
    }
}

/// Largest-remainder apportionment of `total` items by `priors`.
fn apportion(priors: &LabelDistribution, total: usize) -> Result<BTreeMap<Label, usize>> {
    let mut counts = BTreeMap::new();
    let mut remainders = Vec::new();
    let mut assigned = 0usize;
    for (label, p) in priors.iter() {
        let exact = p * total as f64;
        let floor = exact.floor() as usize;
        counts.insert(label, floor);
        assigned += floor;
        remainders.push((exact - floor as f64, label));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, label) in remainders.into_iter().take(total.saturating_sub(assigned)) {
        *counts.get_mut(&label).expect("label present") += 1;
    }
    if let Some((label, _)) = counts.iter().find(|(l, &c)| c == 0 && priors.prob(**l) > 0.0) {
        return Err(Error::InvalidScenario(format!(
            "label {label} receives zero examples out of {total}"
        )));
    }
    Ok(counts)
}

/// Realize the source and target domains of a scenario.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(Domain, Domain)> {
    spec.validate()?;
    let source = spec.sample_domain(
        DomainRole::Source,
        spec.source_count,
        &mut substream(spec.seed, "scenario/source"),
    )?;
    let target = spec.sample_domain(
        DomainRole::Target,
        spec.target_count,
        &mut substream(spec.seed, "scenario/target"),
    )?;
    Ok((source, target))
}

impl Domain {
    pub fn new(role: DomainRole, examples: Vec<Example>) -> Self {
        let label_space = examples.iter().filter_map(|e| e.label).collect();
        Self {
            role,
            examples,
            label_space,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.examples.first().map(|e| e.features.len())
    }

    /// Ground-truth label of example `index`, used when it gets selected.
    pub fn reveal(&self, index: usize) -> Option<Label> {
        self.examples.get(index).and_then(|e| e.label)
    }

    pub fn labels(&self) -> Vec<Option<Label>> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Row-major feature matrix.
    pub fn feature_matrix(&self) -> ndarray::Array2<f64> {
        let d = self.dim().unwrap_or(0);
        let mut m = ndarray::Array2::zeros((self.len(), d));
        for (mut row, e) in m.rows_mut().into_iter().zip(&self.examples) {
            for (r, v) in row.iter_mut().zip(&e.features) {
                *r = *v;
            }
        }
        m
    }

    /// Sub-domain made of the given example indices (in that order).
    pub fn subset(&self, role: DomainRole, indices: &[usize]) -> Domain {
        Domain::new(
            role,
            indices.iter().map(|&i| self.examples[i].clone()).collect(),
        )
    }
}

/// Keep `⌈fraction · count⌉` uniformly chosen examples of each listed label.
pub fn apply_subsample_protocol(
    domain: &Domain,
    retain: &BTreeMap<Label, f64>,
    seed: u64,
) -> Result<Domain> {
    let mut rng = substream(seed, "subsample");
    let mut keep = vec![true; domain.len()];
    for (&label, &fraction) in retain {
        if !domain.label_space.contains(&label) {
            return Err(Error::UnknownLabel(label));
        }
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!(
                "retain fraction {fraction} for label {label} outside (0, 1]"
            )));
        }
        let members: Vec<usize> = domain
            .examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == Some(label))
            .map(|(i, _)| i)
            .collect();
        let kept = (fraction * members.len() as f64).ceil() as usize;
        let chosen: BTreeSet<usize> = rand::seq::index::sample(&mut rng, members.len(), kept)
            .into_iter()
            .collect();
        for (pos, &i) in members.iter().enumerate() {
            keep[i] = chosen.contains(&pos);
        }
    }
    Ok(Domain {
        role: domain.role,
        examples: domain
            .examples
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(e, _)| e.clone())
            .collect(),
        label_space: domain.label_space.clone(),
    })
}

pub fn label_counts(labels: impl IntoIterator<Item = Label>) -> BTreeMap<Label, usize> {
    let mut counts = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    counts
}

/// `count(y) / total` over a fully labeled, non-empty domain.
pub fn empirical_label_distribution(domain: &Domain) -> Result<LabelDistribution> {
    if domain.is_empty() {
        return Err(Error::EmptyDomain);
    }
    let labels: Option<Vec<Label>> = domain.examples.iter().map(|e| e.label).collect();
    let labels = labels.ok_or_else(|| {
        Error::InvalidDistribution("domain contains unlabeled examples".into())
    })?;
    LabelDistribution::from_counts(&label_counts(labels))
}

/// Jensen-Shannon divergence in bits; labels missing on one side count as zero mass.
pub fn jsd(p: &LabelDistribution, q: &LabelDistribution) -> f64 {
    let labels: BTreeSet<Label> = p.labels().chain(q.labels()).collect();
    let mut total = 0.0;
    for l in labels {
        let (a, b) = (p.prob(l), q.prob(l));
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).log2();
        }
    }
    total.clamp(0.0, 1.0)
}

/// `Σ_{y ∈ subset} |p(y) − q(y)|`.
pub fn l1_label_distance(
    p: &LabelDistribution,
    q: &LabelDistribution,
    subset: &BTreeSet<Label>,
) -> f64 {
    subset.iter().map(|&l| (p.prob(l) - q.prob(l)).abs()).sum()
}

pub fn save_domain_csv(domain: &Domain, path: &Path) -> Result<()> {
    let d = domain.dim().unwrap_or(0);
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = String::from("label");
    for i in 0..d {
        header.push_str(&format!(",f{i}"));
    }
    writeln!(out, "{header}")?;
    for e in &domain.examples {
        let mut line = e.label.map(|l| l.to_string()).unwrap_or_default();
        for v in &e.features {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_domain_csv(path: &Path, role: DomainRole) -> Result<Domain> {
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(e.to_string()))?;
    let header = reader.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    if header.is_empty() || header.get(0) != Some("label") {
        return Err(csv_err("missing `label,f0,...` header".into()));
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(csv_err("no feature columns".into()));
    }
    let mut examples = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        if record.len() != dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: record.len().saturating_sub(1),
            });
        }
        let label = match record[0].trim() {
            "" => None,
            s => Some(Label(s.parse().map_err(|_| {
                csv_err(format!("row {row_idx}: bad label {s:?}"))
            })?)),
        };
        if label.is_none() && matches!(role, DomainRole::Source | DomainRole::Selected) {
            return Err(csv_err(format!("row {row_idx}: missing label for {role:?} domain")));
        }
        let features = record
            .iter()
            .skip(1)
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| csv_err(format!("row {row_idx}: non-numeric cell {cell:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        examples.push(Example { features, label });
    }
    if examples.is_empty() {
        return Err(csv_err("no rows".into()));
    }
    Ok(Domain::new(role, examples))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_spec() -> ScenarioSpec {
        ScenarioSpec {
            feature_dim: 2,
            common_labels: vec![Label(0)],
            source_private: vec![Label(1)],
            target_private: vec![Label(2)],
            source_priors: LabelDistribution::from_pairs([(Label(0), 0.5), (Label(1), 0.5)])
                .unwrap(),
            target_priors: LabelDistribution::from_pairs([(Label(0), 0.7), (Label(2), 0.3)])
                .unwrap(),
            class_means: BTreeMap::from([
                (Label(0), vec![0.0, 0.0]),
                (Label(1), vec![3.0, 0.0]),
                (Label(2), vec![0.0, 3.0]),
            ]),
            target_offset: vec![0.5, 0.5],
            target_means: BTreeMap::new(),
            class_scales: BTreeMap::from([(Label(0), 1.0), (Label(1), 1.0), (Label(2), 1.0)]),
            source_count: 30,
            target_count: 30,
            seed: 11,
        }
    }

    fn dist(pairs: &[(u32, f64)]) -> LabelDistribution {
        LabelDistribution::from_pairs(pairs.iter().map(|&(l, p)| (Label(l), p))).unwrap()
    }

    #[test]
    fn label_spaces_follow_spec() {
        let (s, t) = generate_scenario(&tiny_spec()).unwrap();
        assert!(s.examples.iter().all(|e| matches!(e.label, Some(Label(0 | 1)))));
        assert!(t.examples.iter().all(|e| matches!(e.label, Some(Label(0 | 2)))));
        assert_eq!(s.len(), 30);
        let common: BTreeSet<_> = s.label_space.intersection(&t.label_space).copied().collect();
        assert_eq!(common, BTreeSet::from([Label(0)]));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scenario(&tiny_spec()).unwrap();
        let b = generate_scenario(&tiny_spec()).unwrap();
        assert_eq!(a, b);
        let mut other = tiny_spec();
        other.seed = 12;
        assert_ne!(a, generate_scenario(&other).unwrap());
    }

    #[test]
    fn large_target_matches_priors() {
        let mut spec = tiny_spec();
        spec.target_count = 10_000;
        let (_, t) = generate_scenario(&spec).unwrap();
        let n0 = t.examples.iter().filter(|e| e.label == Some(Label(0))).count();
        let n2 = t.examples.iter().filter(|e| e.label == Some(Label(2))).count();
        assert!((n0 as f64 / 10_000.0 - 0.7).abs() <= 0.02);
        assert!((n2 as f64 / 10_000.0 - 0.3).abs() <= 0.02);
    }

    #[test]
    fn rejects_zero_count_and_overlap() {
        let mut spec = tiny_spec();
        spec.target_priors = dist(&[(0, 0.999), (2, 0.001)]);
        spec.target_count = 10;
        assert!(matches!(generate_scenario(&spec), Err(Error::InvalidScenario(_))));

        let mut spec = tiny_spec();
        spec.target_private = vec![Label(1)];
        assert!(generate_scenario(&spec).is_err());
    }

    #[test]
    fn subsample_keeps_ceil_fraction() {
        let examples = (0..100)
            .map(|i| Example {
                features: vec![i as f64],
                label: Some(Label(5)),
            })
            .chain((0..10).map(|i| Example {
                features: vec![-(i as f64)],
                label: Some(Label(6)),
            }))
            .collect();
        let d = Domain::new(DomainRole::Source, examples);
        let out = apply_subsample_protocol(&d, &BTreeMap::from([(Label(5), 0.3)]), 1).unwrap();
        let count = |d: &Domain, l| d.examples.iter().filter(|e| e.label == Some(Label(l))).count();
        assert_eq!(count(&out, 5), 30);
        assert_eq!(count(&out, 6), 10);

        assert_eq!(apply_subsample_protocol(&d, &BTreeMap::new(), 1).unwrap(), d);
        let full = apply_subsample_protocol(&d, &BTreeMap::from([(Label(5), 1.0)]), 1).unwrap();
        assert_eq!(count(&full, 5), 100);

        assert!(matches!(
            apply_subsample_protocol(&d, &BTreeMap::from([(Label(9), 0.5)]), 1),
            Err(Error::UnknownLabel(Label(9)))
        ));
        assert!(apply_subsample_protocol(&d, &BTreeMap::from([(Label(5), 0.0)]), 1).is_err());
    }

    #[test]
    fn empirical_distribution_counts() {
        let mk = |labels: &[u32]| {
            Domain::new(
                DomainRole::Source,
                labels
                    .iter()
                    .map(|&l| Example {
                        features: vec![0.0],
                        label: Some(Label(l)),
                    })
                    .collect(),
            )
        };
        let p = empirical_label_distribution(&mk(&[0, 0, 1])).unwrap();
        assert!((p.prob(Label(0)) - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.prob(Label(1)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(empirical_label_distribution(&mk(&[4, 4])).unwrap().prob(Label(4)), 1.0);
        let balanced: Vec<u32> = (0..400).map(|i| i % 4).collect();
        let p = empirical_label_distribution(&mk(&balanced)).unwrap();
        assert!((0..4).all(|l| p.prob(Label(l)) == 0.25));
        assert!(matches!(
            empirical_label_distribution(&mk(&[])),
            Err(Error::EmptyDomain)
        ));
    }

    #[test]
    fn jsd_reference_values() {
        let p = dist(&[(0, 0.3), (1, 0.7)]);
        assert_eq!(jsd(&p, &p), 0.0);
        assert!((jsd(&dist(&[(0, 1.0)]), &dist(&[(1, 1.0)])) - 1.0).abs() < 1e-15);
        // 0.5·log2(1/0.75) + 0.5·(0.5·log2(0.5/0.75) + 0.5·log2(0.5/0.25))
        let expected = 0.5 * (1.0f64 / 0.75).log2()
            + 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2());
        let got = jsd(&dist(&[(0, 1.0)]), &dist(&[(0, 0.5), (1, 0.5)]));
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.3113).abs() < 1e-4);
    }

    #[test]
    fn l1_reference_values() {
        let all = BTreeSet::from([Label(0), Label(1)]);
        let p = dist(&[(0, 0.6), (1, 0.4)]);
        let q = dist(&[(0, 0.2), (1, 0.8)]);
        assert_eq!(l1_label_distance(&p, &p, &all), 0.0);
        assert!((l1_label_distance(&p, &q, &all) - 0.8).abs() < 1e-12);
        let point = dist(&[(0, 1.0)]);
        let other = dist(&[(1, 1.0)]);
        assert_eq!(l1_label_distance(&point, &other, &BTreeSet::from([Label(0)])), 1.0);
    }

    #[test]
    fn distribution_validation_and_json() {
        assert!(LabelDistribution::from_pairs([(Label(0), 0.5)]).is_err());
        assert!(LabelDistribution::from_pairs([(Label(0), 1.5), (Label(1), -0.5)]).is_err());
        let spec = tiny_spec();
        let json = serde_json::to_string(&spec).unwrap();
        let back: ScenarioSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (s, mut t) = generate_scenario(&tiny_spec()).unwrap();
        let path = dir.path().join("source.csv");
        save_domain_csv(&s, &path).unwrap();
        assert_eq!(load_domain_csv(&path, DomainRole::Source).unwrap(), s);

        t.examples[3].label = None;
        let tpath = dir.path().join("target.csv");
        save_domain_csv(&t, &tpath).unwrap();
        let back = load_domain_csv(&tpath, DomainRole::Target).unwrap();
        assert_eq!(back.examples, t.examples);
        assert!(load_domain_csv(&tpath, DomainRole::Source).is_err());

        let short = dir.path().join("short.csv");
        std::fs::write(&short, "label,f0,f1,f2,f3\n1,0.1,0.2,0.3\n").unwrap();
        assert!(matches!(
            load_domain_csv(&short, DomainRole::Source),
            Err(Error::DimensionMismatch { expected: 4, got: 3 })
        ));
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(load_domain_csv(&empty, DomainRole::Source).is_err());
        let junk = dir.path().join("junk.csv");
        std::fs::write(&junk, "label,f0\n1,abc\n").unwrap();
        assert!(load_domain_csv(&junk, DomainRole::Source).is_err());
    }
}
