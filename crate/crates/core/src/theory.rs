//! Exact evaluation of the target-risk upper bound on finite joint
//! distributions of (true label, predicted label).

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::rng::{indexed_substream, Rng};

const SUM_TOL: f64 = 1e-9;

/// Joint distribution `P(Y = y, Ŷ = ŷ)` as a dense table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    true_labels: Vec<Label>,
    predicted_labels: Vec<Label>,
    /// Rows: true label, columns: predicted label.
    table: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    pub fn new(entries: &BTreeMap<(Label, Label), f64>) -> Result<Self> {
        let true_labels: Vec<Label> = entries.keys().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect();
        let predicted_labels: Vec<Label> =
            entries.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();
        let mut table = vec![vec![0.0; predicted_labels.len()]; true_labels.len()];
        for (&(y, yh), &p) in entries {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::InvalidDistribution(format!("P({y}, {yh}) = {p}")));
            }
            let r = true_labels.binary_search(&y).expect("collected");
            let c = predicted_labels.binary_search(&yh).expect("collected");
            table[r][c] = p;
        }
        let total: f64 = table.iter().flatten().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDistribution(format!("joint sums to {total}")));
        }
        Ok(Self {
            true_labels,
            predicted_labels,
            table,
        })
    }

    /// `priors[y] · conditionals[y][ŷ]`.
    pub fn from_conditionals(
        priors: &BTreeMap<Label, f64>,
        conditionals: &BTreeMap<Label, BTreeMap<Label, f64>>,
    ) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (&y, &p) in priors {
            let row = conditionals.get(&y).ok_or(Error::UnknownLabel(y))?;
            for (&yh, &q) in row {
                entries.insert((y, yh), p * q);
            }
        }
        Self::new(&entries)
    }

    /// Empirical joint of paired labels; an estimate, not a population value.
    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                got: predicted.len(),
            });
        }
        if truth.is_empty() {
            return Err(Error::EmptyDomain);
        }
        let mut entries: BTreeMap<(Label, Label), f64> = BTreeMap::new();
        let w = 1.0 / truth.len() as f64;
        for (&y, &yh) in truth.iter().zip(predicted) {
            *entries.entry((y, yh)).or_default() += w;
        }
        Self::new(&entries)
    }

    pub fn p(&self, y: Label, yh: Label) -> f64 {
        match (
            self.true_labels.binary_search(&y),
            self.predicted_labels.binary_search(&yh),
        ) {
            (Ok(r), Ok(c)) => self.table[r][c],
            _ => 0.0,
        }
    }

    /// `P(Y = y)`.
    pub fn prior(&self, y: Label) -> f64 {
        self.true_labels
            .binary_search(&y)
            .map_or(0.0, |r| self.table[r].iter().sum())
    }

    /// `P(Ŷ = ŷ | Y = y)`.
    pub fn conditional(&self, yh: Label, y: Label) -> Result<f64> {
        let prior = self.prior(y);
        if !(prior > 0.0) {
            return Err(Error::ZeroProbabilityClass(y));
        }
        Ok(self.p(y, yh) / prior)
    }

    /// `P(Ŷ ≠ y | Y = y)`.
    pub fn class_error(&self, y: Label) -> Result<f64> {
        Ok(1.0 - self.conditional(y, y)?)
    }

    pub fn true_labels(&self) -> &[Label] {
        &self.true_labels
    }

    pub fn predicted_labels(&self) -> &[Label] {
        &self.predicted_labels
    }

    pub fn as_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.true_labels.len(), self.predicted_labels.len()), |(r, c)| {
            self.table[r][c]
        })
    }
}

/// Balanced error rate: largest per-class error over `subset` (0 if empty).
pub fn ber(joint: &DiscreteJoint, subset: &BTreeSet<Label>) -> Result<f64> {
    subset
        .iter()
        .try_fold(0.0f64, |m, &j| Ok(m.max(joint.class_error(j)?)))
}

/// Conditional error gap: `max |P_a(Ŷ=i|Y=j) − P_b(Ŷ=i|Y=j)|` over ordered
/// pairs `i ≠ j` of `subset`.
pub fn ceg(a: &DiscreteJoint, b: &DiscreteJoint, subset: &BTreeSet<Label>) -> Result<f64> {
    let mut best = 0.0f64;
    for &j in subset {
        for &i in subset {
            if i != j {
                best = best.max((a.conditional(i, j)? - b.conditional(i, j)?).abs());
            }
        }
    }
    Ok(best)
}

/// `Σ_{j ∈ subset} P(Y=j) · P(Ŷ ≠ j | Y = j)`.
pub fn risk(joint: &DiscreteJoint, subset: &BTreeSet<Label>) -> f64 {
    subset
        .iter()
        .map(|&j| joint.prior(j) - joint.p(j, j))
        .sum()
}

/// `Σ_{j ∈ subset} |P_a(Y=j) − P_b(Y=j)|`.
pub fn prior_l1(a: &DiscreteJoint, b: &DiscreteJoint, subset: &BTreeSet<Label>) -> f64 {
    subset.iter().map(|&j| (a.prior(j) - b.prior(j)).abs()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpaces {
    pub common: BTreeSet<Label>,
    pub source_private: BTreeSet<Label>,
    pub target_private: BTreeSet<Label>,
    pub selected: BTreeSet<Label>,
}

impl LabelSpaces {
    pub fn target(&self) -> BTreeSet<Label> {
        self.common.union(&self.target_private).copied().collect()
    }

    pub fn source(&self) -> BTreeSet<Label> {
        self.common.union(&self.source_private).copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let overlaps = !self.common.is_disjoint(&self.source_private)
            || !self.common.is_disjoint(&self.target_private)
            || !self.source_private.is_disjoint(&self.target_private);
        if overlaps {
            return Err(Error::InvalidScenario("label spaces overlap".into()));
        }
        if !self.selected.is_subset(&self.target()) {
            return Err(Error::InvalidScenario(
                "selected labels must lie in the target label space".into(),
            ));
        }
        Ok(())
    }
}

/// One `‖ΔP‖₁ · BER + 2(m−1) · CEG` shift term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftTerm {
    pub prior_l1: f64,
    pub ber: f64,
    pub ceg: f64,
    pub classes: usize,
    pub value: f64,
}

fn shift_term(a: &DiscreteJoint, t: &DiscreteJoint, subset: &BTreeSet<Label>) -> Result<ShiftTerm> {
    if subset.is_empty() {
        return Ok(ShiftTerm {
            prior_l1: 0.0,
            ber: 0.0,
            ceg: 0.0,
            classes: 0,
            value: 0.0,
        });
    }
    let l1 = prior_l1(a, t, subset);
    let b = ber(a, subset)?;
    let c = ceg(a, t, subset)?;
    let m = subset.len();
    Ok(ShiftTerm {
        prior_l1: l1,
        ber: b,
        ceg: c,
        classes: m,
        value: l1 * b + 2.0 * (m as f64 - 1.0) * c,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// Source risk restricted to the common label space.
    pub source_common_risk: f64,
    pub selected_risk: f64,
    pub source_shift: ShiftTerm,
    pub selected_shift: ShiftTerm,
    /// Largest conditional error over target-private classes.
    pub target_private_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub terms: BoundTerms,
    pub bound: f64,
    pub target_risk: f64,
    pub slack: f64,
    /// Set when the joints were estimated from finite samples.
    pub estimate: bool,
}

/// The five-term upper bound on the target risk and its components.
pub fn risk_bound(
    source: &DiscreteJoint,
    selected: &DiscreteJoint,
    target: &DiscreteJoint,
    spaces: &LabelSpaces,
) -> Result<(f64, BoundTerms)> {
    spaces.validate()?;
    let terms = BoundTerms {
        source_common_risk: risk(source, &spaces.common),
        selected_risk: risk(selected, &spaces.selected),
        source_shift: shift_term(source, target, &spaces.common)?,
        selected_shift: shift_term(selected, target, &spaces.selected)?,
        target_private_error: ber(target, &spaces.target_private)?,
    };
    let bound = terms.source_common_risk
        + terms.selected_risk
        + terms.source_shift.value
        + terms.selected_shift.value
        + terms.target_private_error;
    Ok((bound, terms))
}

pub fn bound_report(
    source: &DiscreteJoint,
    selected: &DiscreteJoint,
    target: &DiscreteJoint,
    spaces: &LabelSpaces,
    estimate: bool,
) -> Result<BoundReport> {
    let (bound, terms) = risk_bound(source, selected, target, spaces)?;
    let target_risk = risk(target, &spaces.target());
    Ok(BoundReport {
        terms,
        bound,
        target_risk,
        slack: bound - target_risk,
        estimate,
    })
}

/// Exact joints for one randomized scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundScenario {
    pub spaces: LabelSpaces,
    pub source: DiscreteJoint,
    pub selected: DiscreteJoint,
    pub target: DiscreteJoint,
}

fn dirichlet_ones(n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| <Exp1 as Distribution<f64>>::sample(&Exp1, rng).max(1e-12))
        .collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Random scenario: 1–3 common classes and 1–2 private classes per side;
/// Dirichlet(1) priors; Dirichlet(1) predictor rows over `Y_s ∪ Y_t`; the
/// selected set covers a random non-empty subset of `Y_t` with its own
/// Dirichlet prior and the target's conditionals.
pub fn random_scenario(rng: &mut Rng) -> Result<BoundScenario> {
    let k = rng.random_range(1..=3u32);
    let ns = rng.random_range(1..=2u32);
    let nt = rng.random_range(1..=2u32);
    let common: BTreeSet<Label> = (0..k).map(Label).collect();
    let source_private: BTreeSet<Label> = (k..k + ns).map(Label).collect();
    let target_private: BTreeSet<Label> = (k + ns..k + ns + nt).map(Label).collect();
    let all: Vec<Label> = (0..k + ns + nt).map(Label).collect();

    let mut target_labels: Vec<Label> = common.union(&target_private).copied().collect();
    let mut shuffled = target_labels.clone();
    shuffled.shuffle(rng);
    let v = rng.random_range(1..=shuffled.len());
    let selected: BTreeSet<Label> = shuffled[..v].iter().copied().collect();

    let row = |rng: &mut Rng| -> BTreeMap<Label, f64> {
        all.iter().copied().zip(dirichlet_ones(all.len(), rng)).collect()
    };
    let source_labels: Vec<Label> = common.union(&source_private).copied().collect();
    let source_cond: BTreeMap<_, _> = source_labels.iter().map(|&y| (y, row(rng))).collect();
    target_labels.sort();
    let target_cond: BTreeMap<_, _> = target_labels.iter().map(|&y| (y, row(rng))).collect();
    let priors = |labels: &[Label], rng: &mut Rng| -> BTreeMap<Label, f64> {
        labels.iter().copied().zip(dirichlet_ones(labels.len(), rng)).collect()
    };
    let ps = priors(&source_labels, rng);
    let pt = priors(&target_labels, rng);
    let sel: Vec<Label> = selected.iter().copied().collect();
    let pl = priors(&sel, rng);
    Ok(BoundScenario {
        source: DiscreteJoint::from_conditionals(&ps, &source_cond)?,
        target: DiscreteJoint::from_conditionals(&pt, &target_cond)?,
        selected: DiscreteJoint::from_conditionals(&pl, &target_cond)?,
        spaces: LabelSpaces {
            common,
            source_private,
            target_private,
            selected,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckSummary {
    pub scenarios: usize,
    pub violations: usize,
    pub min_slack: f64,
    pub tolerance: f64,
    /// Scenario with the smallest slack.
    pub tightest: Option<BoundScenario>,
}

/// Evaluate the bound on `count` random scenarios; a violation is a slack
/// below `−tolerance`.
pub fn check_bound_family(count: usize, seed: u64, tolerance: f64) -> Result<BoundCheckSummary> {
    let mut summary = BoundCheckSummary {
        scenarios: count,
        violations: 0,
        min_slack: f64::INFINITY,
        tolerance,
        tightest: None,
    };
    for i in 0..count {
        let mut rng = indexed_substream(seed, "bound-scenario", i as u64);
        let sc = random_scenario(&mut rng)?;
        let report = bound_report(&sc.source, &sc.selected, &sc.target, &sc.spaces, false)?;
        if report.slack < -tolerance {
            summary.violations += 1;
        }
        if report.slack < summary.min_slack {
            summary.min_slack = report.slack;
            summary.tightest = Some(sc);
        }
    }
    Ok(summary)
}
