//! Exact information quantities by full summation over an enumerated joint.
//!
//! All values are in bits. Directed information is computed through the
//! chain rule over time,
//! `I(X -> Y || W) = sum_j I(Y_j ; X^{j-1} | Y^{j-1}, W^{j-1})`,
//! with each term expanded into marginal entropies.

use crate::model::{marginal_conditional, Joint, ModelError, Var};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Default threshold below which an exact quantity counts as zero.
pub const DEFAULT_EPS: f64 = 1e-9;
/// Exact values this far below zero are rounding noise and clamp to zero.
pub const CLAMP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum InfoError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("process index {index} out of range for {m} processes")]
    ProcessOutOfRange { index: usize, m: usize },
    #[error("process sets overlap on {0}")]
    Overlap(usize),
    #[error("process set is empty")]
    EmptySet,
    #[error("pmf lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("exact value {0} is negative beyond rounding tolerance")]
    Negative(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoKind {
    Kl,
    Mi,
    Di,
    Ccdi,
    EntropyRate,
    NormalizedRate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoSource {
    Exact,
    Estimated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoUnit {
    Bits,
    Nats,
    /// Dimensionless ratio of two entropy rates.
    Fraction,
}

/// A divergence or information quantity together with how it was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoValue {
    pub value: f64,
    pub kind: InfoKind,
    pub source: InfoSource,
    pub unit: InfoUnit,
    /// Baseline entropy rate of a normalized estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denominator: Option<f64>,
}

impl InfoValue {
    /// Exact value in bits. Small negative rounding residue is clamped to 0;
    /// anything more negative indicates a bug and is reported.
    pub fn exact(kind: InfoKind, raw: f64) -> Result<Self, InfoError> {
        if raw < -CLAMP_TOL {
            return Err(InfoError::Negative(raw));
        }
        Ok(InfoValue {
            value: raw.max(0.0),
            kind,
            source: InfoSource::Exact,
            unit: InfoUnit::Bits,
            denominator: None,
        })
    }

    /// Normalized estimate, kept raw (it may be slightly negative from noise).
    pub fn normalized_estimate(value: f64, denominator: f64) -> Self {
        InfoValue {
            value,
            kind: InfoKind::NormalizedRate,
            source: InfoSource::Estimated,
            unit: InfoUnit::Fraction,
            denominator: Some(denominator),
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }
}

/// Source set, target process and conditioning set of a (causally conditioned)
/// directed information query. The three parts are pairwise disjoint.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProcessSelector {
    pub sources: BTreeSet<usize>,
    pub target: usize,
    pub conditioning: BTreeSet<usize>,
}

impl ProcessSelector {
    pub fn new(
        sources: impl IntoIterator<Item = usize>,
        target: usize,
        conditioning: impl IntoIterator<Item = usize>,
        m: usize,
    ) -> Result<Self, InfoError> {
        let sources: BTreeSet<usize> = sources.into_iter().collect();
        let conditioning: BTreeSet<usize> = conditioning.into_iter().collect();
        for &p in sources.iter().chain(&conditioning).chain([&target]) {
            if p >= m {
                return Err(InfoError::ProcessOutOfRange { index: p, m });
            }
        }
        if sources.contains(&target) || conditioning.contains(&target) {
            return Err(InfoError::Overlap(target));
        }
        if let Some(&p) = sources.intersection(&conditioning).next() {
            return Err(InfoError::Overlap(p));
        }
        Ok(ProcessSelector {
            sources,
            target,
            conditioning,
        })
    }

    /// `I(X_k -> X_i || X_{rest})` over all other processes.
    pub fn pairwise_full(k: usize, i: usize, m: usize) -> Result<Self, InfoError> {
        Self::new([k], i, (0..m).filter(|&p| p != k && p != i), m)
    }
}

/// `D(p || q)` in bits, with `0 log 0 = 0` and `+inf` when `p` is not
/// absolutely continuous with respect to `q`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<InfoValue, InfoError> {
    if p.len() != q.len() {
        return Err(InfoError::LengthMismatch(p.len(), q.len()));
    }
    let mut d = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return InfoValue::exact(InfoKind::Kl, f64::INFINITY);
            }
            d += a * (a / b).log2();
        }
    }
    InfoValue::exact(InfoKind::Kl, d)
}

/// Shannon entropy in bits of the marginal over `vars`.
pub fn entropy(joint: &Joint, vars: &[Var]) -> f64 {
    if vars.is_empty() {
        return 0.0;
    }
    joint
        .marginal(vars)
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// `I(A ; B | C)` in bits for variable lists.
pub fn conditional_mutual_information(joint: &Joint, a: &[Var], b: &[Var], c: &[Var]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let cat = |xs: &[&[Var]]| -> Vec<Var> { xs.concat() };
    entropy(joint, &cat(&[a, c])) + entropy(joint, &cat(&[b, c]))
        - entropy(joint, &cat(&[a, b, c]))
        - entropy(joint, c)
}

fn check_sets(m: usize, sets: &[&BTreeSet<usize>]) -> Result<(), InfoError> {
    let mut seen = BTreeSet::new();
    for s in sets {
        for &p in s.iter() {
            if p >= m {
                return Err(InfoError::ProcessOutOfRange { index: p, m });
            }
            if !seen.insert(p) {
                return Err(InfoError::Overlap(p));
            }
        }
    }
    Ok(())
}

fn vars_at(procs: &BTreeSet<usize>, times: std::ops::Range<usize>) -> Vec<Var> {
    procs
        .iter()
        .flat_map(|&p| times.clone().map(move |t| Var::new(p, t)))
        .collect()
}

/// Raw `sum_j I(Y_j ; X^{j-1} | Y^{j-1}, W^{j-1})` in bits for process sets.
pub fn ccdi_raw(
    joint: &Joint,
    x: &BTreeSet<usize>,
    y: &BTreeSet<usize>,
    w: &BTreeSet<usize>,
) -> f64 {
    if x.is_empty() || y.is_empty() {
        return 0.0;
    }
    (1..joint.n())
        .map(|j| {
            let yj = vars_at(y, j..j + 1);
            let xp = vars_at(x, 0..j);
            let mut cond = vars_at(y, 0..j);
            cond.extend(vars_at(w, 0..j));
            conditional_mutual_information(joint, &yj, &xp, &cond)
        })
        .sum()
}

/// `I(X_{sources} -> X_{targets} || X_{conditioning})` for arbitrary disjoint sets.
pub fn cc_directed_information_sets(
    joint: &Joint,
    sources: &BTreeSet<usize>,
    targets: &BTreeSet<usize>,
    conditioning: &BTreeSet<usize>,
) -> Result<InfoValue, InfoError> {
    check_sets(joint.m(), &[sources, targets, conditioning])?;
    if targets.is_empty() {
        return Err(InfoError::EmptySet);
    }
    let kind = if conditioning.is_empty() {
        InfoKind::Di
    } else {
        InfoKind::Ccdi
    };
    InfoValue::exact(kind, ccdi_raw(joint, sources, targets, conditioning))
}

/// `I(X_{sources} -> X_{target} || X_{conditioning})`.
pub fn cc_directed_information(
    joint: &Joint,
    sel: &ProcessSelector,
) -> Result<InfoValue, InfoError> {
    cc_directed_information_sets(
        joint,
        &sel.sources,
        &BTreeSet::from([sel.target]),
        &sel.conditioning,
    )
}

/// `I(X_k -> X_i)`.
pub fn directed_information(joint: &Joint, from: usize, to: usize) -> Result<InfoValue, InfoError> {
    let sel = ProcessSelector::new([from], to, [], joint.m())?;
    cc_directed_information(joint, &sel)
}

/// `I(X_a^n ; X_b^n)` between whole trajectories of two disjoint process sets.
pub fn mutual_information(
    joint: &Joint,
    a: &BTreeSet<usize>,
    b: &BTreeSet<usize>,
) -> Result<InfoValue, InfoError> {
    if a.is_empty() || b.is_empty() {
        return Err(InfoError::EmptySet);
    }
    check_sets(joint.m(), &[a, b])?;
    let n = joint.n();
    let raw = conditional_mutual_information(joint, &vars_at(a, 0..n), &vars_at(b, 0..n), &[]);
    InfoValue::exact(InfoKind::Mi, raw)
}

/// Whether `X -> W -> Y` is a causal Markov chain, i.e. `I(X -> Y || W) <= eps`.
pub fn is_causal_markov_chain(
    joint: &Joint,
    x: &BTreeSet<usize>,
    w: &BTreeSet<usize>,
    y: &BTreeSet<usize>,
    eps: f64,
) -> Result<bool, InfoError> {
    Ok(cc_directed_information_sets(joint, x, y, w)?.value <= eps)
}

/// Expected cumulative log-loss reduction, in bits, of the optimal sequential
/// predictor of the target that sees the past of sources and conditioning
/// processes over the one that only sees the conditioning processes.
///
/// Computed pointwise as `E[sum_t log q*(x_t) / q~*(x_t)]` with both predictors
/// taken as conditional pmfs of the joint.
pub fn log_loss_reduction(joint: &Joint, sel: &ProcessSelector) -> Result<f64, InfoError> {
    check_sets(
        joint.m(),
        &[
            &sel.sources,
            &BTreeSet::from([sel.target]),
            &sel.conditioning,
        ],
    )?;
    let mut base: BTreeSet<usize> = sel.conditioning.clone();
    base.insert(sel.target);
    let mut full = base.clone();
    full.extend(sel.sources.iter().copied());
    let mut total = 0.0;
    for t in 0..joint.n() {
        let target = Var::new(sel.target, t);
        let with = marginal_conditional(joint, target, &vars_at(&full, 0..t))?;
        let without = marginal_conditional(joint, target, &vars_at(&base, 0..t))?;
        for (code, &p) in joint.probs().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let tr = joint.trajectory(code);
            let q = with.prob_on(&tr).unwrap_or(0.0);
            let r = without.prob_on(&tr).unwrap_or(0.0);
            total += p * (q / r).log2();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{enumerate_joint, GenerativeModelBuilder, DEFAULT_STATE_CAP};

    fn h2(p: f64) -> f64 {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }

    fn noisy_copy_joint(flip: f64) -> Joint {
        let model = GenerativeModelBuilder::binary(2, 2, 1)
            .parents(1, &[0])
            .unwrap()
            .factor(0, 0, vec![], vec![0.5, 0.5])
            .unwrap()
            .factor(0, 1, vec![], vec![0.5, 0.5])
            .unwrap()
            .factor(1, 0, vec![], vec![0.5, 0.5])
            .unwrap()
            .factor(
                1,
                1,
                vec![Var::new(0, 0)],
                vec![1.0 - flip, flip, flip, 1.0 - flip],
            )
            .unwrap()
            .build()
            .unwrap();
        enumerate_joint(&model, DEFAULT_STATE_CAP).unwrap()
    }

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn kl_cases() {
        assert_eq!(kl_divergence(&[0.5, 0.5], &[0.5, 0.5]).unwrap().value, 0.0);
        let expected = 0.5 * (0.5f64 / 0.25).log2() + 0.5 * (0.5f64 / 0.75).log2();
        let d = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap().value;
        assert!((d - expected).abs() < 1e-15);
        assert!((d - 0.20752).abs() < 1e-5);
        assert!(kl_divergence(&[0.0, 1.0], &[1.0, 0.0])
            .unwrap()
            .is_infinite());
        assert_eq!(kl_divergence(&[0.0, 1.0], &[0.5, 0.5]).unwrap().value, 1.0);
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn noisy_copy_directed_information() {
        let joint = noisy_copy_joint(0.1);
        let fwd = directed_information(&joint, 0, 1).unwrap();
        assert!((fwd.value - (1.0 - h2(0.1))).abs() < 1e-12);
        assert!((fwd.value - 0.531).abs() < 1e-3);
        assert_eq!(fwd.kind, InfoKind::Di);
        let rev = directed_information(&joint, 1, 0).unwrap();
        assert!(rev.value <= 1e-12);
        let mi = mutual_information(&joint, &set(&[0]), &set(&[1])).unwrap();
        assert!(mi.value >= fwd.value - 1e-12);
        let mi_rev = mutual_information(&joint, &set(&[1]), &set(&[0])).unwrap();
        assert!((mi.value - mi_rev.value).abs() < 1e-12);
    }

    #[test]
    fn selector_validation() {
        assert!(ProcessSelector::new([0], 0, [], 3).is_err());
        assert!(ProcessSelector::new([0], 1, [0], 3).is_err());
        assert!(ProcessSelector::new([5], 1, [], 3).is_err());
        let s = ProcessSelector::pairwise_full(0, 2, 4).unwrap();
        assert_eq!(s.conditioning, set(&[1, 3]));
        let joint = noisy_copy_joint(0.1);
        assert!(mutual_information(&joint, &set(&[0]), &set(&[0])).is_err());
    }

    #[test]
    fn ccdi_with_empty_conditioning_is_di() {
        let joint = noisy_copy_joint(0.2);
        let sel = ProcessSelector::new([0], 1, [], 2).unwrap();
        let a = cc_directed_information(&joint, &sel).unwrap();
        let b = directed_information(&joint, 0, 1).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn pointwise_regret_matches_entropy_route() {
        let joint = noisy_copy_joint(0.1);
        let sel = ProcessSelector::new([0], 1, [], 2).unwrap();
        let regret = log_loss_reduction(&joint, &sel).unwrap();
        let di = cc_directed_information(&joint, &sel).unwrap().value;
        assert!((regret - di).abs() < 1e-12);
    }

    #[test]
    fn markov_chain_check() {
        let joint = noisy_copy_joint(0.1);
        assert!(
            !is_causal_markov_chain(&joint, &set(&[0]), &set(&[]), &set(&[1]), DEFAULT_EPS)
                .unwrap()
        );
        assert!(
            is_causal_markov_chain(&joint, &set(&[1]), &set(&[]), &set(&[0]), DEFAULT_EPS).unwrap()
        );
    }

    #[test]
    fn clamp_policy() {
        assert_eq!(InfoValue::exact(InfoKind::Di, -1e-12).unwrap().value, 0.0);
        assert!(InfoValue::exact(InfoKind::Di, -1e-3).is_err());
    }
}
