//! Decentralization indices, token value, and checkers for the structural
//! assumptions the equilibrium results rely on.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Instance, ParticipationSet, StakeProfile, ValueFunction};
use crate::scalar::Scalar;

/// Minimum number of parties whose combined stake is strictly more than a
/// `tau` fraction of the total.
pub fn tau_decentralization_index(stakes: &[Scalar], tau: &Scalar) -> Result<u32> {
    if stakes.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let total: Scalar = stakes.iter().sum();
    if !total.is_positive() {
        return Err(Error::ZeroTotalStake);
    }
    let mut sorted: Vec<&Scalar> = stakes.iter().collect();
    sorted.sort_by(|a, b| b.cmp(a));
    let target = tau * &total;
    let mut acc = Scalar::zero();
    for (k, s) in sorted.into_iter().enumerate() {
        acc += s;
        if acc > target {
            return Ok(k as u32 + 1);
        }
    }
    // tau < 1 and total > 0 make this unreachable.
    Ok(stakes.len() as u32)
}

/// Largest index any `n` stakes can reach: the `k` largest of `n` stakes
/// always hold at least `k/n` of the total, so the index never exceeds
/// `floor(tau * n) + 1`.
pub fn max_tau_index(n: usize, tau: &Scalar) -> u32 {
    if n == 0 {
        return 1;
    }
    let bound = (tau * Scalar::from(n)).floor_i64().unwrap_or(i64::MAX).saturating_add(1);
    bound.clamp(1, n as i64) as u32
}

/// Index over the participants' stakes only. The empty set maps to 1, the
/// minimum; only the brute-force oracle ever asks for it.
pub fn participant_index(stakes: &StakeProfile, participants: &ParticipationSet, tau: &Scalar) -> Result<u32> {
    if participants.is_empty() {
        return Ok(1);
    }
    let values = stakes.restricted(participants.members())?;
    tau_decentralization_index(&values, tau)
}

pub fn token_value(d: u32, vf: &ValueFunction) -> Result<Scalar> {
    if d == 0 {
        return Err(Error::invalid("decentralization index must be at least 1"));
    }
    vf.eval(d)
}

/// Token value of the system when exactly `participants` take part.
pub fn system_value(instance: &Instance, stakes: &StakeProfile, participants: &ParticipationSet) -> Result<Scalar> {
    let d = participant_index(stakes, participants, &instance.tau_threshold)?;
    token_value(d, &instance.value_function)
}

type CustomFn = dyn Fn(&[Scalar]) -> u32 + Send + Sync;

#[derive(Clone)]
pub enum DecentralizationMeasure {
    TauIndex(Scalar),
    /// Arbitrary measure, used to exercise the axiom checker.
    Custom { name: String, measure: Arc<CustomFn> },
}

impl DecentralizationMeasure {
    pub fn custom(name: impl Into<String>, f: impl Fn(&[Scalar]) -> u32 + Send + Sync + 'static) -> Self {
        DecentralizationMeasure::Custom { name: name.into(), measure: Arc::new(f) }
    }

    pub fn eval(&self, stakes: &[Scalar]) -> Result<u32> {
        match self {
            DecentralizationMeasure::TauIndex(tau) => tau_decentralization_index(stakes, tau),
            DecentralizationMeasure::Custom { measure, .. } => Ok(measure(stakes)),
        }
    }
}

impl fmt::Debug for DecentralizationMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecentralizationMeasure::TauIndex(tau) => write!(f, "TauIndex({tau})"),
            DecentralizationMeasure::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AxiomViolation {
    /// A singleton scored above some other vector.
    SingletonNotMinimal { singleton: Vec<Scalar>, other: Vec<Scalar> },
    /// Removing a top-stake player did not raise the measure, but removing
    /// player at `removed` (0-based position) did.
    RemovalMonotonicity { stakes: Vec<Scalar>, top: usize, removed: usize },
}

#[derive(Clone, Debug, Default)]
pub struct AxiomReport {
    pub vectors_checked: usize,
    pub violations: Vec<AxiomViolation>,
}

impl AxiomReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn all_vectors(n_max: usize, grid: &[Scalar]) -> Vec<Vec<Scalar>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<Scalar>> = vec![Vec::new()];
    for _ in 0..n_max {
        let mut next = Vec::with_capacity(layer.len() * grid.len());
        for v in &layer {
            for g in grid {
                let mut w = v.clone();
                w.push(g.clone());
                next.push(w);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// Exhaustively checks both structural conditions over every vector of
/// length `1..=n_max` with entries drawn from `grid`:
/// singletons minimise the measure, and whenever removing a maximum-stake
/// player does not increase the measure, removing anyone else does not
/// either.
pub fn check_decentralization_axioms(
    measure: &DecentralizationMeasure,
    n_max: usize,
    grid: &[Scalar],
) -> Result<AxiomReport> {
    if n_max < 2 || grid.is_empty() {
        return Err(Error::invalid("axiom check needs n_max >= 2 and a nonempty grid"));
    }
    let vectors = all_vectors(n_max, grid);
    let mut report = AxiomReport { vectors_checked: vectors.len(), violations: Vec::new() };
    let scored: Vec<(Vec<Scalar>, u32)> = vectors
        .into_iter()
        .map(|v| measure.eval(&v).map(|d| (v, d)))
        .collect::<Result<_>>()?;

    // Condition 1: every singleton scores no more than the global minimum.
    let min_score = scored.iter().map(|(_, d)| *d).min().unwrap_or(1);
    if let Some((witness, _)) = scored.iter().find(|(_, d)| *d == min_score) {
        for (v, d) in scored.iter().filter(|(v, _)| v.len() == 1) {
            if *d > min_score {
                report.violations.push(AxiomViolation::SingletonNotMinimal {
                    singleton: v.clone(),
                    other: witness.clone(),
                });
            }
        }
    }

    // Condition 2, for every choice of maximum-stake player.
    for (v, d) in scored.iter().filter(|(v, _)| v.len() >= 2) {
        let max = v.iter().max().expect("nonempty");
        let without = |k: usize| -> Result<u32> {
            let mut w = v.clone();
            w.remove(k);
            measure.eval(&w)
        };
        let removal: Vec<u32> = (0..v.len()).map(without).collect::<Result<_>>()?;
        for top in (0..v.len()).filter(|&k| v[k] == *max) {
            if *d >= removal[top] {
                for other in (0..v.len()).filter(|&k| k != top) {
                    if *d < removal[other] {
                        report.violations.push(AxiomViolation::RemovalMonotonicity {
                            stakes: v.clone(),
                            top,
                            removed: other,
                        });
                    }
                }
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentFinding {
    pub low_value: Scalar,
    pub high_value: Scalar,
    /// Stakes strictly above this make the pair aligned.
    pub critical_stake: Scalar,
}

#[derive(Clone, Debug, Default)]
pub struct AlignmentReport {
    /// Pairs for which some stake at or above the bound fails strictly.
    pub violations: Vec<AlignmentFinding>,
    /// Pairs that hold with equality exactly at the bound.
    pub boundary: Vec<AlignmentFinding>,
}

impl AlignmentReport {
    pub fn is_aligned(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that a drop in token value always outweighs one round's budget:
/// for every pair of attainable value levels `v1 < v2` and every stake
/// `s >= stake_lower_bound`, `v1 * (s + budget) < v2 * s`. This is linear in
/// `s`, so it reduces to `stake_lower_bound > v1 * budget / (v2 - v1)`.
pub fn check_alignment(instance: &Instance, stake_lower_bound: &Scalar) -> Result<AlignmentReport> {
    if !stake_lower_bound.is_positive() {
        return Err(Error::invalid("stake lower bound must be positive"));
    }
    let d_max = max_tau_index(instance.n(), &instance.tau_threshold);
    let mut levels: Vec<Scalar> = (1..=d_max)
        .map(|d| token_value(d, &instance.value_function))
        .collect::<Result<_>>()?;
    levels.sort();
    levels.dedup();
    let mut report = AlignmentReport::default();
    for (k, low) in levels.iter().enumerate() {
        for high in &levels[k + 1..] {
            let critical = low * &instance.budget / (high - low);
            let finding = AlignmentFinding {
                low_value: low.clone(),
                high_value: high.clone(),
                critical_stake: critical.clone(),
            };
            if *stake_lower_bound < critical {
                report.violations.push(finding);
            } else if *stake_lower_bound == critical && instance.budget.is_positive() {
                report.boundary.push(finding);
            }
        }
    }
    Ok(report)
}
