//! Expected dynamics of proportional selection on virtual stake
//! `p_i = α τ_i + (1 − α) σ_i`, with unit budget and full participation.

use crate::error::{check_unit_interval, Error, Result};
use crate::model::{Instance, Player, StakeProfile, ValueFunction};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VirtualStakeState {
    pub alpha: Scalar,
    pub types: Vec<Scalar>,
    pub stakes: Vec<Scalar>,
}

impl VirtualStakeState {
    pub fn new(alpha: Scalar, types: Vec<Scalar>, stakes: Vec<Scalar>) -> Result<Self> {
        check_unit_interval("alpha", &alpha)?;
        if types.is_empty() || types.len() != stakes.len() {
            return Err(Error::invalid("types and stakes must be nonempty and of equal length"));
        }
        let state = VirtualStakeState { alpha, types, stakes };
        if !state.virtual_total().is_positive() {
            return Err(Error::ZeroTotalStake);
        }
        Ok(state)
    }

    /// Players in id order.
    pub fn from_instance(instance: &Instance, alpha: Scalar) -> Result<Self> {
        let types = instance.players.iter().map(|p| p.type_.clone()).collect();
        let stakes = instance.players.iter().map(|p| instance.initial_stakes.stake(p.id).cloned()).collect::<Result<_>>()?;
        VirtualStakeState::new(alpha, types, stakes)
    }

    pub fn n(&self) -> usize {
        self.types.len()
    }

    pub fn virtual_stakes(&self) -> Vec<Scalar> {
        let beta = Scalar::one() - &self.alpha;
        self.types.iter().zip(&self.stakes).map(|(t, s)| &self.alpha * t + &beta * s).collect()
    }

    /// `W`.
    pub fn virtual_total(&self) -> Scalar {
        self.virtual_stakes().iter().sum()
    }

    /// `T`.
    pub fn type_total(&self) -> Scalar {
        self.types.iter().sum()
    }

    /// `S`.
    pub fn stake_total(&self) -> Scalar {
        self.stakes.iter().sum()
    }

    /// Fraction of the total stake held by each player.
    pub fn stake_fractions(&self) -> Vec<Scalar> {
        let s = self.stake_total();
        self.stakes.iter().map(|x| x / &s).collect()
    }
}

pub fn selection_probabilities(state: &VirtualStakeState) -> Vec<Scalar> {
    let p = state.virtual_stakes();
    let w: Scalar = p.iter().sum();
    p.into_iter().map(|x| x / &w).collect()
}

/// Every player gains its selection probability in stake.
pub fn expected_step(state: &VirtualStakeState) -> VirtualStakeState {
    let w = selection_probabilities(state);
    VirtualStakeState {
        alpha: state.alpha.clone(),
        types: state.types.clone(),
        stakes: state.stakes.iter().zip(w).map(|(s, w)| s + w).collect(),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InvarianceReport {
    pub steps: usize,
    /// Steps (from 1) at which the probability vector changed.
    pub probability_changes: Vec<usize>,
    /// Steps violating `S' = S + 1`.
    pub stake_recurrence_failures: Vec<usize>,
    /// Steps violating `W' = W + (1 − α)`.
    pub virtual_recurrence_failures: Vec<usize>,
    /// Steps where `p' ≠ p · (1 + (1 − α) / W)`.
    pub rescaling_failures: Vec<usize>,
}

impl InvarianceReport {
    pub fn holds(&self) -> bool {
        self.probability_changes.is_empty()
            && self.stake_recurrence_failures.is_empty()
            && self.virtual_recurrence_failures.is_empty()
            && self.rescaling_failures.is_empty()
    }
}

pub fn check_invariance(state: &VirtualStakeState, steps: usize) -> Result<InvarianceReport> {
    if steps == 0 {
        return Err(Error::invalid("steps must be >= 1"));
    }
    let beta = Scalar::one() - &state.alpha;
    let w0 = selection_probabilities(state);
    let mut report = InvarianceReport { steps, ..Default::default() };
    let mut cur = state.clone();
    for k in 1..=steps {
        let next = expected_step(&cur);
        let (s, w) = (cur.stake_total(), cur.virtual_total());
        if next.stake_total() != &s + Scalar::one() {
            report.stake_recurrence_failures.push(k);
        }
        if next.virtual_total() != &w + &beta {
            report.virtual_recurrence_failures.push(k);
        }
        let factor = Scalar::one() + &beta / &w;
        let scaled = cur.virtual_stakes().into_iter().map(|p| p * &factor);
        if !scaled.eq(next.virtual_stakes()) {
            report.rescaling_failures.push(k);
        }
        if selection_probabilities(&next) != w0 {
            report.probability_changes.push(k);
        }
        cur = next;
    }
    Ok(report)
}

/// Per-round expected stake increment, fixed by the first round.
pub fn longrun_share(state: &VirtualStakeState) -> Vec<Scalar> {
    selection_probabilities(state)
}

/// Expected stake fractions after `t` rounds, `(σ_i + t w_i) / (S + t)`.
pub fn expected_fractions_after(state: &VirtualStakeState, t: u64) -> Vec<Scalar> {
    let t = Scalar::from(t as usize);
    let w = selection_probabilities(state);
    let total = state.stake_total() + &t;
    state.stakes.iter().zip(w).map(|(s, w)| (s + &t * w) / &total).collect()
}

/// Index of the largest type, first on ties.
pub fn top_type_index(types: &[Scalar]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, t) in types.iter().enumerate() {
        if best.is_none_or(|b| *t > types[b]) {
            best = Some(k);
        }
    }
    best
}

/// Instance where the top-type player starts with stake 1 and the first other
/// player starts at `α (τ* − τ_i) / (1 − α) + M`; everyone else holds 1.
/// Unit budget, identity value, majority index.
pub fn dilution_counterexample(alpha: &Scalar, types: &[Scalar], m: &Scalar) -> Result<Instance> {
    check_unit_interval("alpha", alpha)?;
    if *alpha == Scalar::one() {
        return Err(Error::invalid("alpha must be below 1"));
    }
    if types.len() < 2 {
        return Err(Error::invalid("at least two players are needed"));
    }
    if m.is_negative() {
        return Err(Error::invalid("M must be non-negative"));
    }
    let top = top_type_index(types).expect("nonempty");
    let other = if top == 0 { 1 } else { 0 };
    let lift = alpha * (&types[top] - &types[other]) / (Scalar::one() - alpha) + m;
    let stakes: Vec<Scalar> = (0..types.len()).map(|k| if k == other { lift.clone() } else { Scalar::one() }).collect();
    let players = types.iter().enumerate().map(|(k, t)| Player::new(k as u32 + 1, t.clone())).collect();
    Ok(Instance::new(
        players,
        StakeProfile::from_values(stakes),
        Scalar::one(),
        Scalar::ratio(1, 2),
        ValueFunction::Identity,
    ))
}
