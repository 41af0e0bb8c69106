//! Monetary policies: who wins a round and how the budget is split.
//!
//! A [`PolicySpec`] names one of the four policies. Each round it resolves to
//! a [`StagePolicy`], the stationary rule the stage-game solvers evaluate.
//! Only the lookahead-simulating policy needs per-round state (a shadow
//! trajectory), so it resolves to a fixed designated winner for that round.

use std::collections::BTreeMap;

use crate::equilibrium::{lookahead_equilibrium, StageGame, TieRule};
use crate::error::{check_unit_interval, Error, Result};
use crate::model::{Instance, ParticipationSet, PlayerId, Ranking, StakeProfile};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PolicySpec {
    /// Winner drawn proportionally to `alpha * type + (1 - alpha) * stake`.
    MuAlpha { alpha: Scalar },
    /// Highest type wins; with `epsilon > 0` the other participants share
    /// probability `epsilon` uniformly.
    MuStar { epsilon: Scalar },
    /// Highest type wins; budget split evenly among participants.
    MuAll,
    /// Winner is whoever the highest-type policy would pick one round later
    /// against lookahead players.
    MuEll { horizon_cap: usize },
}

impl PolicySpec {
    pub fn mu_star() -> Self {
        PolicySpec::MuStar { epsilon: Scalar::zero() }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PolicySpec::MuAlpha { alpha } => check_unit_interval("alpha", alpha),
            PolicySpec::MuStar { epsilon } => check_unit_interval("epsilon", epsilon),
            PolicySpec::MuAll => Ok(()),
            PolicySpec::MuEll { horizon_cap } if *horizon_cap == 0 => Err(Error::invalid("horizon_cap must be >= 1")),
            PolicySpec::MuEll { .. } => Ok(()),
        }
    }

    /// The stationary stage rule, or `None` for the shadow-driven policy.
    pub fn stationary_stage(&self) -> Option<StagePolicy> {
        match self {
            PolicySpec::MuAlpha { alpha } => Some(StagePolicy::Proportional { alpha: alpha.clone() }),
            PolicySpec::MuStar { epsilon } => Some(StagePolicy::TopType { epsilon: epsilon.clone() }),
            PolicySpec::MuAll => Some(StagePolicy::AllPay),
            PolicySpec::MuEll { .. } => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::MuAlpha { .. } => "mu_alpha",
            PolicySpec::MuStar { .. } => "mu_star",
            PolicySpec::MuAll => "mu_all",
            PolicySpec::MuEll { .. } => "mu_ell",
        }
    }
}

/// The rule in force for a single round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StagePolicy {
    Proportional { alpha: Scalar },
    TopType { epsilon: Scalar },
    AllPay,
    Designated(PlayerId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WinnerDistribution(BTreeMap<PlayerId, Scalar>);

impl WinnerDistribution {
    pub fn point(id: PlayerId) -> Self {
        WinnerDistribution([(id, Scalar::one())].into_iter().collect())
    }

    pub fn probability(&self, id: PlayerId) -> Scalar {
        self.0.get(&id).cloned().unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PlayerId, &Scalar)> + '_ {
        self.0.iter().map(|(id, p)| (*id, p))
    }

    pub fn total(&self) -> Scalar {
        self.0.values().sum()
    }

    /// The sole winner when the distribution is deterministic.
    pub fn point_mass(&self) -> Option<PlayerId> {
        let mut positive = self.0.iter().filter(|(_, p)| p.is_positive());
        match (positive.next(), positive.next()) {
            (Some((id, _)), None) => Some(*id),
            _ => None,
        }
    }

    /// Inverse-CDF draw for `u` in `[0, 1)`, walking players in `order`.
    pub fn pick(&self, order: &[PlayerId], u: &Scalar) -> Option<PlayerId> {
        let mut acc = Scalar::zero();
        let mut last = None;
        for id in order {
            if let Some(p) = self.0.get(id) {
                if !p.is_positive() {
                    continue;
                }
                acc += p;
                last = Some(*id);
                if *u < acc {
                    return Some(*id);
                }
            }
        }
        last
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BudgetAllocation(BTreeMap<PlayerId, Scalar>);

impl BudgetAllocation {
    pub fn get(&self, id: PlayerId) -> Scalar {
        self.0.get(&id).cloned().unwrap_or_default()
    }

    pub fn total(&self) -> Scalar {
        self.0.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PlayerId, &Scalar)> + '_ {
        self.0.iter().map(|(id, r)| (*id, r))
    }

    /// Adds explicit zero entries so every player has a reward.
    pub fn padded<I: IntoIterator<Item = PlayerId>>(mut self, ids: I) -> Self {
        for id in ids {
            self.0.entry(id).or_default();
        }
        self
    }
}

impl FromIterator<(PlayerId, Scalar)> for BudgetAllocation {
    fn from_iter<T: IntoIterator<Item = (PlayerId, Scalar)>>(iter: T) -> Self {
        BudgetAllocation(iter.into_iter().collect())
    }
}

/// Participant with the largest type, ties to the smallest id.
pub fn top_type(instance: &Instance, participants: &ParticipationSet) -> Result<PlayerId> {
    let mut best: Option<(PlayerId, &Scalar)> = None;
    for id in participants.iter() {
        let t = instance.type_of(id)?;
        // iteration is by ascending id, so strict `>` keeps the smaller id on ties
        if best.is_none_or(|(_, bt)| t > bt) {
            best = Some((id, t));
        }
    }
    best.map(|(id, _)| id).ok_or(Error::EmptyParticipants)
}

pub fn winner_distribution(
    policy: &StagePolicy,
    instance: &Instance,
    participants: &ParticipationSet,
    stakes: &StakeProfile,
) -> Result<WinnerDistribution> {
    if participants.is_empty() {
        return Err(Error::EmptyParticipants);
    }
    match policy {
        StagePolicy::Proportional { alpha } => {
            let one_minus = Scalar::one() - alpha;
            let weights: Vec<(PlayerId, Scalar)> = participants
                .iter()
                .map(|id| Ok((id, alpha * instance.type_of(id)? + &one_minus * stakes.stake(id)?)))
                .collect::<Result<_>>()?;
            let total: Scalar = weights.iter().map(|(_, w)| w).sum();
            if !total.is_positive() {
                return Err(Error::ZeroTotalStake);
            }
            Ok(WinnerDistribution(weights.into_iter().map(|(id, w)| (id, w / &total)).collect()))
        }
        StagePolicy::TopType { epsilon } => {
            let top = top_type(instance, participants)?;
            let others = participants.len() - 1;
            if others == 0 || epsilon.is_zero() {
                return Ok(WinnerDistribution::point(top));
            }
            let share = epsilon / Scalar::from(others);
            Ok(WinnerDistribution(
                participants
                    .iter()
                    .map(|id| (id, if id == top { Scalar::one() - epsilon } else { share.clone() }))
                    .collect(),
            ))
        }
        StagePolicy::AllPay => Ok(WinnerDistribution::point(top_type(instance, participants)?)),
        StagePolicy::Designated(w) => {
            if participants.contains(*w) {
                Ok(WinnerDistribution::point(*w))
            } else {
                Err(Error::NotParticipating(*w))
            }
        }
    }
}

pub fn budget_allocation(
    policy: &StagePolicy,
    budget: &Scalar,
    participants: &ParticipationSet,
    winner: PlayerId,
) -> Result<BudgetAllocation> {
    if !participants.contains(winner) {
        return Err(Error::NotParticipating(winner));
    }
    Ok(match policy {
        StagePolicy::AllPay => {
            let share = budget / Scalar::from(participants.len());
            participants.iter().map(|id| (id, share.clone())).collect()
        }
        _ => [(winner, budget.clone())].into_iter().collect(),
    })
}

/// Expected reward of `player` when exactly `participants` take part.
pub fn expected_budget(
    policy: &StagePolicy,
    instance: &Instance,
    player: PlayerId,
    participants: &ParticipationSet,
    stakes: &StakeProfile,
) -> Result<Scalar> {
    if !participants.contains(player) {
        return Ok(Scalar::zero());
    }
    Ok(match policy {
        StagePolicy::AllPay => &instance.budget / Scalar::from(participants.len()),
        StagePolicy::Designated(w) => {
            if *w == player {
                instance.budget.clone()
            } else {
                Scalar::zero()
            }
        }
        _ => winner_distribution(policy, instance, participants, stakes)?.probability(player) * &instance.budget,
    })
}

/// Expected rewards of every participant; absent players get nothing.
pub fn expected_allocation(
    policy: &StagePolicy,
    instance: &Instance,
    participants: &ParticipationSet,
    stakes: &StakeProfile,
) -> Result<BudgetAllocation> {
    if participants.is_empty() {
        return Ok(BudgetAllocation::default());
    }
    match policy {
        StagePolicy::Proportional { .. } | StagePolicy::TopType { .. } => {
            let dist = winner_distribution(policy, instance, participants, stakes)?;
            Ok(dist.iter().map(|(id, p)| (id, p * &instance.budget)).collect())
        }
        _ => participants
            .iter()
            .map(|id| Ok((id, expected_budget(policy, instance, id, participants, stakes)?)))
            .collect(),
    }
}

/// Highest-type play against lookahead players, run alongside the real game
/// from the same initial stakes. Drives the lookahead-simulating policy.
#[derive(Clone, Debug)]
pub struct ShadowTrajectory {
    stakes: StakeProfile,
    rounds_played: u64,
    horizon_cap: usize,
    winners: Vec<PlayerId>,
}

impl ShadowTrajectory {
    pub fn new(instance: &Instance, horizon_cap: usize) -> Self {
        ShadowTrajectory {
            stakes: instance.initial_stakes.clone(),
            rounds_played: 0,
            horizon_cap,
            winners: Vec::new(),
        }
    }

    pub fn stakes(&self) -> &StakeProfile {
        &self.stakes
    }

    pub fn rounds_played(&self) -> u64 {
        self.rounds_played
    }

    /// Shadow winners so far, round 1 first.
    pub fn winners(&self) -> &[PlayerId] {
        &self.winners
    }

    fn advance(&mut self, instance: &Instance) -> Result<PlayerId> {
        let stage = StagePolicy::TopType { epsilon: Scalar::zero() };
        let game = StageGame::new(instance, &stage).with_tie_rule(TieRule::FavorParticipation);
        let round = self.rounds_played + 1;
        let eq = lookahead_equilibrium(&game, &self.stakes, self.horizon_cap).map_err(|e| e.at_round(round))?;
        let winner = top_type(instance, &eq.participants)?;
        self.stakes = self.stakes.plus([(winner, &instance.budget)]);
        self.rounds_played = round;
        self.winners.push(winner);
        Ok(winner)
    }

    /// Winner for the next real round `t`: the shadow's winner at round
    /// `t + 1`. Advances the shadow by one round (two on the first call).
    pub fn next_winner(&mut self, instance: &Instance) -> Result<PlayerId> {
        if self.rounds_played == 0 {
            self.advance(instance)?;
        }
        self.advance(instance)
    }
}

/// Convenience for callers that hold a ranking and want the ordering used
/// by sampled draws.
pub fn draw_order(ranking: &Ranking, participants: &ParticipationSet) -> Vec<PlayerId> {
    ranking.order().iter().copied().filter(|id| participants.contains(*id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Player, ValueFunction};

    fn two_player(alpha: Scalar) -> (Instance, StagePolicy) {
        let inst = Instance::simple(
            &[Scalar::from_int(2), Scalar::one()],
            &[Scalar::one(), Scalar::one()],
            Scalar::one(),
            Scalar::ratio(1, 2),
            ValueFunction::Identity,
        );
        (inst, StagePolicy::Proportional { alpha })
    }

    fn all(inst: &Instance) -> ParticipationSet {
        ParticipationSet::subset(inst.ids())
    }

    #[test]
    fn proportional_half() {
        let (inst, pol) = two_player(Scalar::ratio(1, 2));
        let w = winner_distribution(&pol, &inst, &all(&inst), &inst.initial_stakes).unwrap();
        // virtual stakes (3/2, 1), total 5/2
        assert_eq!(w.probability(PlayerId(1)), Scalar::ratio(3, 5));
        assert_eq!(w.probability(PlayerId(2)), Scalar::ratio(2, 5));
        assert_eq!(w.total(), Scalar::one());
        let b = expected_budget(&pol, &inst, PlayerId(1), &all(&inst), &inst.initial_stakes).unwrap();
        assert_eq!(b, Scalar::ratio(3, 5));
    }

    #[test]
    fn proportional_pure_stake() {
        let (inst, pol) = two_player(Scalar::zero());
        let stakes = StakeProfile::from_values([3i64, 1]);
        let w = winner_distribution(&pol, &inst, &all(&inst), &stakes).unwrap();
        assert_eq!(w.probability(PlayerId(1)), Scalar::ratio(3, 4));
        assert_eq!(w.probability(PlayerId(2)), Scalar::ratio(1, 4));
    }

    #[test]
    fn top_type_point_mass_and_tie_by_id() {
        let inst = Instance::example1();
        let pol = StagePolicy::TopType { epsilon: Scalar::zero() };
        let w = winner_distribution(&pol, &inst, &all(&inst), &inst.initial_stakes).unwrap();
        assert_eq!(w.point_mass(), Some(PlayerId(1)));
        let tied = inst.with_types(&[Scalar::from_int(2), Scalar::from_int(2), Scalar::one()]);
        let w = winner_distribution(&pol, &tied, &all(&tied), &tied.initial_stakes).unwrap();
        assert_eq!(w.point_mass(), Some(PlayerId(1)));
        assert_eq!(
            expected_budget(&pol, &inst, PlayerId(2), &all(&inst), &inst.initial_stakes).unwrap(),
            Scalar::zero()
        );
        assert_eq!(
            expected_budget(&pol, &inst, PlayerId(1), &all(&inst), &inst.initial_stakes).unwrap(),
            Scalar::one()
        );
    }

    #[test]
    fn top_type_with_noise() {
        let inst = Instance::example1();
        let pol = StagePolicy::TopType { epsilon: Scalar::ratio(1, 10) };
        let w = winner_distribution(&pol, &inst, &all(&inst), &inst.initial_stakes).unwrap();
        assert_eq!(w.probability(PlayerId(1)), Scalar::ratio(9, 10));
        assert_eq!(w.probability(PlayerId(3)), Scalar::ratio(1, 20));
        assert_eq!(w.total(), Scalar::one());
        assert!(w.point_mass().is_none());
    }

    #[test]
    fn empty_participants_rejected() {
        let inst = Instance::example1();
        let pol = StagePolicy::AllPay;
        assert!(matches!(
            winner_distribution(&pol, &inst, &ParticipationSet::empty(), &inst.initial_stakes),
            Err(Error::EmptyParticipants)
        ));
    }

    #[test]
    fn allocations() {
        let one = Scalar::one();
        let p = ParticipationSet::subset([PlayerId(1), PlayerId(2), PlayerId(3)]);
        let b = budget_allocation(&StagePolicy::TopType { epsilon: Scalar::zero() }, &one, &p, PlayerId(1)).unwrap();
        assert_eq!(b.get(PlayerId(1)), one);
        assert_eq!(b.get(PlayerId(2)), Scalar::zero());
        let b = budget_allocation(&StagePolicy::AllPay, &one, &p, PlayerId(1)).unwrap();
        assert_eq!(b.get(PlayerId(3)), Scalar::ratio(1, 3));
        assert_eq!(b.total(), one);
        let solo = ParticipationSet::subset([PlayerId(2)]);
        let b = budget_allocation(&StagePolicy::AllPay, &one, &solo, PlayerId(2)).unwrap();
        assert_eq!(b.get(PlayerId(2)), one);
        assert!(matches!(
            budget_allocation(&StagePolicy::AllPay, &one, &solo, PlayerId(1)),
            Err(Error::NotParticipating(PlayerId(1)))
        ));
    }

    #[test]
    fn inverse_cdf_pick() {
        let w = WinnerDistribution(
            [(PlayerId(1), Scalar::ratio(1, 4)), (PlayerId(2), Scalar::ratio(3, 4))].into_iter().collect(),
        );
        let order = [PlayerId(2), PlayerId(1)];
        assert_eq!(w.pick(&order, &Scalar::zero()), Some(PlayerId(2)));
        assert_eq!(w.pick(&order, &Scalar::ratio(74, 100)), Some(PlayerId(2)));
        assert_eq!(w.pick(&order, &Scalar::ratio(3, 4)), Some(PlayerId(1)));
    }

    #[test]
    fn shadow_winners_follow_lookahead_play() {
        let inst = Instance::example1();
        let mut shadow = ShadowTrajectory::new(&inst, 10);
        let got: Vec<u32> = (0..4).map(|_| shadow.next_winner(&inst).unwrap().0).collect();
        assert_eq!(got, vec![1, 2, 1, 3]);
    }

    #[test]
    fn cost_field_is_ignored_by_policies() {
        let inst = Instance::new(
            vec![Player::new(1, Scalar::from_int(2)).with_cost(Scalar::one()), Player::new(2, Scalar::one())],
            StakeProfile::from_values([1i64, 1]),
            Scalar::one(),
            Scalar::ratio(1, 2),
            ValueFunction::Identity,
        );
        let pol = StagePolicy::TopType { epsilon: Scalar::zero() };
        let w = winner_distribution(&pol, &inst, &all(&inst), &inst.initial_stakes).unwrap();
        assert_eq!(w.point_mass(), Some(PlayerId(1)));
    }
}
