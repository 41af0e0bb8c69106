//! Stage-game equilibria: harmfulness, the myopic labeling procedure, the
//! lookahead suffix procedure with recovery plans, the trajectory threshold
//! and an exhaustive oracle over all participation subsets.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::measures::{max_tau_index, system_value};
use crate::model::{Instance, ParticipationSet, PlayerId, Ranking, StakeProfile};
use crate::policies::{expected_allocation, expected_budget, PolicySpec, StagePolicy};
use crate::scalar::Scalar;

/// How utility ties between participating and abstaining are resolved.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash)]
pub enum TieRule {
    /// Indifferent players participate.
    #[default]
    FavorParticipation,
    /// Players participate only on a strict gain.
    Strict,
}

impl TieRule {
    /// Whether a player with these utilities abstains.
    pub fn abstains(self, participate: &Scalar, abstain: &Scalar) -> bool {
        match self {
            TieRule::FavorParticipation => participate < abstain,
            TieRule::Strict => participate <= abstain,
        }
    }
}

/// How players decide whether to take part in a round.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Behavior {
    Myopic,
    Lookahead { horizon_cap: usize },
    /// Everyone always participates.
    Full,
}

impl Behavior {
    pub fn name(&self) -> &'static str {
        match self {
            Behavior::Myopic => "myopic",
            Behavior::Lookahead { .. } => "lookahead",
            Behavior::Full => "full",
        }
    }
}

/// One round's stage game: an instance, the rule in force, and the tie rule.
#[derive(Copy, Clone, Debug)]
pub struct StageGame<'a> {
    pub instance: &'a Instance,
    pub policy: &'a StagePolicy,
    pub tie_rule: TieRule,
}

impl<'a> StageGame<'a> {
    pub fn new(instance: &'a Instance, policy: &'a StagePolicy) -> Self {
        StageGame { instance, policy, tie_rule: TieRule::default() }
    }

    pub fn with_tie_rule(mut self, tie_rule: TieRule) -> Self {
        self.tie_rule = tie_rule;
        self
    }

    /// `(σ_i + B_i(P)) · v(d(σ_P)) − c_i`.
    pub fn participation_utility(&self, i: PlayerId, p: &ParticipationSet, stakes: &StakeProfile) -> Result<Scalar> {
        let reward = expected_budget(self.policy, self.instance, i, p, stakes)?;
        let value = system_value(self.instance, stakes, p)?;
        Ok((stakes.stake(i)? + reward) * value - &self.instance.player(i)?.cost)
    }

    /// `σ_i · v(d(σ_Q))`.
    pub fn holding_utility(&self, i: PlayerId, q: &ParticipationSet, stakes: &StakeProfile) -> Result<Scalar> {
        Ok(stakes.stake(i)? * system_value(self.instance, stakes, q)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HarmfulnessVerdict {
    pub player: PlayerId,
    pub participants: ParticipationSet,
    pub utility_participate: Scalar,
    pub utility_abstain: Scalar,
    /// Strictly worse off participating.
    pub harmful: bool,
}

impl HarmfulnessVerdict {
    /// Whether the player abstains under `rule`; differs from `harmful`
    /// only on exact ties.
    pub fn abstains(&self, rule: TieRule) -> bool {
        rule.abstains(&self.utility_participate, &self.utility_abstain)
    }
}

pub fn is_harmful(game: &StageGame, i: PlayerId, p: &ParticipationSet, stakes: &StakeProfile) -> Result<HarmfulnessVerdict> {
    if !p.contains(i) {
        return Err(Error::NotParticipating(i));
    }
    let utility_participate = game.participation_utility(i, p, stakes)?;
    let utility_abstain = game.holding_utility(i, &p.without(i), stakes)?;
    Ok(HarmfulnessVerdict {
        player: i,
        participants: p.clone(),
        harmful: utility_participate < utility_abstain,
        utility_participate,
        utility_abstain,
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Label {
    /// Abstaining is better as long as ranks `r..=n` keep playing.
    RecoveryWinner(usize),
    /// No later rank rescues the player; it participates.
    Par,
}

#[derive(Clone, Debug)]
pub struct Labels {
    pub ranking: Ranking,
    /// Only players harmful in their own suffix carry a label.
    pub labels: BTreeMap<PlayerId, Label>,
    /// Per-rank suffix verdicts, rank 1 first.
    pub verdicts: Vec<HarmfulnessVerdict>,
    /// Utility comparisons performed.
    pub evaluations: usize,
}

impl Labels {
    pub fn get(&self, id: PlayerId) -> Option<Label> {
        self.labels.get(&id).copied()
    }

    /// Whether rank `k` stays in when the suffix from `k` is on the table.
    fn keeps(&self, k: usize, rule: TieRule) -> bool {
        !self.verdicts[k - 1].abstains(rule) || self.get(self.ranking.at(k)) == Some(Label::Par)
    }
}

pub fn recovery_winner_labels(game: &StageGame, stakes: &StakeProfile) -> Result<Labels> {
    let ranking = stakes.rank()?;
    let n = ranking.len();
    let mut verdicts = Vec::with_capacity(n);
    for k in 1..=n {
        let p = ParticipationSet::suffix(&ranking, k);
        verdicts.push(is_harmful(game, ranking.at(k), &p, stakes)?);
    }
    let mut labels = Labels { ranking, labels: BTreeMap::new(), verdicts, evaluations: n };
    for k in (1..=n).rev() {
        if !labels.verdicts[k - 1].abstains(game.tie_rule) {
            continue;
        }
        let i = labels.ranking.at(k);
        let mut label = Label::Par;
        if let Some(r) = (k + 1..=n).find(|&r| labels.keeps(r, game.tie_rule)) {
            let rescued = ParticipationSet::suffix(&labels.ranking, r);
            let abstain = game.holding_utility(i, &rescued, stakes)?;
            labels.evaluations += r - k;
            if game.tie_rule.abstains(&labels.verdicts[k - 1].utility_participate, &abstain) {
                label = Label::RecoveryWinner(r);
            }
        }
        labels.labels.insert(i, label);
    }
    Ok(labels)
}

/// Myopic stage equilibrium and the number of utility comparisons used.
pub fn myopic_equilibrium_counted(game: &StageGame, stakes: &StakeProfile) -> Result<(ParticipationSet, usize)> {
    let labels = recovery_winner_labels(game, stakes)?;
    let n = labels.ranking.len();
    let k = (1..=n).find(|&k| labels.keeps(k, game.tie_rule)).unwrap_or(n);
    Ok((ParticipationSet::suffix(&labels.ranking, k), labels.evaluations))
}

pub fn myopic_equilibrium(game: &StageGame, stakes: &StakeProfile) -> Result<ParticipationSet> {
    myopic_equilibrium_counted(game, stakes).map(|(p, _)| p)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanStep {
    /// Rounds after the current one, starting at 1.
    pub offset: usize,
    pub participants: ParticipationSet,
    /// Expected stakes at the start of that round.
    pub stakes: StakeProfile,
}

/// Future equilibria an abstaining player expects until it re-enters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecoveryPlan {
    pub owner: PlayerId,
    pub steps: Vec<PlanStep>,
}

impl RecoveryPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The round at which the owner participates again.
    pub fn last(&self) -> Option<&PlanStep> {
        self.steps.last()
    }
}

#[derive(Clone, Debug)]
pub struct LookaheadEquilibrium {
    pub participants: ParticipationSet,
    /// One plan per excluded player.
    pub plans: BTreeMap<PlayerId, RecoveryPlan>,
    /// Profiles solved, including those inside plans.
    pub solved_profiles: usize,
}

/// Memoizing solver for lookahead equilibria. Solving a profile needs
/// recovery plans, and plans need equilibria at future expected profiles.
/// The cap bounds how far past the root profile any nested plan may reach.
pub struct LookaheadSolver<'g> {
    game: StageGame<'g>,
    horizon_cap: usize,
    /// Rounds between the root profile and the one being solved.
    elapsed: usize,
    ceiling: Scalar,
    memo: HashMap<StakeProfile, ParticipationSet>,
    in_progress: HashSet<StakeProfile>,
}

impl<'g> LookaheadSolver<'g> {
    pub fn new(game: StageGame<'g>, horizon_cap: usize) -> Result<Self> {
        if horizon_cap == 0 {
            return Err(Error::invalid("horizon_cap must be >= 1"));
        }
        if matches!(game.policy, StagePolicy::Designated(_)) {
            return Err(Error::Unsupported("lookahead players under a designated-winner rule".into()));
        }
        let inst = game.instance;
        let top = max_tau_index(inst.n(), &inst.tau_threshold);
        let mut ceiling = inst.value_function.eval(1)?;
        for d in 2..=top {
            ceiling = ceiling.max(inst.value_function.eval(d)?);
        }
        Ok(LookaheadSolver { game, horizon_cap, elapsed: 0, ceiling, memo: HashMap::new(), in_progress: HashSet::new() })
    }

    pub fn solved_profiles(&self) -> usize {
        self.memo.len()
    }

    pub fn solve(&mut self, stakes: &StakeProfile) -> Result<ParticipationSet> {
        if let Some(p) = self.memo.get(stakes) {
            return Ok(p.clone());
        }
        if !self.in_progress.insert(stakes.clone()) {
            return Err(Error::Unsupported(format!("recovery plan returns to unsolved profile {stakes}")));
        }
        let result = self.solve_fresh(stakes);
        self.in_progress.remove(stakes);
        let p = result?;
        self.memo.insert(stakes.clone(), p.clone());
        Ok(p)
    }

    fn solve_at(&mut self, stakes: &StakeProfile, elapsed: usize) -> Result<ParticipationSet> {
        let outer = std::mem::replace(&mut self.elapsed, elapsed);
        let result = self.solve(stakes);
        self.elapsed = outer;
        result
    }

    fn solve_fresh(&mut self, stakes: &StakeProfile) -> Result<ParticipationSet> {
        let ranking = stakes.rank()?;
        let n = ranking.len();
        for k in 1..n {
            let i = ranking.at(k);
            let p = ParticipationSet::suffix(&ranking, k);
            let participate = self.game.participation_utility(i, &p, stakes)?;
            let best_case = stakes.stake(i)? * &self.ceiling;
            if !self.game.tie_rule.abstains(&participate, &best_case) {
                return Ok(p);
            }
            let plan = self.plan(i, stakes, ParticipationSet::suffix(&ranking, k + 1))?;
            let abstain = self.plan_value(i, stakes, &plan)?;
            if !self.game.tie_rule.abstains(&participate, &abstain) {
                return Ok(p);
            }
        }
        Ok(ParticipationSet::suffix(&ranking, n))
    }

    /// `σ_i · v(d)` at the plan's last round, where the owner re-enters.
    pub fn plan_value(&self, owner: PlayerId, stakes: &StakeProfile, plan: &RecoveryPlan) -> Result<Scalar> {
        let last = plan.last().ok_or(Error::HorizonCapExceeded { player: owner, cap: self.horizon_cap })?;
        Ok(stakes.stake(owner)? * system_value(self.game.instance, &last.stakes, &last.participants)?)
    }

    /// Plays expected rounds from `current` until `owner` participates.
    pub fn plan(&mut self, owner: PlayerId, stakes: &StakeProfile, current: ParticipationSet) -> Result<RecoveryPlan> {
        let mut s = stakes.clone();
        let mut cur = current;
        let mut steps = Vec::new();
        let base = self.elapsed;
        for offset in 1..=self.horizon_cap.saturating_sub(base) {
            let alloc = expected_allocation(self.game.policy, self.game.instance, &cur, &s)?;
            s = s.plus(alloc.iter());
            let next = self.solve_at(&s, base + offset)?;
            let done = next.contains(owner);
            steps.push(PlanStep { offset, participants: next.clone(), stakes: s.clone() });
            if done {
                return Ok(RecoveryPlan { owner, steps });
            }
            cur = next;
        }
        Err(Error::HorizonCapExceeded { player: owner, cap: self.horizon_cap })
    }

    /// Equilibrium plus the plans of everyone it excludes, read off one
    /// expected trajectory.
    pub fn equilibrium(&mut self, stakes: &StakeProfile) -> Result<LookaheadEquilibrium> {
        let participants = self.solve(stakes)?;
        let mut open: Vec<PlayerId> = stakes.ids().filter(|id| !participants.contains(*id)).collect();
        let mut plans = BTreeMap::new();
        let mut s = stakes.clone();
        let mut cur = participants.clone();
        let mut steps = Vec::new();
        let mut offset = 0;
        while !open.is_empty() {
            offset += 1;
            if offset > self.horizon_cap {
                return Err(Error::HorizonCapExceeded { player: open[0], cap: self.horizon_cap });
            }
            let alloc = expected_allocation(self.game.policy, self.game.instance, &cur, &s)?;
            s = s.plus(alloc.iter());
            let next = self.solve_at(&s, offset)?;
            steps.push(PlanStep { offset, participants: next.clone(), stakes: s.clone() });
            open.retain(|id| {
                if next.contains(*id) {
                    plans.insert(*id, RecoveryPlan { owner: *id, steps: steps.clone() });
                    false
                } else {
                    true
                }
            });
            cur = next;
        }
        Ok(LookaheadEquilibrium { participants, plans, solved_profiles: self.memo.len() })
    }
}

pub fn lookahead_equilibrium(game: &StageGame, stakes: &StakeProfile, horizon_cap: usize) -> Result<LookaheadEquilibrium> {
    LookaheadSolver::new(*game, horizon_cap)?.equilibrium(stakes)
}

/// Stage equilibrium for any behavior.
pub fn stage_equilibrium(game: &StageGame, stakes: &StakeProfile, behavior: Behavior) -> Result<ParticipationSet> {
    match behavior {
        Behavior::Myopic => myopic_equilibrium(game, stakes),
        Behavior::Lookahead { horizon_cap } => Ok(lookahead_equilibrium(game, stakes, horizon_cap)?.participants),
        Behavior::Full => Ok(ParticipationSet::subset(stakes.ids())),
    }
}

pub const BRUTE_FORCE_MAX_PLAYERS: usize = 12;

#[derive(Clone, Debug)]
pub struct BruteForceResult {
    pub equilibria: Vec<ParticipationSet>,
    /// The empty set was examined, under the `d(∅) = 1` convention.
    pub empty_set_evaluated: bool,
}

/// Every subset where no member leaves and no outsider joins.
pub fn brute_force_equilibrium(game: &StageGame, stakes: &StakeProfile, behavior: Behavior) -> Result<BruteForceResult> {
    let ids: Vec<PlayerId> = stakes.ids().collect();
    let n = ids.len();
    if n > BRUTE_FORCE_MAX_PLAYERS {
        return Err(Error::TooManyPlayers { n, max: BRUTE_FORCE_MAX_PLAYERS });
    }
    if n == 0 {
        return Err(Error::EmptyProfile);
    }
    if behavior == Behavior::Full {
        return Ok(BruteForceResult { equilibria: vec![ParticipationSet::subset(ids)], empty_set_evaluated: false });
    }
    let mut solver = match behavior {
        Behavior::Lookahead { horizon_cap } => Some(LookaheadSolver::new(*game, horizon_cap)?),
        _ => None,
    };
    let mut abstain_value = |i: PlayerId, q: &ParticipationSet| -> Result<Option<Scalar>> {
        match solver.as_mut() {
            None => game.holding_utility(i, q, stakes).map(Some),
            Some(s) => match s.plan(i, stakes, q.clone()) {
                Ok(plan) => s.plan_value(i, stakes, &plan).map(Some),
                Err(Error::HorizonCapExceeded { .. }) => Ok(None),
                Err(e) => Err(e),
            },
        }
    };
    let mut equilibria = Vec::new();
    for mask in 0u32..(1 << n) {
        let set = ParticipationSet::subset((0..n).filter(|b| mask >> b & 1 == 1).map(|b| ids[b]));
        let mut stable = true;
        for &i in &ids {
            let (inside, outside) = if set.contains(i) { (set.clone(), set.without(i)) } else { (set.with(i), set.clone()) };
            let participate = game.participation_utility(i, &inside, stakes)?;
            // no recovery plan values abstention at minus infinity
            let abstains = match abstain_value(i, &outside)? {
                Some(v) => game.tie_rule.abstains(&participate, &v),
                None => false,
            };
            if abstains == set.contains(i) {
                stable = false;
                break;
            }
        }
        if stable {
            equilibria.push(set);
        }
    }
    Ok(BruteForceResult { equilibria, empty_set_evaluated: true })
}

/// Per-player thresholds; `None` means never harmful.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Threshold {
    pub per_player: BTreeMap<PlayerId, Option<Scalar>>,
}

impl Threshold {
    pub fn of(&self, id: PlayerId) -> Option<&Scalar> {
        self.per_player.get(&id).and_then(|t| t.as_ref())
    }

    /// `min_i θ_i`, or `None` for `+∞`.
    pub fn instance(&self) -> Option<Scalar> {
        self.per_player.values().flatten().min().cloned()
    }

    /// Whether `v` is at least the threshold.
    pub fn admits(&self, v: &Scalar) -> bool {
        self.instance().is_none_or(|t| *v >= t)
    }
}

/// Threshold from an executed trace: for each player, the lowest realized
/// system value over rounds whose opening profile is harmful for that
/// player in its own suffix.
pub fn threshold_of_trace(trace: &crate::engine::Trace) -> Result<Threshold> {
    let instance = &trace.instance;
    let mut per_player: BTreeMap<PlayerId, Option<Scalar>> = instance.ids().map(|id| (id, None)).collect();
    for rec in &trace.records {
        let stage = match &rec.stage {
            StagePolicy::Designated(_) => StagePolicy::TopType { epsilon: Scalar::zero() },
            s => s.clone(),
        };
        let game = StageGame::new(instance, &stage).with_tie_rule(trace.config.tie_rule);
        let ranking = rec.stakes_before.rank()?;
        for k in 1..=ranking.len() {
            let i = ranking.at(k);
            let v = is_harmful(&game, i, &ParticipationSet::suffix(&ranking, k), &rec.stakes_before)?;
            if v.harmful {
                let slot = per_player.entry(i).or_default();
                if slot.as_ref().is_none_or(|t| rec.v < *t) {
                    *slot = Some(rec.v.clone());
                }
            }
        }
    }
    Ok(Threshold { per_player })
}

/// Threshold over the deterministic highest-type trajectory.
pub fn threshold(instance: &Instance, behavior: Behavior, horizon: u64) -> Result<Threshold> {
    if horizon == 0 {
        return Ok(Threshold { per_player: instance.ids().map(|id| (id, None)).collect() });
    }
    let config = crate::engine::RunConfig::new(PolicySpec::mu_star(), behavior);
    let trace = crate::engine::run(instance, &config, horizon)?;
    threshold_of_trace(&trace)
}
