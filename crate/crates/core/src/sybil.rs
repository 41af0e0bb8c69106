//! Sybil splits: one player replaced by several identities whose stakes
//! add up to the original and whose types add up to at most the original.

use std::collections::BTreeMap;

use num_traits::ToPrimitive;

use crate::engine::{run, RunConfig};
use crate::equilibrium::{is_harmful, stage_equilibrium, Behavior, StageGame, TieRule};
use crate::error::{Error, Result};
use crate::measures::system_value;
use crate::model::{Instance, ParticipationSet, Player, PlayerId, StakeProfile};
use crate::policies::{expected_budget, PolicySpec, StagePolicy};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SybilPart {
    pub stake: Scalar,
    pub type_: Scalar,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SybilSplit {
    pub owner: PlayerId,
    /// Listed by descending `(stake, type)`.
    pub parts: Vec<SybilPart>,
}

impl SybilSplit {
    pub fn identity(owner: PlayerId, stake: Scalar, type_: Scalar) -> Self {
        SybilSplit { owner, parts: vec![SybilPart { stake, type_ }] }
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn total_stake(&self) -> Scalar {
        self.parts.iter().map(|p| &p.stake).sum()
    }

    pub fn total_type(&self) -> Scalar {
        self.parts.iter().map(|p| &p.type_).sum()
    }

    /// Index of the part with the largest type; ties to the larger stake,
    /// then to the earlier listing.
    pub fn top_part(&self) -> usize {
        let mut best = 0;
        for (k, p) in self.parts.iter().enumerate().skip(1) {
            let b = &self.parts[best];
            if p.type_ > b.type_ || (p.type_ == b.type_ && p.stake > b.stake) {
                best = k;
            }
        }
        best
    }

    pub fn max_type(&self) -> &Scalar {
        &self.parts[self.top_part()].type_
    }

    /// Whether the split satisfies the stake and type budgets of `instance`'s owner.
    pub fn is_valid_for(&self, instance: &Instance, stakes: &StakeProfile) -> Result<bool> {
        let owner = instance.player(self.owner)?;
        Ok(!self.parts.is_empty()
            && self.total_stake() == *stakes.stake(self.owner)?
            && self.total_type() <= owner.type_
            && self.parts.iter().all(|p| p.stake.is_positive() && p.type_ >= Scalar::one()))
    }
}

/// Search grid for splits.
#[derive(Clone, Debug)]
pub struct SplitGrid {
    pub granularity: Scalar,
    pub max_parts: usize,
    /// Enumeration stops with an error beyond this many splits.
    pub limit: usize,
}

impl SplitGrid {
    pub fn new(granularity: Scalar, max_parts: usize) -> Self {
        SplitGrid { granularity, max_parts, limit: 1_000_000 }
    }
}

/// The instance and profile after `split` replaces its owner. Parts get ids
/// above the largest existing id, in listing order.
pub fn apply_split(instance: &Instance, stakes: &StakeProfile, split: &SybilSplit) -> Result<(Instance, StakeProfile, Vec<PlayerId>)> {
    let owner = instance.player(split.owner)?.clone();
    let mut players: Vec<Player> = instance.players.iter().filter(|p| p.id != owner.id).cloned().collect();
    let mut next = stakes.clone();
    next.remove(owner.id);
    let base = instance.max_id().0.max(stakes.ids().map(|i| i.0).max().unwrap_or(0));
    let mut ids = Vec::with_capacity(split.parts.len());
    for (k, part) in split.parts.iter().enumerate() {
        let id = PlayerId(base + 1 + k as u32);
        players.push(Player { id, type_: part.type_.clone(), cost: owner.cost.clone() });
        next.insert(id, part.stake.clone());
        ids.push(id);
    }
    let inst = Instance::new(players, next.clone(), instance.budget.clone(), instance.tau_threshold.clone(), instance.value_function.clone());
    Ok((inst, next, ids))
}

fn grid_units(x: &Scalar, g: &Scalar) -> Option<i64> {
    let q = x / g;
    if q.is_integer() {
        q.numer().to_i64()
    } else {
        None
    }
}

/// All splits of `owner` on the grid, deduplicated up to part order.
pub fn enumerate_splits(instance: &Instance, owner: PlayerId, stakes: &StakeProfile, grid: &SplitGrid) -> Result<Vec<SybilSplit>> {
    let g = &grid.granularity;
    if !g.is_positive() {
        return Err(Error::invalid("granularity must be positive"));
    }
    if grid.max_parts == 0 {
        return Err(Error::invalid("max_parts must be >= 1"));
    }
    let stake = stakes.stake(owner)?.clone();
    let type_ = instance.type_of(owner)?.clone();
    let units = grid_units(&stake, g)
        .ok_or_else(|| Error::invalid(format!("granularity {g} does not divide stake {stake} of player {owner}")))?;
    // smallest grid type that is at least 1, and the type budget in grid units
    let min_t = Scalar::one() / g;
    let min_t = if min_t.is_integer() { min_t.floor_i64() } else { min_t.floor_i64().map(|k| k + 1) }
        .ok_or_else(|| Error::invalid("granularity too fine"))?;
    let type_budget = (&type_ / g).floor_i64().ok_or_else(|| Error::invalid("type budget too large"))?;

    let mut found: Vec<Vec<(i64, i64)>> = Vec::new();
    let mut current = Vec::new();
    let mut search = Search { max_parts: grid.max_parts, min_t, limit: grid.limit, found: &mut found };
    search.go(units, type_budget, (i64::MAX, i64::MAX), &mut current)?;

    let to_scalar = |k: i64| g * Scalar::from_int(k);
    let mut splits: Vec<SybilSplit> = found
        .into_iter()
        .map(|parts| SybilSplit {
            owner,
            parts: parts.into_iter().map(|(s, t)| SybilPart { stake: to_scalar(s), type_: to_scalar(t) }).collect(),
        })
        .collect();
    let identity = SybilSplit::identity(owner, stake, type_);
    if !splits.contains(&identity) {
        splits.insert(0, identity);
    }
    Ok(splits)
}

struct Search<'a> {
    max_parts: usize,
    min_t: i64,
    limit: usize,
    found: &'a mut Vec<Vec<(i64, i64)>>,
}

impl Search<'_> {
    fn go(&mut self, stake_left: i64, type_left: i64, cap: (i64, i64), current: &mut Vec<(i64, i64)>) -> Result<()> {
        if stake_left == 0 {
            if !current.is_empty() {
                if self.found.len() >= self.limit {
                    return Err(Error::GridTooLarge { limit: self.limit });
                }
                self.found.push(current.clone());
            }
            return Ok(());
        }
        if current.len() == self.max_parts || type_left < self.min_t {
            return Ok(());
        }
        for s in (1..=stake_left.min(cap.0)).rev() {
            let t_hi = if s == cap.0 { type_left.min(cap.1) } else { type_left };
            for t in (self.min_t..=t_hi).rev() {
                current.push((s, t));
                self.go(stake_left - s, type_left - t, (s, t), current)?;
                current.pop();
            }
        }
        Ok(())
    }
}

/// Whether the split profile is not harmful for the split's top part, in
/// that part's own stake-ranked suffix.
pub fn is_recovery_sybils(instance: &Instance, split: &SybilSplit, stakes: &StakeProfile, policy: &StagePolicy, tie_rule: TieRule) -> Result<bool> {
    let (inst, next, ids) = apply_split(instance, stakes, split)?;
    let top = ids[split.top_part()];
    let ranking = next.rank()?;
    let k = ranking.rank_of(top).expect("part is ranked");
    let game = StageGame::new(&inst, policy).with_tie_rule(tie_rule);
    let verdict = is_harmful(&game, top, &ParticipationSet::suffix(&ranking, k), &next)?;
    Ok(!verdict.harmful)
}

/// The recovery split maximizing the top part's type, then its stake; among
/// equals, the first in enumeration order.
pub fn preferred_recovery_sybils(
    instance: &Instance,
    owner: PlayerId,
    stakes: &StakeProfile,
    policy: &StagePolicy,
    grid: &SplitGrid,
) -> Result<SybilSplit> {
    let mut best: Option<SybilSplit> = None;
    for split in enumerate_splits(instance, owner, stakes, grid)? {
        if !is_recovery_sybils(instance, &split, stakes, policy, TieRule::default())? {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let (bt, st) = (&b.parts[b.top_part()], &split.parts[split.top_part()]);
                (&st.type_, &st.stake) > (&bt.type_, &bt.stake)
            }
        };
        if better {
            best = Some(split);
        }
    }
    best.ok_or(Error::NoRecoverySplit(owner))
}

/// Stage policy used when checking splits under `policy`. The
/// lookahead-simulating policy is evaluated through the highest-type rule it
/// simulates.
pub fn sybil_stage(policy: &PolicySpec) -> StagePolicy {
    policy.stationary_stage().unwrap_or(StagePolicy::TopType { epsilon: Scalar::zero() })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditionFinding {
    pub player: PlayerId,
    pub profile: StakeProfile,
    pub preferred: SybilSplit,
    /// Type and stake of the player ranked just below the owner.
    pub next_type: Scalar,
    pub next_stake: Scalar,
    pub satisfied: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ConditionReport {
    pub profiles_checked: usize,
    pub findings: Vec<ConditionFinding>,
}

impl ConditionReport {
    pub fn is_satisfied(&self) -> bool {
        self.findings.iter().all(|f| f.satisfied)
    }
}

/// For every profile and every player harmed in its own suffix, compares the
/// preferred recovery split's top part against the next-ranked player.
pub fn sybil_proofness_condition(
    instance: &Instance,
    policy: &PolicySpec,
    profiles: &[StakeProfile],
    grid: &SplitGrid,
) -> Result<ConditionReport> {
    let stage = sybil_stage(policy);
    let game = StageGame::new(instance, &stage);
    let mut report = ConditionReport { profiles_checked: profiles.len(), findings: Vec::new() };
    for profile in profiles {
        let ranking = profile.rank()?;
        let n = ranking.len();
        for k in 1..n {
            let i = ranking.at(k);
            if !is_harmful(&game, i, &ParticipationSet::suffix(&ranking, k), profile)?.harmful {
                continue;
            }
            let preferred = preferred_recovery_sybils(instance, i, profile, &stage, grid)?;
            let next = ranking.at(k + 1);
            let next_type = instance.type_of(next)?.clone();
            let next_stake = profile.stake(next)?.clone();
            let top = &preferred.parts[preferred.top_part()];
            let satisfied = top.type_ < next_type || (top.type_ == next_type && top.stake < next_stake);
            report.findings.push(ConditionFinding { player: i, profile: profile.clone(), preferred, next_type, next_stake, satisfied });
        }
    }
    Ok(report)
}

/// Profiles on the policy's own trajectory with myopic players, first round
/// first, followed by `extra`.
pub fn candidate_profiles(instance: &Instance, policy: &PolicySpec, rounds: u64, extra: &[StakeProfile]) -> Result<Vec<StakeProfile>> {
    let trace = run(instance, &RunConfig::new(policy.clone(), Behavior::Myopic), rounds)?;
    let mut out: Vec<StakeProfile> = trace.records.into_iter().map(|r| r.stakes_before).collect();
    for p in extra {
        if !out.contains(p) {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// How a player's stage utility is scored when comparing splits.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub enum GainValuation {
    /// Value of the round's reward: `B_i · v − c_i` when participating, else 0.
    #[default]
    Reward,
    /// Value of all holdings after the round: `(σ_i + B_i) · v − c_i` when
    /// participating, `σ_i · v` otherwise.
    Holdings,
}

#[derive(Clone, Debug)]
pub struct GainSettings {
    pub behavior: Behavior,
    pub tie_rule: TieRule,
    pub valuation: GainValuation,
}

impl Default for GainSettings {
    fn default() -> Self {
        GainSettings { behavior: Behavior::Myopic, tie_rule: TieRule::default(), valuation: GainValuation::default() }
    }
}

fn stage_utilities(
    instance: &Instance,
    stakes: &StakeProfile,
    policy: &StagePolicy,
    settings: &GainSettings,
    who: &[PlayerId],
) -> Result<Scalar> {
    let game = StageGame::new(instance, policy).with_tie_rule(settings.tie_rule);
    let eq = stage_equilibrium(&game, stakes, settings.behavior)?;
    let v = system_value(instance, stakes, &eq)?;
    let mut total = Scalar::zero();
    for &id in who {
        if eq.contains(id) {
            let reward = expected_budget(policy, instance, id, &eq, stakes)?;
            let cost = &instance.player(id)?.cost;
            total += match settings.valuation {
                GainValuation::Reward => reward * &v - cost,
                GainValuation::Holdings => (stakes.stake(id)? + reward) * &v - cost,
            };
        } else if settings.valuation == GainValuation::Holdings {
            total += stakes.stake(id)? * &v;
        }
    }
    Ok(total)
}

/// Parts' summed stage utility minus the owner's, each in its own profile's
/// equilibrium. Positive means the split pays.
pub fn sybil_gain(instance: &Instance, split: &SybilSplit, stakes: &StakeProfile, policy: &StagePolicy, settings: &GainSettings) -> Result<Scalar> {
    let before = stage_utilities(instance, stakes, policy, settings, &[split.owner])?;
    let (inst, next, ids) = apply_split(instance, stakes, split)?;
    let after = stage_utilities(&inst, &next, policy, settings, &ids)?;
    Ok(after - before)
}

#[derive(Clone, Debug)]
pub struct GainSearch {
    pub splits_checked: usize,
    /// Largest gain found, with its split and profile.
    pub best: Option<(Scalar, SybilSplit, StakeProfile)>,
}

/// Maximum gain over every player, profile and grid split.
pub fn max_sybil_gain(
    instance: &Instance,
    policy: &StagePolicy,
    profiles: &[StakeProfile],
    grid: &SplitGrid,
    settings: &GainSettings,
) -> Result<GainSearch> {
    let mut out = GainSearch { splits_checked: 0, best: None };
    for profile in profiles {
        for owner in instance.ids() {
            for split in enumerate_splits(instance, owner, profile, grid)? {
                let gain = sybil_gain(instance, &split, profile, policy, settings)?;
                out.splits_checked += 1;
                if out.best.as_ref().is_none_or(|(g, _, _)| gain > *g) {
                    out.best = Some((gain, split, profile.clone()));
                }
            }
        }
    }
    Ok(out)
}

/// Number of distinct multisets behind `splits`, for dedup checks.
pub fn distinct_multisets(splits: &[SybilSplit]) -> usize {
    let mut seen: BTreeMap<Vec<SybilPart>, ()> = BTreeMap::new();
    for s in splits {
        let mut parts = s.parts.clone();
        parts.sort();
        seen.insert(parts, ());
    }
    seen.len()
}
