//! Domain types shared by every solver: players, stake profiles, rankings,
//! participation sets, value functions and the game instance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stable player label. Assigned once per instance and never reused when
/// players are re-ranked by stake.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(pub u32);

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Player {
    pub id: PlayerId,
    /// Capability, at least 1.
    pub type_: Scalar,
    /// Per-round participation cost.
    pub cost: Scalar,
}

impl Player {
    pub fn new(id: u32, type_: Scalar) -> Self {
        Player { id: PlayerId(id), type_, cost: Scalar::zero() }
    }

    pub fn with_cost(mut self, cost: Scalar) -> Self {
        self.cost = cost;
        self
    }
}

/// Token holdings per player.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct StakeProfile(BTreeMap<PlayerId, Scalar>);

impl StakeProfile {
    pub fn new() -> Self {
        StakeProfile(BTreeMap::new())
    }

    /// Ids `1..=n` in order.
    pub fn from_values<I>(values: I) -> Self
    where
        I: IntoIterator,
        I::Item: Into<Scalar>,
    {
        StakeProfile(
            values
                .into_iter()
                .enumerate()
                .map(|(k, v)| (PlayerId(k as u32 + 1), v.into()))
                .collect(),
        )
    }

    pub fn insert(&mut self, id: PlayerId, stake: Scalar) {
        self.0.insert(id, stake);
    }

    pub fn remove(&mut self, id: PlayerId) -> Option<Scalar> {
        self.0.remove(&id)
    }

    pub fn get(&self, id: PlayerId) -> Option<&Scalar> {
        self.0.get(&id)
    }

    pub fn stake(&self, id: PlayerId) -> Result<&Scalar> {
        self.0.get(&id).ok_or(Error::UnknownPlayer(id))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.0.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PlayerId, &Scalar)> + '_ {
        self.0.iter().map(|(id, s)| (*id, s))
    }

    pub fn values(&self) -> impl Iterator<Item = &Scalar> + '_ {
        self.0.values()
    }

    pub fn total(&self) -> Scalar {
        self.0.values().sum()
    }

    /// Stakes of the given players, in the order they are listed.
    pub fn restricted<'a, I>(&self, ids: I) -> Result<Vec<Scalar>>
    where
        I: IntoIterator<Item = &'a PlayerId>,
    {
        ids.into_iter().map(|id| self.stake(*id).cloned()).collect()
    }

    /// Componentwise sum with a reward vector. Players absent from `rewards`
    /// keep their stake.
    pub fn plus<'a, I>(&self, rewards: I) -> Self
    where
        I: IntoIterator<Item = (PlayerId, &'a Scalar)>,
    {
        let mut next = self.clone();
        for (id, r) in rewards {
            if let Some(s) = next.0.get_mut(&id) {
                *s += r;
            }
        }
        next
    }

    pub fn rank(&self) -> Result<Ranking> {
        Ranking::of(self)
    }

    /// Stakes in ascending id order, for display.
    pub fn to_vec(&self) -> Vec<Scalar> {
        self.0.values().cloned().collect()
    }
}

impl fmt::Display for StakeProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, s) in self.0.values().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{s}")?;
        }
        write!(f, ")")
    }
}

impl FromIterator<(PlayerId, Scalar)> for StakeProfile {
    fn from_iter<T: IntoIterator<Item = (PlayerId, Scalar)>>(iter: T) -> Self {
        StakeProfile(iter.into_iter().collect())
    }
}

/// Players in weakly decreasing stake order; equal stakes by ascending id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ranking {
    order: Vec<PlayerId>,
}

impl Ranking {
    pub fn of(stakes: &StakeProfile) -> Result<Self> {
        if stakes.is_empty() {
            return Err(Error::EmptyProfile);
        }
        let mut order: Vec<(PlayerId, &Scalar)> = stakes.iter().collect();
        order.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(&b.0)));
        Ok(Ranking { order: order.into_iter().map(|(id, _)| id).collect() })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[PlayerId] {
        &self.order
    }

    /// Player at 1-based rank `k`.
    pub fn at(&self, k: usize) -> PlayerId {
        self.order[k - 1]
    }

    /// 1-based rank of `id`.
    pub fn rank_of(&self, id: PlayerId) -> Option<usize> {
        self.order.iter().position(|p| *p == id).map(|k| k + 1)
    }

    /// Players at ranks `k..=n`.
    pub fn suffix(&self, k: usize) -> &[PlayerId] {
        &self.order[(k - 1).min(self.order.len())..]
    }
}

/// A set of participating players. Equilibria are always suffixes of the
/// stake ranking; arbitrary subsets appear only in the brute-force oracle.
#[derive(Clone, Debug)]
pub struct ParticipationSet {
    members: BTreeSet<PlayerId>,
    suffix_start: Option<usize>,
}

impl ParticipationSet {
    /// `{rank k, ..., rank n}`.
    pub fn suffix(ranking: &Ranking, k: usize) -> Self {
        ParticipationSet {
            members: ranking.suffix(k).iter().copied().collect(),
            suffix_start: Some(k),
        }
    }

    pub fn subset<I: IntoIterator<Item = PlayerId>>(ids: I) -> Self {
        ParticipationSet { members: ids.into_iter().collect(), suffix_start: None }
    }

    pub fn empty() -> Self {
        ParticipationSet { members: BTreeSet::new(), suffix_start: None }
    }

    /// 1-based start rank when built as a suffix.
    pub fn suffix_start(&self) -> Option<usize> {
        self.suffix_start
    }

    pub fn contains(&self, id: PlayerId) -> bool {
        self.members.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.members.iter().copied()
    }

    pub fn members(&self) -> &BTreeSet<PlayerId> {
        &self.members
    }

    pub fn without(&self, id: PlayerId) -> Self {
        let mut members = self.members.clone();
        members.remove(&id);
        ParticipationSet { members, suffix_start: None }
    }

    pub fn with(&self, id: PlayerId) -> Self {
        let mut members = self.members.clone();
        members.insert(id);
        ParticipationSet { members, suffix_start: None }
    }

    /// True when the members are exactly some suffix of `ranking`.
    pub fn is_suffix_of(&self, ranking: &Ranking) -> bool {
        let n = ranking.len();
        if self.members.len() > n {
            return false;
        }
        let k = n - self.members.len() + 1;
        ranking.suffix(k).iter().all(|id| self.members.contains(id))
    }

    /// Comma-joined ids in ascending order.
    pub fn joined(&self) -> String {
        self.members.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl PartialEq for ParticipationSet {
    fn eq(&self, other: &Self) -> bool {
        self.members == other.members
    }
}

impl Eq for ParticipationSet {}

impl std::hash::Hash for ParticipationSet {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.members.hash(state);
    }
}

impl fmt::Display for ParticipationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.joined())
    }
}

/// Token value as a function of the participants' decentralization index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueFunction {
    Identity,
    /// `a * d + b`.
    Affine { a: Scalar, b: Scalar },
    Table {
        #[serde(deserialize_with = "table_values")]
        values: BTreeMap<u32, Scalar>,
    },
}

/// Table keys may arrive as strings (TOML and JSON object keys).
fn table_values<'de, D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<BTreeMap<u32, Scalar>, D::Error> {
    #[derive(PartialEq, Eq, PartialOrd, Ord)]
    struct Key(u32);
    impl<'de> Deserialize<'de> for Key {
        fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
            struct Visitor;
            impl serde::de::Visitor<'_> for Visitor {
                type Value = Key;
                fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                    f.write_str("a decentralization level")
                }
                fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<Key, E> {
                    u32::try_from(v).map(Key).map_err(E::custom)
                }
                fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<Key, E> {
                    u32::try_from(v).map(Key).map_err(E::custom)
                }
                fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<Key, E> {
                    v.trim().parse().map(Key).map_err(E::custom)
                }
            }
            deserializer.deserialize_any(Visitor)
        }
    }
    let raw: BTreeMap<Key, Scalar> = BTreeMap::deserialize(deserializer)?;
    Ok(raw.into_iter().map(|(k, v)| (k.0, v)).collect())
}

impl ValueFunction {
    pub fn eval(&self, d: u32) -> Result<Scalar> {
        match self {
            ValueFunction::Identity => Ok(Scalar::from(d)),
            ValueFunction::Affine { a, b } => Ok(a * Scalar::from(d) + b),
            ValueFunction::Table { values } => values.get(&d).cloned().ok_or(Error::ValueTableMiss(d)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    /// Sorted by id.
    pub players: Vec<Player>,
    pub initial_stakes: StakeProfile,
    /// Constant per-round budget.
    pub budget: Scalar,
    /// Fraction used by the decentralization index, in (0, 1).
    pub tau_threshold: Scalar,
    pub value_function: ValueFunction,
    pub horizon: Option<u64>,
}

impl Instance {
    pub fn new(
        mut players: Vec<Player>,
        initial_stakes: StakeProfile,
        budget: Scalar,
        tau_threshold: Scalar,
        value_function: ValueFunction,
    ) -> Self {
        players.sort_by_key(|p| p.id);
        Instance { players, initial_stakes, budget, tau_threshold, value_function, horizon: None }
    }

    /// Players `1..=n` with the given types and stakes, zero costs.
    pub fn simple(types: &[Scalar], stakes: &[Scalar], budget: Scalar, tau: Scalar, vf: ValueFunction) -> Self {
        let players = types.iter().enumerate().map(|(k, t)| Player::new(k as u32 + 1, t.clone())).collect();
        Instance::new(players, StakeProfile::from_values(stakes.iter().cloned()), budget, tau, vf)
    }

    /// The three-player setting used throughout the worked examples: types
    /// 3 > 2 > 1, unit stakes, unit budget, identity value, Nakamoto index.
    pub fn example1() -> Self {
        Instance::simple(
            &[Scalar::from_int(3), Scalar::from_int(2), Scalar::from_int(1)],
            &[Scalar::one(), Scalar::one(), Scalar::one()],
            Scalar::one(),
            Scalar::ratio(1, 2),
            ValueFunction::Identity,
        )
    }

    pub fn n(&self) -> usize {
        self.players.len()
    }

    pub fn player(&self, id: PlayerId) -> Result<&Player> {
        self.players
            .binary_search_by_key(&id, |p| p.id)
            .map(|k| &self.players[k])
            .map_err(|_| Error::UnknownPlayer(id))
    }

    pub fn type_of(&self, id: PlayerId) -> Result<&Scalar> {
        self.player(id).map(|p| &p.type_)
    }

    pub fn ids(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.players.iter().map(|p| p.id)
    }

    pub fn max_id(&self) -> PlayerId {
        self.players.last().map(|p| p.id).unwrap_or(PlayerId(0))
    }

    /// Copy with the initial stakes replaced.
    pub fn with_stakes(&self, stakes: StakeProfile) -> Self {
        Instance { initial_stakes: stakes, ..self.clone() }
    }

    /// Copy with player types replaced, ids `1..=n` in order.
    pub fn with_types(&self, types: &[Scalar]) -> Self {
        let mut next = self.clone();
        for (p, t) in next.players.iter_mut().zip(types) {
            p.type_ = t.clone();
        }
        next
    }
}
