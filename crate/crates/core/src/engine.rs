//! The round loop and trace handling.

use std::io::Write;

use num_bigint::BigInt;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::equilibrium::{stage_equilibrium, Behavior, StageGame, Threshold, TieRule};
use crate::error::{Error, Result};
use crate::measures::{participant_index, token_value};
use crate::model::{Instance, ParticipationSet, PlayerId, StakeProfile};
use crate::policies::{
    budget_allocation, draw_order, expected_allocation, winner_distribution, BudgetAllocation, PolicySpec,
    ShadowTrajectory, StagePolicy,
};
use crate::scalar::Scalar;
use crate::validate::validate_instance;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum RunMode {
    /// Every participant's stake grows by its expected reward.
    Expected,
    /// Winners drawn with ChaCha20 seeded by `seed`.
    Sampled { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub policy: PolicySpec,
    pub behavior: Behavior,
    pub mode: RunMode,
    pub tie_rule: TieRule,
}

impl RunConfig {
    pub fn new(policy: PolicySpec, behavior: Behavior) -> Self {
        RunConfig { policy, behavior, mode: RunMode::Expected, tie_rule: TieRule::default() }
    }

    pub fn with_mode(mut self, mode: RunMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_tie_rule(mut self, tie_rule: TieRule) -> Self {
        self.tie_rule = tie_rule;
        self
    }

    pub fn check(&self) -> Result<()> {
        self.policy.validate()?;
        if let (PolicySpec::MuEll { .. }, Behavior::Lookahead { .. }) = (&self.policy, self.behavior) {
            return Err(Error::Unsupported("lookahead players under the lookahead-simulating policy".into()));
        }
        if let Behavior::Lookahead { horizon_cap: 0 } = self.behavior {
            return Err(Error::invalid("horizon_cap must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GameState {
    /// The round about to be played, from 1.
    pub round: u64,
    pub stakes: StakeProfile,
    rng: Option<ChaCha20Rng>,
    shadow: Option<ShadowTrajectory>,
}

impl GameState {
    pub fn initial(instance: &Instance, config: &RunConfig) -> Self {
        GameState {
            round: 1,
            stakes: instance.initial_stakes.clone(),
            rng: match config.mode {
                RunMode::Sampled { seed } => Some(ChaCha20Rng::seed_from_u64(seed)),
                RunMode::Expected => None,
            },
            shadow: match config.policy {
                PolicySpec::MuEll { horizon_cap } => Some(ShadowTrajectory::new(instance, horizon_cap)),
                _ => None,
            },
        }
    }

    pub fn shadow(&self) -> Option<&ShadowTrajectory> {
        self.shadow.as_ref()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundRecord {
    pub round: u64,
    pub stakes_before: StakeProfile,
    pub participants: ParticipationSet,
    /// Rule in force this round.
    pub stage: StagePolicy,
    pub d: u32,
    pub v: Scalar,
    /// `None` when no single winner exists: an expected-mode lottery, or a
    /// designated winner that stayed out.
    pub winner: Option<PlayerId>,
    /// One entry per player, zeros included.
    pub rewards: BudgetAllocation,
    pub stakes_after: StakeProfile,
}

impl RoundRecord {
    pub fn full_participation(&self) -> bool {
        self.participants.len() == self.stakes_before.len()
    }
}

fn uniform(rng: &mut ChaCha20Rng) -> Scalar {
    let u = rng.next_u64();
    Scalar::from_big(BigInt::from(u), BigInt::from(1u8) << 64).expect("nonzero denominator")
}

/// Plays one round and returns its record and the successor state.
pub fn step(state: &GameState, instance: &Instance, config: &RunConfig) -> Result<(RoundRecord, GameState)> {
    let mut next = state.clone();
    let round = state.round;
    let record = play(&mut next, instance, config).map_err(|e| e.at_round(round))?;
    next.round += 1;
    next.stakes = record.stakes_after.clone();
    Ok((record, next))
}

fn play(state: &mut GameState, instance: &Instance, config: &RunConfig) -> Result<RoundRecord> {
    let stage = match (config.policy.stationary_stage(), state.shadow.as_mut()) {
        (Some(stage), _) => stage,
        (None, Some(shadow)) => StagePolicy::Designated(shadow.next_winner(instance)?),
        (None, None) => return Err(Error::invalid("policy needs a shadow trajectory")),
    };
    let game = StageGame::new(instance, &stage).with_tie_rule(config.tie_rule);
    let stakes = &state.stakes;
    let participants = stage_equilibrium(&game, stakes, config.behavior)?;
    assert!(!participants.is_empty(), "stage equilibrium is never empty");
    let d = participant_index(stakes, &participants, &instance.tau_threshold)?;
    let v = token_value(d, &instance.value_function)?;

    let (winner, rewards) = match &stage {
        StagePolicy::Designated(w) if !participants.contains(*w) => (None, BudgetAllocation::default()),
        _ => {
            let dist = winner_distribution(&stage, instance, &participants, stakes)?;
            match (&mut state.rng, dist.point_mass()) {
                (None, point) => (point, expected_allocation(&stage, instance, &participants, stakes)?),
                (Some(_), Some(w)) => (Some(w), budget_allocation(&stage, &instance.budget, &participants, w)?),
                (Some(rng), None) => {
                    let order = draw_order(&stakes.rank()?, &participants);
                    let u = uniform(rng);
                    let w = dist.pick(&order, &u).ok_or(Error::EmptyParticipants)?;
                    (Some(w), budget_allocation(&stage, &instance.budget, &participants, w)?)
                }
            }
        }
    };
    let rewards = rewards.padded(instance.ids());
    let stakes_after = stakes.plus(rewards.iter());
    Ok(RoundRecord {
        round: state.round,
        stakes_before: stakes.clone(),
        participants,
        stage,
        d,
        v,
        winner,
        rewards,
        stakes_after,
    })
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub instance: Instance,
    pub config: RunConfig,
    pub records: Vec<RoundRecord>,
}

pub fn run(instance: &Instance, config: &RunConfig, rounds: u64) -> Result<Trace> {
    let report = validate_instance(instance);
    if !report.is_ok() {
        return Err(Error::InvalidInstance(report.errors));
    }
    config.check()?;
    if rounds == 0 {
        return Err(Error::invalid("rounds must be >= 1"));
    }
    let mut state = GameState::initial(instance, config);
    let mut records = Vec::with_capacity(rounds as usize);
    for _ in 0..rounds {
        let (record, next) = step(&state, instance, config)?;
        records.push(record);
        state = next;
    }
    Ok(Trace { instance: instance.clone(), config: config.clone(), records })
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_stakes(&self) -> &StakeProfile {
        self.records.last().map(|r| &r.stakes_after).unwrap_or(&self.instance.initial_stakes)
    }

    pub fn winners(&self) -> Vec<Option<PlayerId>> {
        self.records.iter().map(|r| r.winner).collect()
    }

    /// Writes one row per round: stakes before the round, participants, index,
    /// value, winner and rewards. Rationals are written as `p` or `p/q`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let ids: Vec<PlayerId> = self.instance.ids().collect();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["round".to_string()];
        header.extend(ids.iter().map(|id| format!("stake_{id}")));
        header.extend(["participants", "d", "v", "winner"].map(String::from));
        header.extend(ids.iter().map(|id| format!("reward_{id}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.round.to_string()];
            for id in &ids {
                row.push(r.stakes_before.stake(*id)?.to_string());
            }
            row.push(r.participants.joined());
            row.push(r.d.to_string());
            row.push(r.v.to_string());
            row.push(r.winner.map(|w| w.to_string()).unwrap_or_default());
            row.extend(ids.iter().map(|id| r.rewards.get(*id).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Rounds in which some earlier participant stays out, tracked until every
/// excluded player is back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecoverySegment {
    pub start: u64,
    /// Round at which the last excluded player re-entered; `None` if the
    /// trace ends first.
    pub end: Option<u64>,
    pub excluded: Vec<PlayerId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PropertyReport {
    /// First round from which `d` stays at 1 through the end of the trace.
    pub minimum_from: Option<u64>,
    pub minimum_rounds: Vec<u64>,
    /// Rounds whose value is below the threshold.
    pub below_threshold: Vec<u64>,
    pub recovery_segments: Vec<RecoverySegment>,
    /// Rounds inside a recovery segment where `d` fell from the round before.
    pub recovery_decreases: Vec<u64>,
    pub full_participation: Vec<u64>,
}

pub fn monitor_properties(trace: &Trace, theta: &Threshold) -> Result<PropertyReport> {
    if trace.is_empty() {
        return Err(Error::invalid("trace is empty"));
    }
    let recs = &trace.records;
    let mut report = PropertyReport::default();
    for r in recs {
        if r.d == 1 {
            report.minimum_rounds.push(r.round);
        }
        if !theta.admits(&r.v) {
            report.below_threshold.push(r.round);
        }
        if r.full_participation() {
            report.full_participation.push(r.round);
        }
    }
    let tail = recs.iter().rev().take_while(|r| r.d == 1).count();
    if tail > 0 {
        report.minimum_from = Some(recs[recs.len() - tail].round);
    }

    for s in 1..recs.len() {
        let excluded: Vec<PlayerId> =
            recs[s - 1].participants.iter().filter(|id| !recs[s].participants.contains(*id)).collect();
        if excluded.is_empty() {
            continue;
        }
        let mut end = None;
        for x in s + 1..recs.len() {
            if recs[x].d < recs[x - 1].d {
                report.recovery_decreases.push(recs[x].round);
            }
            if excluded.iter().all(|id| recs[x].participants.contains(*id)) {
                end = Some(recs[x].round);
                break;
            }
        }
        report.recovery_segments.push(RecoverySegment { start: recs[s].round, end, excluded });
    }
    report.recovery_decreases.sort_unstable();
    report.recovery_decreases.dedup();
    Ok(report)
}
