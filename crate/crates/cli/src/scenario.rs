//! Scenario files: an instance plus everything needed to run it.

use ampsim::{Behavior, Instance, Player, PolicySpec, RunConfig, RunMode, Scalar, StakeProfile, ValueFunction};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub rounds: u64,
    pub budget: Scalar,
    pub tau_threshold: Scalar,
    pub behavior: BehaviorKind,
    /// Recovery-plan cap for lookahead players and the shadow trajectory.
    #[serde(default = "default_horizon_cap")]
    pub horizon_cap: usize,
    pub value_function: ValueFunction,
    pub policy: PolicyKind,
    #[serde(default)]
    pub mode: ModeSpec,
    pub players: Vec<PlayerSpec>,
}

fn default_horizon_cap() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerSpec {
    pub id: u32,
    #[serde(rename = "type")]
    pub type_: Scalar,
    pub stake: Scalar,
    #[serde(default, skip_serializing_if = "Scalar::is_zero")]
    pub cost: Scalar,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    Myopic,
    Lookahead,
    Full,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::enum_variant_names)]
pub enum PolicyKind {
    MuAlpha { alpha: Scalar },
    MuStar {
        #[serde(default)]
        epsilon: Scalar,
    },
    MuAll,
    MuEll,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeSpec {
    #[default]
    Expected,
    Sampled { seed: u64 },
}

pub const BUILTINS: &[(&str, &str)] = &[
    ("example1-myopic", include_str!("../scenarios/example1-myopic.toml")),
    ("example2-lookahead", include_str!("../scenarios/example2-lookahead.toml")),
    ("example3-muell", include_str!("../scenarios/example3-muell.toml")),
    ("mu-alpha-full", include_str!("../scenarios/mu-alpha-full.toml")),
];

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields are always serializable")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        BUILTINS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Scenario::parse(text).expect("built-in scenarios parse"))
    }

    pub fn instance(&self) -> Instance {
        let players = self.players.iter().map(|p| Player::new(p.id, p.type_.clone()).with_cost(p.cost.clone())).collect();
        let mut stakes = StakeProfile::new();
        for p in &self.players {
            stakes.insert(ampsim::PlayerId(p.id), p.stake.clone());
        }
        let mut inst = Instance::new(players, stakes, self.budget.clone(), self.tau_threshold.clone(), self.value_function.clone());
        inst.horizon = Some(self.rounds);
        inst
    }

    pub fn policy_spec(&self) -> PolicySpec {
        match &self.policy {
            PolicyKind::MuAlpha { alpha } => PolicySpec::MuAlpha { alpha: alpha.clone() },
            PolicyKind::MuStar { epsilon } => PolicySpec::MuStar { epsilon: epsilon.clone() },
            PolicyKind::MuAll => PolicySpec::MuAll,
            PolicyKind::MuEll => PolicySpec::MuEll { horizon_cap: self.horizon_cap },
        }
    }

    pub fn behavior(&self) -> Behavior {
        match self.behavior {
            BehaviorKind::Myopic => Behavior::Myopic,
            BehaviorKind::Lookahead => Behavior::Lookahead { horizon_cap: self.horizon_cap },
            BehaviorKind::Full => Behavior::Full,
        }
    }

    pub fn config(&self) -> RunConfig {
        let mode = match self.mode {
            ModeSpec::Expected => RunMode::Expected,
            ModeSpec::Sampled { seed } => RunMode::Sampled { seed },
        };
        RunConfig::new(self.policy_spec(), self.behavior()).with_mode(mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_round_trip() {
        for (name, _) in BUILTINS {
            let s = Scenario::builtin(name).unwrap();
            assert_eq!(Scenario::parse(&s.to_toml()).unwrap(), s, "{name}");
        }
    }

    #[test]
    fn table_values_and_costs_round_trip() {
        let mut s = Scenario::builtin("example1-myopic").unwrap();
        s.value_function =
            ValueFunction::Table { values: [(1, Scalar::one()), (2, Scalar::ratio(5, 2))].into_iter().collect() };
        s.players[0].cost = Scalar::ratio(1, 10);
        s.mode = ModeSpec::Sampled { seed: 9 };
        s.policy = PolicyKind::MuAlpha { alpha: Scalar::ratio(1, 3) };
        let text = s.to_toml();
        assert_eq!(Scenario::parse(&text).unwrap(), s, "{text}");
    }

    #[test]
    fn decimals_are_exact() {
        let text = Scenario::builtin("example1-myopic").unwrap().to_toml().replace("budget = \"1\"", "budget = 0.1");
        assert_eq!(Scenario::parse(&text).unwrap().budget, Scalar::ratio(1, 10));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("colour = \"red\"\n{}", include_str!("../scenarios/example1-myopic.toml"));
        let err = Scenario::parse(&text).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }
}
