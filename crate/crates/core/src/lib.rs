//! Simulator and equilibrium solver for repeated participation games under
//! algorithmic monetary policies, in exact rational arithmetic.

pub mod engine;
pub mod equilibrium;
pub mod error;
pub mod golden;
pub mod measures;
pub mod model;
pub mod policies;
pub mod scalar;
pub mod sybil;
pub mod validate;
pub mod virtualstake;

pub use engine::{monitor_properties, run, step, GameState, PropertyReport, RoundRecord, RunConfig, RunMode, Trace};
pub use equilibrium::{
    brute_force_equilibrium, is_harmful, lookahead_equilibrium, myopic_equilibrium, recovery_winner_labels,
    threshold, Behavior, HarmfulnessVerdict, Label, RecoveryPlan, StageGame, Threshold, TieRule,
};
pub use error::{Error, Result};
pub use measures::{tau_decentralization_index, token_value};
pub use model::{Instance, ParticipationSet, Player, PlayerId, Ranking, StakeProfile, ValueFunction};
pub use policies::{PolicySpec, StagePolicy};
pub use scalar::Scalar;
pub use validate::{validate_instance, ValidationReport, Warning};
