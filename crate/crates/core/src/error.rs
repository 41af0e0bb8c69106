use crate::model::PlayerId;
use crate::scalar::Scalar;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("stake profile is empty")]
    EmptyProfile,
    #[error("total stake is zero; the decentralization index is undefined")]
    ZeroTotalStake,
    #[error("unknown player {0}")]
    UnknownPlayer(PlayerId),
    #[error("participant set is empty")]
    EmptyParticipants,
    #[error("player {0} is not a participant")]
    NotParticipating(PlayerId),
    #[error("value table has no entry for decentralization {0}")]
    ValueTableMiss(u32),
    #[error("recovery plan for player {player} still open after {cap} rounds")]
    HorizonCapExceeded { player: PlayerId, cap: usize },
    #[error("brute-force enumeration supports at most {max} players, got {n}")]
    TooManyPlayers { n: usize, max: usize },
    #[error("sybil grid would produce more than {limit} splits")]
    GridTooLarge { limit: usize },
    #[error("no recovery split for player {0} on the search grid")]
    NoRecoverySplit(PlayerId),
    #[error("profile is not harmful for player {0}")]
    NotHarmful(PlayerId),
    #[error("invalid instance: {}", .0.join("; "))]
    InvalidInstance(Vec<String>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("round {round}: {inner}")]
    Round { round: u64, inner: Box<Error> },
    #[error("trace export failed: {0}")]
    Export(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_round(self, round: u64) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            e => Error::Round { round, inner: Box::new(e) },
        }
    }
}

/// Probability or share that must lie in a closed interval.
pub(crate) fn check_unit_interval(name: &str, x: &Scalar) -> Result<()> {
    if x.is_negative() || *x > Scalar::one() {
        return Err(Error::invalid(format!("{name} must lie in [0, 1], got {x}")));
    }
    Ok(())
}
