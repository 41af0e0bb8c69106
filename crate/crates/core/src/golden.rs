//! Reference traces for the three worked three-player runs, in the trace
//! export format.

pub const EXAMPLE1_MYOPIC: &str = include_str!("../golden/example1_myopic.csv");
pub const EXAMPLE2_LOOKAHEAD: &str = include_str!("../golden/example2_lookahead.csv");
pub const EXAMPLE3_SHADOW: &str = include_str!("../golden/example3_shadow.csv");
