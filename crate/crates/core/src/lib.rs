//! Head-pose driven engines for two neck rehabilitation games: a chin tuck
//! strengthening game and a range-of-motion game. Both consume timestamped
//! head poses and emit timestamped [`GameEvent`]s; everything else in the
//! crate (trace files, session logs, synthetic users, the streaming gateway
//! and the usability statistics) is built around that contract.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod chintuck;
pub mod error;
pub mod event;
pub mod gateway;
pub mod pose;
pub mod replay;
pub mod rom;
pub mod session_io;
pub mod synth;

pub use error::{ConfigError, Error, Result};
pub use event::{Direction, EventKind, GameEvent, GameKind, Side};
pub use pose::{NeutralFrame, PoseSample, UnitQuat, Vec3};
