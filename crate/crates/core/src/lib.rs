//! Beam search over CTC posterior lattices.
//!
//! Three strategies share one scoring core:
//!
//! * [`fsync`]: frame-synchronous CTC prefix beam search with shallow fusion.
//! * [`lsync`]: label-synchronous joint search led by the label scorers and
//!   rescored with CTC prefix probabilities.
//! * [`flsync`]: the integrated search. Frame-synchronous expansion leads,
//!   a label-synchronous step over the shortest common prefixes supplies
//!   prioritized hypotheses that see look-ahead frames, and ancestor pruning
//!   retires those priorities once their successors overtake them.
//!
//! [`oracle`] holds the exhaustive references and synthetic lattice
//! generator used to check all of the above; [`io`] and [`config`] hold the
//! on-disk formats.

pub mod config;
pub mod ctc;
pub mod error;
pub mod flsync;
pub mod fsync;
pub mod fusion;
pub mod io;
pub mod lsync;
pub mod oracle;
pub mod scorers;
pub mod semiring;
pub mod trace;
pub mod types;

pub use error::{Error, Result};
pub use semiring::LogProb;
pub use types::{
    collapse_alignment, BeamConfig, BlockSchedule, CtcState, EmissionMatrix, Label, ScoreWeights, Vocabulary,
};
