//! Onset phase recovery for mixtures of repeated notes.
//!
//! Each source is assumed to replay the same phase pattern every time it is
//! triggered, up to a per-occurrence delay that shows up as a phase offset
//! linear in frequency. Given oracle magnitudes, the onset-frame phases of
//! every source are estimated from the mixture's onset columns, either under
//! the exact repetition model ([`estimation::run_strict`]) or with free phases
//! pulled toward it ([`estimation::run_relaxed`]). Propagating those phases to
//! later frames ([`unwrap`]) gives a full separation that is compared against
//! Wiener masking ([`baseline`]).

pub mod baseline;
pub mod error;
pub mod estimation;
pub mod metrics;
pub mod model;
pub mod onset;
pub mod pipeline;
pub mod stft;
pub mod synth;
pub mod unwrap;
pub mod wav;

pub use error::{Error, Result};
pub use estimation::{EstimationConfig, EstimationResult, Initialization};
pub use model::{ModelSynthesis, PhaseModelParams};
pub use onset::OnsetMatrix;
pub use stft::{istft, stft, ComplexSpectrogram, StftConfig};
