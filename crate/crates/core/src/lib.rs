//! Fragmented-spectrum synchronous OFDM-CDMA for cognitive radio networks.
//!
//! * [`orthocodes`]: multi-level orthogonal spreading codes and their embedding
//!   onto the free subcarriers of a slot.
//! * [`sensing`]: energy-detection statistics and OR-rule fusion.
//! * [`phylink`]: frequency-domain slot simulation and the correlation receiver.
//! * [`ber_analysis`]: closed-form bit error probability averaged over
//!   occupancy.
//! * [`montecarlo`]: deterministic parallel BER estimation and sweeps.

// Negated comparisons are how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ber_analysis;
pub mod montecarlo;
pub mod oracle;
pub mod orthocodes;
pub mod phylink;
pub mod rng;
pub mod sensing;

pub use ber_analysis::{AnalysisError, BerPoint, LinkBudget, PeCalculator, Placement, VarianceBreakdown};
pub use montecarlo::{BerCurve, RunConfig, SensingSnr, SimError};
pub use orthocodes::{CodeBook, CodeError, CodeMatrix, CodePolicy, ModifiedSignature, SignatureSet};
pub use phylink::{DetectionProbs, PhyError, ReceiverOutput, SensingState, SlotRealization, SystemParams};
pub use sensing::{DetectorConfig, FusionResult, OccupancyModel, SensingError, SensingOutcome};
