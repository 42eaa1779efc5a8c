//! Arrival-pattern aware all-reduce: schedules, metrics and a tau-model
//! simulator.
//!
//! Data elements are generic over [`Element`] (`f32`, `f64`); timing code is
//! generic over [`TimeValue`] so the same routines run on integer tau counts,
//! measured seconds, or exact rationals.

pub mod data;
pub mod error;
pub mod metrics;
pub mod scalar;
pub mod schedule;
pub mod sim;
pub mod sweep;
pub mod validate;

pub use data::{partition_segments, reduce_into, serial_fold, ReduceOp, SegmentPartition};
pub use error::{CoreError, Result};
pub use metrics::{elapsed_bounds, elapsed_stats, mean_std, ElapsedBounds, ElapsedStats, PapVector, PepVector};
pub use scalar::{decode_elements, encode_elements, Element, TimeValue};
pub use schedule::{
    balanced_schedule, build_schedule, linear_schedule, prr_presteps, prr_schedule, prr_segment_owners,
    rabenseifner_schedule, ring_schedule, slt_schedule, sort_by_arrival, Algorithm, Phase, PrrPlan, Schedule,
    SortedAssignment, Step, StepKind,
};
pub use sim::{simulate, Event, SimError, Timeline};
pub use sweep::{delay_pattern, run_sweep, write_sweep_csv, DelayMode, SweepConfig, SweepRow};
pub use validate::{validate_schedule, ValidityReport, Violation};

/// Data vectors as used on the wire by default.
pub type DataVector = Vec<f32>;
/// Arrival pattern in seconds.
pub type Pap = PapVector<f64>;
/// Arrival pattern in whole tau units.
pub type TauPap = PapVector<i64>;
/// Arrival pattern in exact fractional tau units.
pub type ExactPap = PapVector<num_rational::Ratio<i64>>;
pub type Pep = PepVector<f64>;
pub type TauTimeline = Timeline<i64>;
pub type SecondsTimeline = Timeline<f64>;
