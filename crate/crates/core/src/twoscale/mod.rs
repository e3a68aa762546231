//! Two-scale expansion on the torus: partition of unity, heterogeneous and
//! homogenized solves, expansion error, remainder, and the rate study.

pub mod expansion;
pub mod homogenized;
pub mod partition;
pub mod study;

pub use expansion::{
    energy_check, expansion_error, remainder_assembly, restrict_periodic_block, solve_heterogeneous, two_scale_expand,
    CorrectorLibrary, EnergyCheck, ErrorNorms, LibraryEntry, RemainderReport, TwoScaleField, REMAINDER_TERMS,
};
pub use homogenized::{gradient_bound, solve_homogenized, tabulate_profile, HomogenizedMap, RadialProfile};
pub use partition::{build_partition, PartitionConstants, PartitionOfUnity};
pub use study::{
    control_errors, macro_forcing, periodic_coefficient, run_rate_study, run_rate_study_fields, CoefficientMode, RateFields,
    RateReport, RateRow, RateStudy,
};
