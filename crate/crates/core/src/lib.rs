//! Membership certification and constrained convex optimization over convex
//! classes of multiparticle entanglement.

pub mod certify;
pub mod classes;
pub mod error;
pub mod gilbert;
pub mod likelihood;
pub mod optimize;
#[cfg(test)]
mod proptests;
pub mod qcore;
pub mod rng;
pub mod states;

pub use certify::{certify_membership, threshold_search, Certificate, ThresholdParams, ThresholdReport, Verdict};
pub use classes::{ClassKind, ClassSpec, ExtremePoint, OracleParams, Partition, PptParams};
pub use error::{Error, Result};
pub use gilbert::{gilbert_project, GilbertParams, GilbertResult};
pub use likelihood::{lrt, Algorithm, Dataset, LrtParams, LrtReport, Povm};
pub use optimize::{apg_maximize, dg_maximize, Objective, OptParams, OptResult, Projector};
pub use qcore::{CMatrix, DensityMatrix, PureState, SystemShape, ToleranceConfig, C64};
pub use states::StateFamily;
