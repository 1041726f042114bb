//! Face-template protection by group-wise spherical interpolation toward
//! random keys, followed by feature dropout.

pub mod attacks;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod matching;
pub mod protection;
pub mod report;
pub mod seed;
pub mod stats;
pub mod store;
pub mod template;

pub use error::{Error, Result};
pub use matching::{identify, verify, EnrollmentRecord, MatchFailure, MatchResult};
pub use protection::{
    protect, protect_query, sample_key, DropoutMask, DropoutMode, KeyTemplate, ProtectedTemplate, ProtectionParams,
};
pub use template::{groupwise_similarity, GroupLayout, GroupWeights, Template};
