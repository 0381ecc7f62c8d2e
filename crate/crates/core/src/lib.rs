//! Euclidean embeddability of finite metric spaces and scans of the
//! normalized Cayley–Menger and Schoenberg functionals near a marked point.
//!
//! * [`metric`]: validated finite metric spaces, tuples, distance submatrices.
//! * [`determinants`]: Cayley–Menger and Schoenberg engines, PSD tests.
//! * [`embed`]: embeddability criteria, minimal dimension, realization.
//! * [`spaces`]: function-backed marked spaces with seeded tuple samplers.
//! * [`pretangent`]: normalizing sequences, mutual stability, metric
//!   identification, the normalized functionals and the liminf scanners.

pub mod determinants;
pub mod embed;
pub mod metric;
pub mod pretangent;
pub mod spaces;

pub use determinants::{CMValue, PsdMode, PsdReport, PsdWitness, TauMatrix, DEFAULT_TOL_DET};
pub use embed::{Criterion, EmbedOptions, EmbedVerdict, Embeddable, MinDimension, Realization};
pub use metric::{DistMatrix, FiniteMetricSpace, MetricError, Tuple};
pub use pretangent::{ScanReport, ScanVerdict, TransferReport};
pub use spaces::{MarkedSpace, Point, SpaceConfig};
