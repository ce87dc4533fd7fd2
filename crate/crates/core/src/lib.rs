//! DTW k-nearest-neighbour classification of surgical gesture segments,
//! leave-one-user-out evaluation, and per-surgeon skill assessment.

pub mod distance;
pub mod model;
pub mod par;
pub mod classify;
pub mod eval;
pub mod metrics;
pub mod ingest;
pub mod assess;
pub mod synth;
