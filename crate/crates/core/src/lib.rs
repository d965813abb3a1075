//! Region decomposition of labeled point clouds.
//!
//! A shape is first cut into a naive farthest-point-sampling decomposition,
//! then refined by three local operators applied region by region:
//! *split* (instance segmentation inside one region), *fix* (inside/outside
//! relabeling around a region's boundary) and *merge* (pairwise decisions on
//! neighboring regions, repeated in greedy rounds). Operator decisions come
//! from interchangeable sources: ground-truth oracles, geometric heuristics,
//! or score files recorded from an external model and replayed.
//!
//! The crate also carries the evaluation metrics (region purity, AIoU), the
//! slot matcher used to build split-network targets, and the synthetic
//! training-example generators for the three operators.

pub mod decomp;
pub mod error;
pub mod geom;
pub mod matching;
pub mod metrics;
pub mod operators;
pub mod pipeline;
pub mod procgen;
pub mod region;
pub mod shape;
pub mod spatial;
pub mod synthgen;

pub use error::{Error, Result};
pub use geom::{NormalizedRegion, Point3, Transform};
pub use region::RegionDecomposition;
pub use shape::Shape;
