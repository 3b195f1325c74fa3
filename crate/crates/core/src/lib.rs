//! Grasp detection by particle swarm search over oriented grasp rectangles.
//!
//! The pipeline has two stages. A candidate estimator ([`pso`]) searches the
//! five-dimensional rectangle space `{x, y, theta, h, w}` of a preprocessed
//! image, and a [`scorer::Scorer`] rates each candidate. The CNN scorer runs a
//! small all-convolutional classifier ([`nn`]) on a 24x24 patch cut out along
//! the rectangle ([`imaging::extract_patch`]).

pub mod dataset;
pub mod geometry;
pub mod imaging;
pub mod nn;
pub mod pso;
pub mod scorer;

pub use geometry::{angle_diff, rect_iou, rect_match, GraspRect, MatchCriteria, OverlapMetric};
pub use imaging::{Patch, Raster};
pub use nn::{Tensor, WeightsBundle};
pub use pso::{multigrasp, search, SearchResult, Swarm, SwarmConfig, UpdateRule};
pub use scorer::{CnnScorer, Fitness, Scorer, SyntheticScorer};
