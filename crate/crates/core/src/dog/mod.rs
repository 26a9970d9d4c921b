//! Dynamic orthogonal grouping of rank-1 LoRA components.
//!
//! Each rank-1 component `i` (column `i` of the stacked A factors paired with
//! row `i` of the stacked B factors) gets a gradient `g_i ∈ ℝ^{m+n}`. The
//! gradients are projected to the unit sphere, clustered into `K` groups of
//! exactly `r` members whose aggregate directions are pushed towards an
//! orthonormal frame, and the bank is then rearranged to match the grouping
//! without changing the layer's output.

mod angles;
mod assign;
mod batch;
mod kmeans;
mod objective;
mod policy;
mod procrustes;
mod regroup;
mod report;
mod run;

pub use angles::{gradient_angles, AngleReport};
pub use assign::{assign_step, assignment_score, similarities, AssignMode};
pub use batch::{extract_rank1_gradients, normalize, GradientBatch, DEFAULT_EPS_G};
pub use kmeans::{spherical_kmeans_init, Clustering, MAX_KMEANS_ROUNDS};
pub use objective::{grouping_objective, objective_split};
pub use policy::GroupingPolicy;
pub use procrustes::{centroids, orthogonalize_centroids, CentroidSet};
pub use regroup::{regroup, regroup_with, Rescale, MIN_DESTINATION_ALPHA};
pub use report::{write_assignment_csv, DogReport};
pub use run::{dog_run, dog_run_from, DogConfig, DogOutcome, DEFAULT_MAX_ITER};
