//! Tools for inspecting how the embedding reward behaves: nearest-neighbour
//! lookups, perturbation sensitivity, position-aligned group comparisons and
//! batch diversity.

pub mod aligned;
pub mod diversity;
pub mod neighbors;
pub mod perturb;

pub use aligned::{aligned_comparison, pooled_t_test, AlignedComparison, AnchoredRewards, TTest};
pub use diversity::{diversity_metrics, DiversityMetrics, NgramScope};
pub use neighbors::{nearest_neighbors, Neighbor, TokenFilter};
pub use perturb::{
    apply_plan, perturb_plan, sensitivity_matrix, PerturbedPair, Perturbation, SensitivityMatrix,
};
