//! Subspace identification and comparison across layers and contexts.

mod angles;
mod gcca;
mod pca;
mod rank;
mod similarity;

pub use angles::{context_subspace_overlap, principal_angle_overlap, ORTHONORMAL_TOL};
pub use gcca::{gcca_fit, GccaOptions, SharedSubspace, ViewOperators, ViewScaling, DEFAULT_RIDGE};
pub use pca::{svd_variance_basis, PcBasis};
pub use rank::{gcca_rank_select, RankSelection, DEFAULT_ALPHA, DEFAULT_PERMUTATIONS, MIN_PERMUTATIONS};
pub use similarity::{compute_rdm, gcca_alignment, rsa, Rdm};
