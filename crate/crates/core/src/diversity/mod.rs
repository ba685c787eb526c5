//! Kernel diversity: RBF kernels, greedy DPP MAP, Vendi score, IntDiv and
//! the subset optimiser that combines them.

pub mod dpp;
pub mod kernel;
pub mod measures;
pub mod select;

pub use dpp::{dpp_greedy_select, log_det};
pub use kernel::{median_pairwise_distance, rbf_kernel, rbf_kernel_with_bandwidth, KernelMatrix};
pub use measures::{int_div, vendi_score};
pub use select::{select_diverse_subset, set_diversity, DiversityDecision, SelectionConfig, SubsetScore};
