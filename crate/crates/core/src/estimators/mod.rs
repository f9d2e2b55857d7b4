//! Monte Carlo estimation, sample-size calculators, rank budgets and the
//! exhaustive ground-truth oracle.

mod mc;
mod oracle;
mod rank;
mod sample_size;

pub use mc::{mc_estimate, mc_replicates, wilson_interval, McConfig, McEstimate, McReplicates};
pub use oracle::{oracle_exact_mass, oracle_exact_masses, OracleGuard, DEFAULT_MAX_LEAVES};
pub use rank::{check_rank_budget, geometric_mean_floor, heavy_mass_floor, rank_budget, BudgetThreshold};
pub use sample_size::{mc_detection_sample_size, mc_relse_sample_size};
