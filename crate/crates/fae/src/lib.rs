//! Searchable detector neck: sequential feature-aggregation cells along
//! top-down and bottom-up paths (continuous relaxation over candidate
//! connections, indicator connections after discretization), per-level
//! feature-enhancement DAGs with straight-through Gumbel edge sampling and
//! softmax-mixed candidate operations, discretization rules, and assembly
//! of the combined neck with a configurable enhancement position.

pub mod arch;
pub mod error;
pub mod fa;
pub mod fe;
pub mod neck;
pub mod ops;

pub use arch::{DiscreteArch, FaCellArch, FeCellArch, FePosition};
pub use error::{FaeError, Result};
pub use fa::{discretize_fa, fa_cell_forward, fa_path_forward, resize_to, FaCellParams, FaMode, FaPath, PathDirection, PathMode};
pub use fe::{discretize_fe, fe_cell_forward, gumbel_edge_select, gumbel_edge_select_with_noise, mixed_op, sample_fe_noise, FeCellParams, FeMode};
pub use neck::{autofae_block_forward, autofae_forward, discretize_from_store, init_arch_params, init_discrete_weights, init_search_weights, NeckConfig, NeckMode, WidthSlice};
pub use ops::{CellOp, OpSetKind};
