//! Decoupled average-cost problems and their Whittle-like indices.

mod relative_value;
mod table;
mod value_iteration;
mod whittle;

pub use relative_value::{
    check_threshold_structure, equation_residuals, solve_relative_value, structural_limit,
    RelativeValueSolution, ThresholdStructure,
};
pub use table::{build_index_table, IndexMethod, IndexOptions, IndexTable, PairIndices};
pub use value_iteration::{value_iteration_oracle, value_iteration_step, ValueIterationResult};
pub use whittle::{
    affine_fixed_point, indexability_check, threshold_cost_lines, whittle_index_direct,
    whittle_index_iterative, DirectIndex, IndexabilityReport, IterationSettings, IterativeIndex,
    DEFAULT_ETA, MIN_BUFFER_MARGIN,
};
