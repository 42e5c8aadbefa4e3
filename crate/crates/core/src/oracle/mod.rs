//! Finite event trees: exact conditional expectations, martingale
//! representations, discrete BSDEs and dynamic programming.

pub mod field;
pub mod represent;
pub mod solve;
pub mod tree;

pub use represent::{
    max_residual, represent_increment, spans_everywhere, tree_representation, Arithmetic,
    NodeRepresentation, EXACT_MAX_DEPTH, FLOAT_TOL,
};
pub use solve::{
    post_default_clean, tree_bsde, tree_compensator, tree_dp_optimize, tree_generator,
    write_tree_csv, DpSolution, DriverKind, TreeBsde,
};
pub use tree::{
    build_tree, tree_conditional_expectation, Branch, EventTree, TreeNode, TreeSpec, NODE_CAP,
};
