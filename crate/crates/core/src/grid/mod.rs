//! Tensor-product time/space partitions, multi-index bookkeeping, difference
//! stencils and the discrete `C^k` norms built on them.
//!
//! All types here are immutable once built and can be shared across threads.

mod field;
mod multi_index;
mod norms;
mod partition;
mod stencil;

use thiserror::Error;

pub use field::{DerivativeStack, GridField};
pub use multi_index::{enumerate_multi_indices, ordering_key, MultiIndexSet, StackLayout, MAX_ORDER};
pub use norms::{cinf_truncated_norm, ck_norm, NormWeights};
pub use partition::{build_partition, Partition, MAX_SPATIAL_DIMS};
pub use stencil::{build_derivative_stack, first_difference, BoundaryRule, Stencil};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("axis {axis} out of range for {dims} spatial dimensions")]
    InvalidAxis { axis: usize, dims: usize },
    #[error("derivative order {order} exceeds the supported bound {bound}")]
    OrderTooHigh { order: usize, bound: usize },
    #[error("requested order {requested} but the stack only holds orders up to {available}")]
    OrderMismatch { requested: usize, available: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}
