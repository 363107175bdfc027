//! Operator vocabulary, block and cell encodings, canonical forms and cell
//! expansion.

mod cell;
mod dot;
mod iso;
mod operator;

pub use cell::{available_pairs, expand_cell, BlockSpec, CellSpec, DagViews, InputRef};
pub use dot::cell_to_dot;
pub use iso::{canonical_form, Canonicalizer, IsoScope, DEFAULT_CANONICAL_BOUND};
pub use operator::{parse_operator_set, OperatorKind, OperatorSpec};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CellError {
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("invalid parameter `{value}` in operator `{token}`")]
    InvalidParameter { token: String, value: String },
    #[error("operator `{0}` listed twice")]
    DuplicateOperator(String),
    #[error("malformed cell `{text}`: {reason}")]
    Syntax { text: String, reason: String },
    #[error("block {block} has illegal input {input}")]
    InvalidInput { block: usize, input: InputRef },
    #[error("cell already has the maximum of {0} blocks")]
    CellComplete(usize),
    #[error("cell of {blocks} blocks exceeds the canonicalization bound of {bound}")]
    CellTooLarge { blocks: usize, bound: usize },
}
