//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Provides exactly the operations the forecasting model needs: matrix
//! products, elementwise activations, column/row rearrangement, dropout, and
//! a reverse sweep with finite-difference verification.

mod grad_check;
mod matrix;
mod tape;

pub use grad_check::{grad_check, GradCheckEntry, GradCheckReport};
pub use matrix::Matrix;
pub use tape::{Mode, NodeId, Tape};
