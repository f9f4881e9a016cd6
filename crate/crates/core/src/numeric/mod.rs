//! Dense arrays, a reverse-mode tape and the Adam optimizer.

mod adam;
pub(crate) mod array;
pub mod check;
mod params;
mod sparse;
mod tape;

pub use adam::{Adam, AdamState};
pub use array::Array;
pub use check::finite_difference_gradient;
pub use params::{ParamId, ParamStore};
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Var, NORM_FLOOR};
