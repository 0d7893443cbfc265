//! Dense matrices, a reverse-mode tape, named parameters and the Adam optimizer.

mod adam;
mod dense;
mod params;
mod tape;

pub use adam::Adam;
pub use dense::Tensor;
pub use params::{ParamContainer, ParamStore, StoredTensor, FORMAT_VERSION};
pub use tape::{Gradients, ParamGrads, Tape, Var};
