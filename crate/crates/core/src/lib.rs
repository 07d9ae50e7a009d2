pub mod basis;
pub mod error;
pub mod fpca;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod quadrature;
pub mod reduction;
pub mod selection;
pub mod sim;
pub mod solver;
pub mod tensor;

pub use basis::{BasisKind, MarginalBasis};
pub use error::{MpbError, Result};
pub use tensor::{DenseTensor, Matrix};
