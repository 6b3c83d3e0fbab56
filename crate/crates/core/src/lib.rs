pub mod decomp;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernels;
pub mod sketch;
pub mod stability;
pub mod update;

pub use error::{Error, Result};
