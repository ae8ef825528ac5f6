pub mod dirstats;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod linalg;
pub mod mixgen;
pub mod mixture_fit;
pub mod perm_align;
pub mod pipeline;
pub mod quadrature;
pub mod signal_io;

pub use error::{Error, Result};
