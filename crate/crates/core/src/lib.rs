//! Level-set percolation of the Gaussian free field on random regular graphs.

pub mod error;
pub mod exploration;
pub mod gff;
pub mod green;
pub mod levelset;
pub mod multigraph;
pub mod seed;
pub mod stats;
pub mod tree_process;
pub mod unionfind;

pub use error::{Error, Result};
