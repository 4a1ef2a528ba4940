pub mod bochner;
pub mod calculus;
pub mod cdconstants;
pub mod connection;
pub mod curvature;
pub mod error;
pub mod expr;
pub mod geodesics;
pub mod heat;
pub mod io;
pub mod jet;
pub mod models;
pub mod structure;

pub use error::{Error, Result};
