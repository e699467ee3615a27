pub mod dataset;
pub mod error;
pub mod lmi;
pub mod plant;
pub mod synthesis;
pub mod topology;

pub use error::{Result, StcError};
