pub mod costs;
pub mod error;
pub mod losses;
pub mod scorer;
pub mod attacks;
pub mod oracle;
pub mod trainer;
pub mod bench;
pub mod verify;
pub mod cli;

pub use error::{Error, Result};
