pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod forms;
pub mod jetcalc;
pub mod report;
pub mod symbolic;
pub mod unified;

pub use error::{Error, EvalError, ParseError, Result};
