pub mod encoder;
pub mod error;
pub mod harness;
pub mod head;
pub mod memory;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod ssm;
pub mod tokenizer;

pub use error::{MimError, Result};
