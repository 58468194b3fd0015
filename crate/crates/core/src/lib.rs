pub mod baseline_mlp;
pub mod data;
pub mod env;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod harness;
pub mod lm;
pub mod policy;
pub mod ppo;
pub mod prompting;
pub mod tokenizer;

pub use error::{Error, Result};
pub use exec::ExecMode;
