pub mod chunker;
pub mod corpus;
pub mod diagnosis;
pub mod engine;
pub mod error;
pub mod llm;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod policy;
pub mod prompts;
pub mod querygen;
pub mod report;
pub mod template;
pub mod text;
pub mod toolkit;

pub use error::{Error, Result};
