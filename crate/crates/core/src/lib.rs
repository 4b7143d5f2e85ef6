//! Local privacy guard for LLM prompts.

pub mod audit;
pub mod compressor;
pub mod config;
pub mod costmodel;
pub mod decomposer;
pub mod endpoint;
pub mod memory;
pub mod pipeline;
pub mod router;
pub mod scanner;
pub mod vault;
