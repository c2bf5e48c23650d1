pub mod detection;
pub mod eval;
pub mod exec;
pub mod pipeline;
pub mod prompts;
pub mod providers;
pub mod retrieval;
pub mod simlab;
pub mod stage;
pub mod text;
