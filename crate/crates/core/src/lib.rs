pub mod backend;
pub mod encoding;
pub mod evaluation;
pub mod fcg;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod strategies;
pub mod synth;
pub mod tabular;
