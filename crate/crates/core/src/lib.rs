pub mod armodel;
pub mod circuit;
pub mod compiler;
pub mod constraints;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod logspace;
pub mod oracle;
pub mod pseudo;
pub mod sampler;
pub mod tasks;
pub mod tokenize;
