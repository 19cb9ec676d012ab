pub mod baseline;
pub mod chop;
pub mod config;
pub mod corpus;
pub mod diagserver;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod report;
pub mod sexp;
pub mod subtok;
