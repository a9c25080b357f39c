pub mod corpus;
pub mod error;
pub mod eval;
pub mod extended;
pub mod model;
pub mod nptest;
pub mod oracle;
pub mod rng;
pub mod smd;
