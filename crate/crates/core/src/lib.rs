pub mod bsfa;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod optim;
pub mod problems;
pub mod quant;
pub mod subspace;
