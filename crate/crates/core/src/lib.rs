pub mod tensor;
pub mod morphology;
pub mod model;
pub mod env;
pub mod rl;
pub mod analysis;
pub mod cli;
