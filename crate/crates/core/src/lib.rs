pub mod boundary;
pub mod error;
pub mod finalize;
pub mod morphology;
pub mod neural;
pub mod pareto;
pub mod pipeline;
pub mod seed;
pub mod sim;
pub mod train;
