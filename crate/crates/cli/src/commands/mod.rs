pub mod boundary;
pub mod generator;
pub mod identify;
pub mod kernel;
pub mod martingale;
pub mod simulate;
