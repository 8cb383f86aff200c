pub mod analysis;
pub mod cli;
pub mod coupling;
pub mod device;
pub mod ensemble;
pub mod error;
pub mod evolution;
pub mod noise;
pub mod spectrum;
pub mod tridiag;
