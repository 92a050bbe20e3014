pub mod chetaev;
pub mod cli;
pub mod config;
pub mod constraint;
pub mod control;
pub mod error;
pub mod integrator;
pub mod mechanics;
pub mod numdiff;
pub mod scenarios;
pub mod state;
pub mod trajectory_csv;
