//! Duty-cycle and SNM aging simulation for SRAM weight memories of DNN
//! accelerators, with write-data encoding policies that rebalance cell stress.

pub mod aging;
pub mod bitstats;
pub mod dataflow;
pub mod encoders;
pub mod error;
pub mod probmodel;
pub mod report;
pub mod sim;
pub mod weights;
pub mod word;

pub use error::{Error, Result};
