pub mod checkpoint;
pub mod ensemble;
pub mod error;
pub mod former;
pub mod gcn;
pub mod harness;
pub mod input;
pub mod lift;
pub mod network;
pub mod pipeline;
pub mod skeleton;
pub mod training;

pub use error::{Error, Result};
pub use network::Network;
