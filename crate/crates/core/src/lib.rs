pub mod error;
pub mod model;
pub mod sim;
pub mod codec;
pub mod gait;
pub mod harness;
pub mod policy;
pub mod prompt;
