pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod gates;
pub mod lexical;
pub mod metrics;
pub mod pretrain;
pub mod ranking;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
