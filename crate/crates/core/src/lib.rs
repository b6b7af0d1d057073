pub mod attention;
pub mod backbone;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod init;
pub mod model;
pub mod numerics;
pub mod ssm;
pub mod tc_mamba;
pub mod tme;
pub mod tq_mamba;

pub use error::{Error, Result};
pub use model::{ModalShapes, ModelConfig, TfMamba};
