//! Graph learning toolkit built around a GCN encoder, a convolutional
//! decoder over pairwise intermediate matrices, supernode feature
//! coarsening, and a mean-target correction scheme for graph translation.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod mtcm;
pub mod optim;
pub mod pipelines;
pub mod supernode;
pub mod tensor;
pub mod train;

pub use error::{Result, UgnError};
pub use tensor::{Precision, Tensor};
