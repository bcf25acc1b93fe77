pub mod checkpoint;
pub mod coord;
pub mod data;
pub mod harness;
pub mod error;
pub mod labels;
pub mod model;
pub mod nn;
pub mod pool;
pub mod synth;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
pub use labels::{Mode, TaskConfig};
pub use tensor::{Adam, AdamConfig, ParamId, ParamStore, StepDecay, Tape, Tensor, Var};
