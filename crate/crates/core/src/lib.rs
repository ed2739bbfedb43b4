//! Low-latency multi-microphone speech enhancement with full-band and
//! sub-band LSTMs over a short-output-window STFT.

pub mod complexity;
pub mod config;
pub mod error;
pub mod layers;
pub mod model;
pub mod reference;
mod simd;
pub mod stft;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod weights_io;

pub use complexity::ComplexityReport;
pub use config::{BandConfig, ModelConfig, Variant};
pub use error::{Error, Result};
pub use model::{enhance_stream, Enhancer, Network};
pub use stft::StftConfig;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};
pub use weights_io::{init_random, WeightStore};
