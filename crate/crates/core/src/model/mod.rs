//! The FSB-LSTM network and its full-band-only ablation, in whole-utterance
//! and frame-by-frame form, plus the tape-recorded variant used for training.

pub mod graph;
pub mod net;
pub mod stream;
pub mod weights;

pub use net::{check_weights, LstmState, NetState, Network, Weights};
pub use stream::{enhance_stream, Enhancer, StreamState};
pub use weights::{Init, ModelWeights, ParamSpec};
