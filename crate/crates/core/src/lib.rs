//! Low-light light-field restoration: light-field containers, a reverse-mode
//! tensor engine, a calibrated sensor noise model, the restoration network,
//! its losses and metrics, and the training loop.

pub mod error;
pub mod gradsuite;
pub mod lightfield;
pub mod loss;
pub mod net;
pub mod noise;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use lightfield::{ColorSpace, Epi, EpiAxis, LightField, PlenopticImage};
pub use loss::{LossBreakdown, LossWeights};
pub use net::{lrt_forward, LRTModel, ModelConfig, RestorationOutputs};
pub use noise::{LogLinearModel, NoiseParams, SynthesisConfig};
pub use tensor::{Graph, Tensor, Var};
pub use train::{run_training, TrainConfig};
