//! The restoration network, its building blocks, MAC counters and checkpoints.

pub mod angular;
pub mod blocks;
pub mod checkpoint;
pub mod complexity;
pub mod layers;
pub mod model;
pub mod spatial;

pub use angular::{AngularBlock, AngularConfig};
pub use blocks::{Aram, AramConfig, ResBlock};
pub use complexity::{angular_complexity, spatial_complexity};
pub use layers::{Bound, ParamId, ParamStore};
pub use model::{lrt_forward, ForwardVars, LRTModel, ModelConfig, RestorationOutputs};
pub use spatial::{SpatialBlock, SpatialConfig};
