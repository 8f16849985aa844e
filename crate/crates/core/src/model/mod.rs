//! The bi-modal fusion model: configuration, parameters, forward pass and
//! checkpoints.

pub mod checkpoint;
mod config;
pub mod forward;
mod params;

pub use config::{InputModality, ModelConfig};
pub use forward::{forward, predict};
pub use params::{
    layout, parameter_count, AlignParams, BoundParams, CrossHeadParams, DenseParams, Init, Layout, McamParams,
    ModelParams, MsaBlockParams, NormParams, ParamId, ParamSpec, SelfHeadParams, SmsamParams,
};
