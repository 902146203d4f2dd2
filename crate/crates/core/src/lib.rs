//! Two-branch Siamese video quality assessment.
//!
//! Technical inputs are fragments (grid mini-patch mosaics at raw
//! resolution), aesthetic inputs are down-sampled frames. Both pass through
//! one windowed-attention backbone whose weights are shared between the
//! branches, are fused by dual cross-attention, and regressed into quality
//! maps whose average is the video score.

pub mod backbone;
pub mod diffcore;
pub mod error;
pub mod fragments;
pub mod fusion;
pub mod harness;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synthdata;
pub mod video;

pub use backbone::{BackboneConfig, Branch, FeatureMap, ParamStore, PositionBiasKind, StageConfig};
pub use diffcore::{Graph, Real, Tensor, Var};
pub use error::{Error, Result};
pub use fragments::{AestheticClip, FragmentClip, SamplerConfig};
pub use fusion::{FusionMode, QualityMap};
pub use losses::ScoreBatch;
pub use model::{Inference, Model, ModelKind, ModelSpec};
pub use video::RawVideo;
