//! Streaming video generation with a joint time/denoising flow field.
//!
//! A single network predicts two velocities at every point of the
//! `(t, alpha)` plane: `f_v` advances a frame in time, `f_n` removes noise.
//! Integrating their combination along a characteristic curve produces the
//! next frame from a slightly noised copy of the previous one, which keeps
//! long rollouts from drifting.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom fix the 64-bit variants used by the pipeline.

pub mod checkpoint;
pub mod error;
pub mod metrics;
pub mod model;
pub mod net;
pub mod objectives;
pub mod optim;
pub mod sampling;
pub mod scalar;
pub mod solver;
pub mod train;
pub mod video;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use error::{Error, Result};
pub use metrics::{
    aggregate_steps, drift_slope, frechet_distance, sliding_fvd, FeatureExtractor,
    FrechetWindowSeries, GaussianStats,
};
pub use model::{FieldModel, ModelKind};
pub use net::{Activation, CoordEmbedding, Mlp, NetSpec, ParamVector};
pub use objectives::{BiflowWeights, TrainBatch};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use sampling::{
    rollout, rollout_backward, CharacteristicCurve, CurveShape, Field, Rollout, SamplingPattern,
};
pub use scalar::Scalar;
pub use solver::{solve, Direction, HeunConfig, Method, SolveSpec};
pub use train::{LossRecord, TrainConfig, Trainer};
pub use video::{DatasetKind, PairSampler, Split, SplitKind, VideoTensor};

pub type Mlp64 = Mlp<f64>;
pub type Mlp32 = Mlp<f32>;
pub type FieldModel64 = FieldModel<f64>;
pub type FieldModel32 = FieldModel<f32>;
pub type VideoTensor64 = VideoTensor<f64>;
pub type VideoTensor32 = VideoTensor<f32>;
pub type Rollout64 = Rollout<f64>;
pub type Checkpoint64 = Checkpoint<f64>;
