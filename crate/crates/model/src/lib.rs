//! Dual-stream RGB plus event detector: temporal multi-scale event aggregation, residual
//! encoders, bi-directional calibration fusion and a center-point head.

pub mod bdc;
pub mod blocks;
pub mod detector;
pub mod encoder;
pub mod etma;
pub mod gradsuite;
pub mod metrics;
pub mod network;

pub use bdc::{BdcStage, BdcTrace, ChannelAttention, ConcatConvStage, SpatialAttention};
pub use detector::{decode, encode_batch_targets, encode_targets, Detection, Head, HeadOutput, HeadVars, Targets};
pub use encoder::{ArchConfig, ArchPreset, Encoder, EncoderInputs, EventMode, FusionMode, StageFeatures, StreamConfig};
pub use etma::{Etma, EtmaConfig, EtmaTrace};
pub use metrics::{frame_map, iou, FrameEval, MapReport};
pub use network::{Batch, ForwardPass, RenetModel};
