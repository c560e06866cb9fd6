//! Network definitions: the shared point encoder, observation and
//! photometric encoders, the folding decoder and the pose head.

mod config;
pub mod forward;
mod infer;
mod model;

pub use config::{DecoderTemplate, NetConfig};
pub use forward::{colored_batch, geometry_batch, resample_indices, CloudBatch, Pool, MIN_POINTS};
pub use infer::{FeatureBundle, LatentCode, Prediction};
pub use model::{
    is_vae_param, template_points, Bound, Model, DECODER, GEO_ENCODER, OBS_ENCODER, PHO_ENCODER,
    POINT_ENCODER, POSE_HEAD, SHAPE_HEAD, VAE_PREFIXES,
};
