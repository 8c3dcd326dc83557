//! Network building blocks: time-distributed encoder, multiplicative-unit
//! cascade, external-factor branch, attention-boosted decoder.

pub mod attention;
pub mod cascade;
pub mod decoder;
pub mod encoder;
pub mod external;
pub mod layers;

pub use attention::{ChannelAttention, SpatialAttention};
pub use cascade::{Cascade, Cmu, Mu};
pub use decoder::Decoder;
pub use encoder::{Encoder, EncoderState};
pub use external::External;
pub use layers::{
    bind, Activation, BatchNorm, BnUpdate, Builder, BufferId, Conv, ConvBlock, Ctx, Dense, Named, ParamId, ParamStore,
    ResUnit, Upsample,
};
