//! Dense networks on flat parameter vectors with hand-derived reverse passes.

mod adam;
mod attention;
mod checkpoint;
mod embed;
pub mod gradcheck;
mod layers;
mod params;

pub use adam::{adam_step, copy_to_target, AdamConfig, AdamState};
pub use attention::{softmax, AttentionAggregator, AttentionCache};
pub use checkpoint::Checkpoint;
pub use embed::{cosine_features, EmbedCache, QuantileEmbedding};
pub use layers::{Activation, Linear, Mlp, MlpCache, NetworkSpec};
pub use params::{Init, ParamBuilder, ParamEntry, ParameterSet};
