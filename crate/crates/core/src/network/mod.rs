//! Dehazing network: layers, attention, model assembly and exact gradients.

mod attention;
mod layers;
mod model;
mod tensor;

pub use attention::{
    attention_backward, attention_forward, check_token_cap, spatial_attention, spectral_attention,
    AttentionCache, AttentionKind, AttentionProj, AttentionScores,
};
pub use layers::{gelu, gelu_grad, Conv2d};
pub use model::{
    abs_forward, backward, backward_pass, ffn, forward, forward_cached, spa_r, spe_r, sr_decode,
    sr_encode, sse_forward, sse_forward_traced, ConcatMode, ForwardCache, ModelParams, NetConfig,
    RefineBlock, SseMode,
};
pub use tensor::{FeatureMap, Tensor};
