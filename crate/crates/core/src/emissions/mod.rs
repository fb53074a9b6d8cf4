//! Emission network: frozen token embeddings, a stacked bidirectional GRU and
//! a linear head producing per-token label scores, with analytic backward
//! passes.

mod dropout;
mod embedding;
mod gru;
mod init;

pub use dropout::{dropout_rate, DropoutMode, DropoutPolicy};
pub use embedding::{lookup_embeddings, EmbeddingSource, EmbeddingTable};
pub use gru::{
    bigru_forward, emissions_backward, head_forward, BiGruParams, ForwardCache, Gate, GruCell,
    GruLayer, NetworkGradients,
};
pub use init::{default_uniform_init, xavier_bound, xavier_init, InitScheme};
