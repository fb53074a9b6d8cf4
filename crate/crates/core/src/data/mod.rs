//! File formats (datasets, embeddings, predictions, models) and the synthetic
//! corpus generator.

mod dataset;
mod embeddings;
mod model_file;
mod synth;

pub use dataset::{
    load_dataset, load_predictions, read_dataset, read_predictions, save_dataset, save_predictions, write_dataset,
    write_predictions, PredictionRecord,
};
pub use embeddings::{read_embeddings, read_embeddings_from, write_embeddings, write_embeddings_to, EmbeddingFile};
pub use model_file::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use synth::{synth_generate, SynthConfig};
