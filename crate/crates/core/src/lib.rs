//! Product quantization, an IVF-PQ inverted index with merge and subset
//! search, and a chunked-parallel PQ training pipeline.
//!
//! The pipeline trains a local PQ model per row chunk, decodes each local
//! codebook back into full-dimension representative rows, and refits one
//! global model on the stacked representatives. The global model then
//! encodes the original data, and per-chunk inverted indexes built against
//! shared coarse centroids are merged into one.

pub mod bench;
pub mod dataset;
pub mod error;
mod io;
pub mod ivf;
pub mod kmeans;
pub mod matrix;
pub mod pipeline;
pub mod pq;

pub use dataset::{chunk_rows, gen_synthetic, RowRange, SyntheticSpec};
pub use error::{Error, Result};
pub use ivf::{flat_scan, InvertedIndex, QueryResult, SearchParams};
pub use kmeans::{kmeans_fit, nearest_centroid, KMeansParams, KMeansResult};
pub use matrix::VectorMatrix;
pub use pipeline::{run_pipeline, ChunkOutput, Mode, PipelineConfig, PipelineReport};
pub use pq::{rmse, CodeMatrix, CodeRow, Codebook, DistanceTable, PqParams};
