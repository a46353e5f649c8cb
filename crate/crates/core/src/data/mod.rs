//! Datasets: the synthetic changed-prior benchmark, VQA-format ingestion,
//! question typing and the on-disk formats.

mod dataset;
mod ingest;
mod io;
mod qtypes;
mod synthetic;
mod vocab;

pub use dataset::{argmax, argmax_sparse, AnswerCategory, Dataset, DatasetSource, Instance, Split};
pub use ingest::{ingest_vqa_json, soft_score, IngestOptions, SplitFiles};
pub use io::{
    dataset_hash, load_dataset, read_dataset, read_features, save_dataset, write_dataset, write_features,
    FeatureStore, DATASET_FORMAT_VERSION,
};
pub use qtypes::{question_type, tokenize, QuestionTypeTable, FALLBACK_TYPE, VQA_V2_QUESTION_TYPES};
pub use synthetic::{generate_synthetic, GenConfig, TestPrior};
pub use vocab::{AnswerVocab, TokenVocab, Vocab};
