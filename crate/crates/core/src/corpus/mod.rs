//! Question corpus, annotation and embedding ingestion.

mod annotations;
mod embeddings;
mod negatives;
mod question;

pub use annotations::{
    parse_annotations, parse_annotations_with, parse_train_pairs, write_annotation_line, write_annotations,
    write_train_pairs, EvalQuery, EvaluationSet, TrainPairs, CANDIDATES_PER_QUERY,
};
pub use embeddings::{load_embeddings, write_embeddings, EmbeddingTable, OovPolicy};
pub use negatives::{mix_seed, sample_negatives};
pub use question::{
    parse_corpus, strip_duplicate_markers, truncate, write_corpus, Corpus, CorpusStats, Question, MAX_BODY_TOKENS,
};
