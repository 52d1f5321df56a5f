//! Measurements on trained models: target-word surprisal on minimal pairs
//! and cross-lingual similarity of standardized, mean-pooled hidden states.

mod similarity;
mod surprisal;

pub use similarity::{
    calibrate_standardizer, calibration_rows, cosine, cross_lingual_similarity, find_word, pool_embeddings, sample_sentences,
    similarity_csv_rows, split_sentences, EmbeddingKind, Pooled, Sentence, SentenceSample, SimilarityRecord,
    SimilarityResult, SkippedWord, Standardizer, SIMILARITY_HEADER,
};
pub use surprisal::{
    csv_field, encode_item, parse_stimuli, read_stimuli, surprisal, surprisal_csv_rows, surprisal_table, write_stimuli,
    ProbeContext, StimulusItem, SurprisalRecord, WordCategory, SURPRISAL_HEADER,
};
