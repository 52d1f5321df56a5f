//! Byte-level BPE (main and named-entity models) and condition vocabularies
//! that give each token either one shared id or one id per language.

mod bpe;
mod pretok;
mod vocab;

pub use bpe::{train_bpe, train_from_chunks, train_ne_bpe, BpeModel, Symbol};
pub use pretok::{segment, segment_text, Piece, PieceKind};
pub use vocab::{
    ConditionVocabulary, Identity, IdentityCounts, Namespace, TokenSequence, TokenSpan, VocabEntry,
    VocabReport, END_OF_TEXT, FORMAT_VERSION,
};
