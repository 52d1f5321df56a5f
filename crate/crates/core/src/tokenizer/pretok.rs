use std::collections::BTreeSet;

use crate::corpus::{word_tokenize, Document};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieceKind {
    /// Text inside a named-entity span, segmented by the NE sub-model.
    Ne,
    /// A standalone word equal to a forced single-token form.
    Forced,
    /// Everything else, segmented by the main BPE model.
    Main,
}

/// A byte range of the source text and the sub-model responsible for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Piece {
    pub kind: PieceKind,
    pub start: usize,
    pub end: usize,
}

/// Chunks `text[start..end]`: whitespace runs, punctuation characters and
/// words. A word directly preceded by an ASCII space absorbs that space as
/// its first byte, unless the word is forced (forced tokens never carry
/// whitespace).
fn chunk_region(
    text: &str,
    start: usize,
    end: usize,
    kind: PieceKind,
    forced: Option<&BTreeSet<String>>,
    out: &mut Vec<Piece>,
) {
    let region = &text[start..end];
    let bytes = text.as_bytes();
    let mut cursor = start;
    let push = |out: &mut Vec<Piece>, kind: PieceKind, s: usize, e: usize| {
        if e > s {
            out.push(Piece { kind, start: s, end: e });
        }
    };
    for tok in word_tokenize(region) {
        let (ts, te) = (tok.start + start, tok.end + start);
        let is_forced = !tok.is_punct && forced.is_some_and(|f| f.contains(tok.text));
        if is_forced {
            push(out, kind, cursor, ts);
            push(out, PieceKind::Forced, ts, te);
        } else if !tok.is_punct && ts > cursor && bytes[ts - 1] == b' ' {
            push(out, kind, cursor, ts - 1);
            push(out, kind, ts - 1, te);
        } else {
            push(out, kind, cursor, ts);
            push(out, kind, ts, te);
        }
        cursor = te;
    }
    push(out, kind, cursor, end);
}

/// Splits a document into pieces covering its text exactly, in order.
pub fn segment(doc: &Document, forced: &BTreeSet<String>) -> Vec<Piece> {
    segment_text(&doc.text, &doc.ne_spans, forced)
}

pub fn segment_text(text: &str, ne_spans: &[(usize, usize)], forced: &BTreeSet<String>) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut cursor = 0;
    for &(s, e) in ne_spans {
        chunk_region(text, cursor, s, PieceKind::Main, Some(forced), &mut out);
        chunk_region(text, s, e, PieceKind::Ne, None, &mut out);
        cursor = e;
    }
    chunk_region(text, cursor, text.len(), PieceKind::Main, Some(forced), &mut out);
    out
}

/// Chunks of plain text as used for training statistics.
pub fn chunks<'a>(text: &'a str, forced: &BTreeSet<String>) -> impl Iterator<Item = &'a [u8]> {
    segment_text(text, &[], forced)
        .into_iter()
        .filter(|p| p.kind == PieceKind::Main)
        .map(move |p| &text.as_bytes()[p.start..p.end])
}
