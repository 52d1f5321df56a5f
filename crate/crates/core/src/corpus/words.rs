use unicode_general_category::{get_general_category, GeneralCategory};

/// Unicode general category `P*`.
pub fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// True when every char of `s` is punctuation (and `s` is non-empty).
pub fn is_punctuation_str(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_punctuation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WordToken<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
    pub is_punct: bool,
}

/// Splits on whitespace and splits off each punctuation character as its own
/// token. Case is preserved and offsets are byte offsets into `text`.
pub fn word_tokenize<'a>(text: &'a str) -> Vec<WordToken<'a>> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    let flush = |out: &mut Vec<WordToken<'a>>, start: &mut Option<usize>, end: usize| {
        if let Some(s) = start.take() {
            out.push(WordToken {
                text: &text[s..end],
                start: s,
                end,
                is_punct: false,
            });
        }
    };
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            flush(&mut out, &mut word_start, i);
        } else if is_punctuation(c) {
            flush(&mut out, &mut word_start, i);
            let end = i + c.len_utf8();
            out.push(WordToken {
                text: &text[i..end],
                start: i,
                end,
                is_punct: true,
            });
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    flush(&mut out, &mut word_start, text.len());
    out
}
