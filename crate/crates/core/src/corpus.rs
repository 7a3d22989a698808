//! Tokens, chunk labelings and the conversions between IOB1 tags, span
//! sets, bracketed text and three-column files.
//!
//! IOB1 is the only tag scheme. `I` marks a token inside a chunk, `O` a
//! token outside any chunk, and `B` the first token of a chunk that
//! immediately follows another chunk. A `B` at the start of a sentence or
//! after an `O` is normalized to `I` when data is ingested.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentence identifier, unique within a corpus.
pub type SentenceId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("line {line}: expected 3 fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: unknown chunk tag `{tag}`")]
    UnknownTag { line: usize, tag: String },
    #[error("line {line}: POS tag `{pos}` contains an underscore")]
    UnderscorePos { line: usize, pos: String },
    #[error("invalid IOB1 sequence: B at position {0} does not follow a chunk")]
    InvalidIob(usize),
    #[error("span [{start},{end}) is empty or outside a sentence of length {len}")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("spans [{0},{1}) and [{2},{3}) overlap")]
    SpanOverlap(usize, usize, usize, usize),
    #[error("bracket error at token {pos}: {msg}")]
    Bracket { pos: usize, msg: &'static str },
    #[error("malformed token `{0}`: expected word_POS")]
    MalformedToken(String),
    #[error("empty sentence")]
    EmptySentence,
    #[error("labeling has {tags} tags but the sentence has {tokens} tokens")]
    LengthMismatch { tags: usize, tokens: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChunkTag {
    I,
    O,
    B,
}

impl ChunkTag {
    pub const ALL: [ChunkTag; 3] = [ChunkTag::I, ChunkTag::O, ChunkTag::B];

    pub fn as_str(self) -> &'static str {
        match self {
            ChunkTag::I => "I",
            ChunkTag::O => "O",
            ChunkTag::B => "B",
        }
    }

    pub fn parse(s: &str) -> Option<ChunkTag> {
        match s {
            "I" => Some(ChunkTag::I),
            "O" => Some(ChunkTag::O),
            "B" => Some(ChunkTag::B),
            _ => None,
        }
    }

    #[inline]
    pub fn in_chunk(self) -> bool {
        self != ChunkTag::O
    }
}

impl fmt::Display for ChunkTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub word: String,
    pub pos: String,
}

impl Token {
    pub fn new(word: impl Into<String>, pos: impl Into<String>) -> Self {
        Token {
            word: word.into(),
            pos: pos.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    pub id: SentenceId,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(id: SentenceId, tokens: Vec<Token>) -> Self {
        Sentence { id, tokens }
    }

    /// Builds a sentence from `word_POS` pairs separated by whitespace.
    pub fn from_tagged(id: SentenceId, text: &str) -> Result<Self, CorpusError> {
        let tokens = text
            .split_whitespace()
            .map(split_word_pos)
            .collect::<Result<Vec<_>, _>>()?;
        if tokens.is_empty() {
            return Err(CorpusError::EmptySentence);
        }
        Ok(Sentence { id, tokens })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Half-open token interval `[start, end)` covering one base noun phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChunkSpan {
    pub start: usize,
    pub end: usize,
}

impl ChunkSpan {
    pub const fn new(start: usize, end: usize) -> Self {
        ChunkSpan { start, end }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl fmt::Display for ChunkSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// A valid IOB1 tag sequence aligned with one sentence.
///
/// Deserializing goes through [`Labeling::normalized`], so a `B` that
/// opens no chunk is read as `I`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<ChunkTag>", into = "Vec<ChunkTag>")]
pub struct Labeling {
    tags: Vec<ChunkTag>,
}

impl From<Vec<ChunkTag>> for Labeling {
    fn from(tags: Vec<ChunkTag>) -> Self {
        Labeling::normalized(tags)
    }
}

impl From<Labeling> for Vec<ChunkTag> {
    fn from(l: Labeling) -> Self {
        l.tags
    }
}

impl Labeling {
    /// Accepts only sequences that are already valid IOB1.
    pub fn new(tags: Vec<ChunkTag>) -> Result<Self, CorpusError> {
        validate_iob(&tags)?;
        Ok(Labeling { tags })
    }

    /// Rewrites every `B` that does not follow a chunk token into `I`.
    pub fn normalized(mut tags: Vec<ChunkTag>) -> Self {
        let fixed = normalize_iob(&mut tags);
        if fixed > 0 {
            log::warn!("normalized {fixed} B tag(s) that did not follow a chunk");
        }
        Labeling { tags }
    }

    pub fn all_outside(len: usize) -> Self {
        Labeling {
            tags: alloc::vec![ChunkTag::O; len],
        }
    }

    pub fn from_spans(spans: &[ChunkSpan], len: usize) -> Result<Self, CorpusError> {
        Ok(Labeling {
            tags: spans_to_iob(spans, len)?,
        })
    }

    #[inline]
    pub fn tags(&self) -> &[ChunkTag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<ChunkTag> {
        self.tags
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn spans(&self) -> Vec<ChunkSpan> {
        spans_of_valid(&self.tags)
    }
}

/// A sentence paired with its chunk labeling.
pub type LabeledSentence = (Sentence, Labeling);

fn validate_iob(tags: &[ChunkTag]) -> Result<(), CorpusError> {
    for (i, &t) in tags.iter().enumerate() {
        if t == ChunkTag::B && (i == 0 || tags[i - 1] == ChunkTag::O) {
            return Err(CorpusError::InvalidIob(i));
        }
    }
    Ok(())
}

/// Fixes invalid `B` tags in place and returns how many were rewritten.
pub fn normalize_iob(tags: &mut [ChunkTag]) -> usize {
    let mut fixed = 0;
    for i in 0..tags.len() {
        if tags[i] == ChunkTag::B && (i == 0 || tags[i - 1] == ChunkTag::O) {
            tags[i] = ChunkTag::I;
            fixed += 1;
        }
    }
    fixed
}

fn spans_of_valid(tags: &[ChunkTag]) -> Vec<ChunkSpan> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            ChunkTag::O => {
                if let Some(s) = open.take() {
                    spans.push(ChunkSpan::new(s, i));
                }
            }
            ChunkTag::B => {
                if let Some(s) = open.replace(i) {
                    spans.push(ChunkSpan::new(s, i));
                }
            }
            ChunkTag::I => {
                if open.is_none() {
                    open = Some(i);
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push(ChunkSpan::new(s, tags.len()));
    }
    spans
}

/// Maximal runs of chunk tokens, split at every `B`, in ascending order.
pub fn iob_to_spans(tags: &[ChunkTag]) -> Result<Vec<ChunkSpan>, CorpusError> {
    validate_iob(tags)?;
    Ok(spans_of_valid(tags))
}

/// Checks that spans are nonempty, in range and pairwise disjoint, and
/// returns them sorted.
pub fn check_spans(spans: &[ChunkSpan], len: usize) -> Result<Vec<ChunkSpan>, CorpusError> {
    let mut sorted = spans.to_vec();
    sorted.sort_unstable();
    for s in &sorted {
        if s.is_empty() || s.end > len {
            return Err(CorpusError::SpanOutOfRange {
                start: s.start,
                end: s.end,
                len,
            });
        }
    }
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(CorpusError::SpanOverlap(
                w[0].start, w[0].end, w[1].start, w[1].end,
            ));
        }
    }
    Ok(sorted)
}

pub fn spans_to_iob(spans: &[ChunkSpan], len: usize) -> Result<Vec<ChunkTag>, CorpusError> {
    let sorted = check_spans(spans, len)?;
    let mut tags = alloc::vec![ChunkTag::O; len];
    let mut prev_end = usize::MAX;
    for s in &sorted {
        tags[s.start] = if s.start == prev_end {
            ChunkTag::B
        } else {
            ChunkTag::I
        };
        for t in &mut tags[s.start + 1..s.end] {
            *t = ChunkTag::I;
        }
        prev_end = s.end;
    }
    Ok(tags)
}

fn split_word_pos(tok: &str) -> Result<Token, CorpusError> {
    match tok.rfind('_') {
        Some(i) if i > 0 && i + 1 < tok.len() => Ok(Token::new(&tok[..i], &tok[i + 1..])),
        _ => Err(CorpusError::MalformedToken(tok.to_string())),
    }
}

/// Parses a three-column `WORD POS TAG` file. Sentence ids are assigned
/// in file order starting at 0.
pub fn parse_conll(text: &str) -> Result<Vec<LabeledSentence>, CorpusError> {
    parse_conll_from(text, 0)
}

/// Like [`parse_conll`], numbering sentences from `first_id`.
pub fn parse_conll_from(
    text: &str,
    first_id: SentenceId,
) -> Result<Vec<LabeledSentence>, CorpusError> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut next_id = first_id;

    let mut flush = |tokens: &mut Vec<Token>, tags: &mut Vec<ChunkTag>| {
        if tokens.is_empty() {
            return;
        }
        let sentence = Sentence::new(next_id, core::mem::take(tokens));
        next_id += 1;
        out.push((sentence, Labeling::normalized(core::mem::take(tags))));
    };

    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags);
            continue;
        }
        let fields: Vec<&str> = line.split([' ', '\t']).filter(|f| !f.is_empty()).collect();
        if fields.len() != 3 {
            return Err(CorpusError::FieldCount {
                line: line_no,
                found: fields.len(),
            });
        }
        if fields[1].contains('_') {
            return Err(CorpusError::UnderscorePos {
                line: line_no,
                pos: fields[1].to_string(),
            });
        }
        let tag = ChunkTag::parse(fields[2]).ok_or_else(|| CorpusError::UnknownTag {
            line: line_no,
            tag: fields[2].to_string(),
        })?;
        tokens.push(Token::new(fields[0], fields[1]));
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags);
    Ok(out)
}

pub fn emit_conll<'a, I>(pairs: I) -> String
where
    I: IntoIterator<Item = (&'a Sentence, &'a Labeling)>,
{
    let mut out = String::new();
    for (sentence, labeling) in pairs {
        for (tok, tag) in sentence.tokens.iter().zip(labeling.tags()) {
            out.push_str(&tok.word);
            out.push(' ');
            out.push_str(&tok.pos);
            out.push(' ');
            out.push_str(tag.as_str());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Renders `word_POS` tokens with standalone `(` and `)` around each span.
pub fn bracket_render(sentence: &Sentence, spans: &[ChunkSpan]) -> Result<String, CorpusError> {
    let sorted = check_spans(spans, sentence.len())?;
    let mut parts: Vec<String> = Vec::with_capacity(sentence.len() + 2 * sorted.len());
    let mut next = sorted.iter().peekable();
    let mut open_end: Option<usize> = None;
    for (i, tok) in sentence.tokens.iter().enumerate() {
        if open_end == Some(i) {
            parts.push(")".to_string());
            open_end = None;
        }
        if let Some(s) = next.peek() {
            if s.start == i {
                parts.push("(".to_string());
                open_end = Some(s.end);
                next.next();
            }
        }
        parts.push(format!("{}_{}", tok.word, tok.pos));
    }
    if open_end.is_some() {
        parts.push(")".to_string());
    }
    Ok(parts.join(" "))
}

/// Inverse of [`bracket_render`].
pub fn bracket_parse(
    id: SentenceId,
    text: &str,
) -> Result<(Sentence, Vec<ChunkSpan>), CorpusError> {
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for part in text.split_whitespace() {
        match part {
            "(" => {
                if open.is_some() {
                    return Err(CorpusError::Bracket {
                        pos: tokens.len(),
                        msg: "nested",
                    });
                }
                open = Some(tokens.len());
            }
            ")" => match open.take() {
                Some(s) if s < tokens.len() => spans.push(ChunkSpan::new(s, tokens.len())),
                Some(_) => {
                    return Err(CorpusError::Bracket {
                        pos: tokens.len(),
                        msg: "empty brackets",
                    })
                }
                None => {
                    return Err(CorpusError::Bracket {
                        pos: tokens.len(),
                        msg: "unbalanced `)`",
                    })
                }
            },
            tok => {
                let t = split_word_pos(tok)?;
                if t.pos.contains('_') {
                    return Err(CorpusError::MalformedToken(tok.to_string()));
                }
                tokens.push(t);
            }
        }
    }
    if open.is_some() {
        return Err(CorpusError::Bracket {
            pos: tokens.len(),
            msg: "unbalanced `(`",
        });
    }
    if tokens.is_empty() {
        return Err(CorpusError::EmptySentence);
    }
    Ok((Sentence::new(id, tokens), spans))
}

/// Pairs a labeling with a sentence after checking their lengths agree.
pub fn check_aligned(sentence: &Sentence, labeling: &Labeling) -> Result<(), CorpusError> {
    if sentence.len() != labeling.len() {
        return Err(CorpusError::LengthMismatch {
            tags: labeling.len(),
            tokens: sentence.len(),
        });
    }
    Ok(())
}

/// Total number of tokens over a set of sentences.
pub fn word_count<'a, I: IntoIterator<Item = &'a Sentence>>(sentences: I) -> usize {
    sentences.into_iter().map(Sentence::len).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use ChunkTag::*;

    #[test]
    fn parses_table_example() {
        let parsed = parse_conll("The DT I\nman NN I\nran VBD O\n. . O\n\n").unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].1.spans(), vec![ChunkSpan::new(0, 2)]);
        assert_eq!(parsed[0].0.tokens[2], Token::new("ran", "VBD"));
    }

    #[test]
    fn empty_input_gives_no_sentences() {
        assert!(parse_conll("").unwrap().is_empty());
        assert!(parse_conll("\n\n").unwrap().is_empty());
    }

    #[test]
    fn initial_b_is_normalized() {
        let parsed = parse_conll("a DT B\n").unwrap();
        assert_eq!(parsed[0].1.tags(), &[I]);
        let parsed = parse_conll("a DT O\nb NN B\nc NN B\n").unwrap();
        assert_eq!(parsed[0].1.tags(), &[O, I, B]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        assert_eq!(
            parse_conll("a DT I\nb NN\n"),
            Err(CorpusError::FieldCount { line: 2, found: 2 })
        );
        assert_eq!(
            parse_conll("a DT I extra\n"),
            Err(CorpusError::FieldCount { line: 1, found: 4 })
        );
        assert_eq!(
            parse_conll("a DT I\n\nb NN X\n"),
            Err(CorpusError::UnknownTag {
                line: 3,
                tag: "X".into()
            })
        );
        assert!(matches!(
            parse_conll("a D_T I\n"),
            Err(CorpusError::UnderscorePos { line: 1, .. })
        ));
    }

    #[test]
    fn tab_separated_columns() {
        let parsed = parse_conll("a\tDT\tI\r\nb\tNN\tI\n").unwrap();
        assert_eq!(parsed[0].1.spans(), vec![ChunkSpan::new(0, 2)]);
    }

    #[test]
    fn emit_single_token() {
        let s = Sentence::from_tagged(0, "a_DT").unwrap();
        let l = Labeling::from_spans(&[ChunkSpan::new(0, 1)], 1).unwrap();
        assert_eq!(emit_conll([(&s, &l)]), "a DT I\n\n");
    }

    #[test]
    fn emit_adjacent_chunks() {
        let s = Sentence::from_tagged(0, "a_DT b_NN").unwrap();
        let l = Labeling::from_spans(&[ChunkSpan::new(0, 1), ChunkSpan::new(1, 2)], 2).unwrap();
        assert_eq!(emit_conll([(&s, &l)]), "a DT I\nb NN B\n\n");
    }

    #[test]
    fn iob_span_examples() {
        assert_eq!(
            iob_to_spans(&[I, I, O, O]).unwrap(),
            vec![ChunkSpan::new(0, 2)]
        );
        assert_eq!(
            iob_to_spans(&[I, B, I]).unwrap(),
            vec![ChunkSpan::new(0, 1), ChunkSpan::new(1, 3)]
        );
        assert!(iob_to_spans(&[O, O]).unwrap().is_empty());
        assert_eq!(iob_to_spans(&[O, B]), Err(CorpusError::InvalidIob(1)));
        assert_eq!(iob_to_spans(&[B]), Err(CorpusError::InvalidIob(0)));
    }

    #[test]
    fn span_iob_examples() {
        assert_eq!(spans_to_iob(&[], 3).unwrap(), vec![O, O, O]);
        assert_eq!(
            spans_to_iob(&[ChunkSpan::new(0, 2)], 4).unwrap(),
            vec![I, I, O, O]
        );
        assert_eq!(
            spans_to_iob(&[ChunkSpan::new(1, 2), ChunkSpan::new(0, 1)], 2).unwrap(),
            vec![I, B]
        );
        assert!(matches!(
            spans_to_iob(&[ChunkSpan::new(0, 3), ChunkSpan::new(1, 2)], 3),
            Err(CorpusError::SpanOverlap(..))
        ));
        assert!(matches!(
            spans_to_iob(&[ChunkSpan::new(2, 5)], 3),
            Err(CorpusError::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn bracket_moving_example() {
        let s = Sentence::from_tagged(0, "about_IN $_$ 5_CD").unwrap();
        let text = bracket_render(&s, &[ChunkSpan::new(1, 3)]).unwrap();
        assert_eq!(text, "about_IN ( $_$ 5_CD )");
        let (s2, spans) = bracket_parse(0, &text).unwrap();
        assert_eq!(s2, s);
        assert_eq!(spans, vec![ChunkSpan::new(1, 3)]);
    }

    #[test]
    fn bracket_errors() {
        assert!(matches!(
            bracket_parse(0, "( a_DT ( b_NN ) )"),
            Err(CorpusError::Bracket { msg: "nested", .. })
        ));
        assert!(bracket_parse(0, "( a_DT").is_err());
        assert!(bracket_parse(0, "a_DT )").is_err());
        assert!(bracket_parse(0, "( ) a_DT").is_err());
        assert!(bracket_parse(0, "a").is_err());
    }

    #[test]
    fn underscore_in_word_is_kept() {
        let (s, _) = bracket_parse(0, "a_b_NN").unwrap();
        assert_eq!(s.tokens[0], Token::new("a_b", "NN"));
        let s2 = Sentence::from_tagged(0, "._.").unwrap();
        assert_eq!(s2.tokens[0], Token::new(".", "."));
    }
}
