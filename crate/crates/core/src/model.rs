//! Domain types shared by every stage of the extraction pipeline.
//!
//! A relation is represented by a cloze template. Each candidate piece of
//! evidence is an [`EntityContextPair`]: a subject mention plus a tokenized
//! context. The engine answers every pair with an [`ExtractionResult`], which
//! is either a token span of the context or an explicit "no answer".

use std::fmt;
use std::ops::Deref;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Surface form of the subject placeholder in template files.
pub const SUBJECT_PLACEHOLDER: &str = "[SUB]";
/// Surface form of the object placeholder in template files.
pub const OBJECT_PLACEHOLDER: &str = "[OBJ]";

static PUNCTUATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\p{P}+$").unwrap());

/// True iff the token is non-empty and every character is in a Unicode
/// punctuation category (Pc, Pd, Ps, Pe, Pi, Pf, Po).
pub fn is_punctuation(token: &str) -> bool {
    PUNCTUATION.is_match(token)
}

pub(crate) fn is_punctuation_char(c: char) -> bool {
    let mut buf = [0u8; 4];
    is_punctuation(c.encode_utf8(&mut buf))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("span [{start}, {end}) is empty or reversed")]
    InvalidSpan { start: usize, end: usize },
    #[error("span [{start}, {end}) exceeds context length {len}")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("annotations [{0}, {1}) and [{2}, {3}) overlap")]
    OverlappingAnnotations(usize, usize, usize, usize),
    #[error("relation id must be non-empty")]
    EmptyRelationId,
    #[error("answer text does not match the context tokens it addresses")]
    AnswerTextMismatch,
}

/// An ordered list of whitespace-level surface tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        Self(tokens)
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }
}

impl Deref for TokenSequence {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

impl From<Vec<String>> for TokenSequence {
    fn from(tokens: Vec<String>) -> Self {
        Self(tokens)
    }
}

impl From<&[&str]> for TokenSequence {
    fn from(tokens: &[&str]) -> Self {
        tokens.iter().copied().collect()
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Half-open token range `[start, end)` over a context, optionally labelled
/// with an entity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Span {
    start: usize,
    end: usize,
    label: Option<String>,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self, ModelError> {
        if start >= end {
            return Err(ModelError::InvalidSpan { start, end });
        }
        Ok(Self {
            start,
            end,
            label: None,
        })
    }

    pub fn labelled(start: usize, end: usize, label: impl Into<String>) -> Result<Self, ModelError> {
        let mut span = Self::new(start, end)?;
        span.label = Some(label.into());
        Ok(span)
    }

    /// The span `[position, position + 1)`.
    pub fn single(position: usize) -> Self {
        Self {
            start: position,
            end: position + 1,
            label: None,
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, position: usize) -> bool {
        self.start <= position && position < self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn check_bounds(&self, len: usize) -> Result<(), ModelError> {
        if self.end > len {
            return Err(ModelError::SpanOutOfBounds {
                start: self.start,
                end: self.end,
                len,
            });
        }
        Ok(())
    }
}

/// Either a span of the context or the explicit "no answer" value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractionResult {
    Answer { span: Span, text: TokenSequence },
    NoAnswer,
}

impl ExtractionResult {
    /// Builds an answer whose text is read off `context` at `span`.
    pub fn answer(span: Span, context: &[String]) -> Result<Self, ModelError> {
        span.check_bounds(context.len())?;
        let text = context[span.start..span.end].iter().cloned().collect();
        Ok(Self::Answer { span, text })
    }

    pub fn is_answer(&self) -> bool {
        matches!(self, Self::Answer { .. })
    }

    pub fn span(&self) -> Option<&Span> {
        match self {
            Self::Answer { span, .. } => Some(span),
            Self::NoAnswer => None,
        }
    }

    pub fn text(&self) -> Option<&TokenSequence> {
        match self {
            Self::Answer { text, .. } => Some(text),
            Self::NoAnswer => None,
        }
    }

    /// Checks that the answer text equals the context tokens at its span.
    pub fn check_against(&self, context: &[String]) -> Result<(), ModelError> {
        if let Self::Answer { span, text } = self {
            span.check_bounds(context.len())?;
            if context[span.start..span.end] != text[..] {
                return Err(ModelError::AnswerTextMismatch);
            }
        }
        Ok(())
    }
}

/// A relation template: tokens with exactly one subject and one object
/// placeholder. Built by [`crate::templating::parse_template`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClozeTemplate {
    pub(crate) tokens: TokenSequence,
    pub(crate) subject_index: usize,
    pub(crate) object_index: usize,
}

impl ClozeTemplate {
    pub fn tokens(&self) -> &TokenSequence {
        &self.tokens
    }

    pub fn subject_index(&self) -> usize {
        self.subject_index
    }

    pub fn object_index(&self) -> usize {
        self.object_index
    }
}

impl fmt::Display for ClozeTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.tokens.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    id: String,
    template: ClozeTemplate,
}

impl Relation {
    pub fn new(id: impl Into<String>, template: ClozeTemplate) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ModelError::EmptyRelationId);
        }
        Ok(Self { id, template })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn template(&self) -> &ClozeTemplate {
        &self.template
    }
}

/// One candidate `(entity, context)` for a relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityContextPair {
    relation_id: String,
    entity: TokenSequence,
    context: TokenSequence,
    gold: Option<ExtractionResult>,
    entity_annotations: Option<Vec<Span>>,
}

impl EntityContextPair {
    pub fn new(
        relation_id: impl Into<String>,
        entity: TokenSequence,
        context: TokenSequence,
    ) -> Result<Self, ModelError> {
        let relation_id = relation_id.into();
        if relation_id.is_empty() {
            return Err(ModelError::EmptyRelationId);
        }
        Ok(Self {
            relation_id,
            entity,
            context,
            gold: None,
            entity_annotations: None,
        })
    }

    pub fn with_gold(mut self, gold: ExtractionResult) -> Result<Self, ModelError> {
        gold.check_against(&self.context)?;
        self.gold = Some(gold);
        Ok(self)
    }

    /// Attaches precomputed entity spans. They must be in bounds and pairwise
    /// disjoint; they are stored sorted by start.
    pub fn with_annotations(mut self, mut spans: Vec<Span>) -> Result<Self, ModelError> {
        for span in &spans {
            span.check_bounds(self.context.len())?;
        }
        spans.sort_by_key(|s| (s.start, s.end));
        for w in spans.windows(2) {
            if w[0].overlaps(&w[1]) {
                return Err(ModelError::OverlappingAnnotations(
                    w[0].start, w[0].end, w[1].start, w[1].end,
                ));
            }
        }
        self.entity_annotations = Some(spans);
        Ok(self)
    }

    pub fn relation_id(&self) -> &str {
        &self.relation_id
    }

    pub fn entity(&self) -> &TokenSequence {
        &self.entity
    }

    pub fn context(&self) -> &TokenSequence {
        &self.context
    }

    pub fn gold(&self) -> Option<&ExtractionResult> {
        self.gold.as_ref()
    }

    pub fn annotations(&self) -> &[Span] {
        self.entity_annotations.as_deref().unwrap_or(&[])
    }

    pub fn has_annotations(&self) -> bool {
        self.entity_annotations.is_some()
    }
}

/// The query `[c, t(e)]` with the object placeholder replaced by the
/// provider's mask token. Built by [`crate::templating::build_query`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClozeQuery {
    pub(crate) tokens: TokenSequence,
    pub(crate) context_len: usize,
    pub(crate) mask_index: usize,
}

impl ClozeQuery {
    pub fn tokens(&self) -> &TokenSequence {
        &self.tokens
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn mask_index(&self) -> usize {
        self.mask_index
    }

    pub fn context(&self) -> &[String] {
        &self.tokens[..self.context_len]
    }

    pub fn mask_token(&self) -> &str {
        &self.tokens[self.mask_index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: &[&str]) -> TokenSequence {
        tokens.into()
    }

    #[test]
    fn punctuation_classes() {
        assert!(is_punctuation("."));
        assert!(is_punctuation(",;!?"));
        assert!(is_punctuation("—"));
        assert!(is_punctuation("«"));
        assert!(!is_punctuation(""));
        assert!(!is_punctuation("a."));
        // Symbols are not punctuation.
        assert!(!is_punctuation("$"));
        assert!(!is_punctuation("+"));
    }

    #[test]
    fn span_validation() {
        assert!(Span::new(2, 2).is_err());
        assert!(Span::new(3, 2).is_err());
        let s = Span::new(1, 3).unwrap();
        assert!(s.contains(1) && s.contains(2) && !s.contains(3));
        assert_eq!(s.check_bounds(2), Err(ModelError::SpanOutOfBounds { start: 1, end: 3, len: 2 }));
    }

    #[test]
    fn annotations_must_not_overlap() {
        let pair = EntityContextPair::new("r", seq(&["e"]), seq(&["a", "b", "c", "d"])).unwrap();
        let err = pair
            .clone()
            .with_annotations(vec![Span::new(0, 2).unwrap(), Span::new(1, 3).unwrap()])
            .unwrap_err();
        assert_eq!(err, ModelError::OverlappingAnnotations(0, 2, 1, 3));
        let err = pair.clone().with_annotations(vec![Span::new(3, 5).unwrap()]).unwrap_err();
        assert!(matches!(err, ModelError::SpanOutOfBounds { .. }));
        let ok = pair
            .with_annotations(vec![Span::new(2, 4).unwrap(), Span::new(0, 2).unwrap()])
            .unwrap();
        assert_eq!(ok.annotations()[0].start(), 0);
    }

    #[test]
    fn gold_text_must_match_context() {
        let ctx = seq(&["New", "York", "City"]);
        let ans = ExtractionResult::answer(Span::new(0, 2).unwrap(), &ctx).unwrap();
        assert_eq!(ans.text().unwrap(), &seq(&["New", "York"]));
        let bad = ExtractionResult::Answer {
            span: Span::new(0, 1).unwrap(),
            text: seq(&["York"]),
        };
        let pair = EntityContextPair::new("r", seq(&["e"]), ctx).unwrap();
        assert_eq!(pair.with_gold(bad).unwrap_err(), ModelError::AnswerTextMismatch);
    }

    #[test]
    fn empty_relation_id_rejected() {
        assert_eq!(
            EntityContextPair::new("", seq(&["e"]), seq(&["c"])).unwrap_err(),
            ModelError::EmptyRelationId
        );
    }
}
