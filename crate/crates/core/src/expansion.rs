//! Expansion of a single-token anchor to the entity span that contains it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ExtractionResult, ModelError, Span};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExpansionError {
    #[error("anchor position {position} outside context of length {len}")]
    AnchorOutOfBounds { position: usize, len: usize },
    #[error("{0} annotations contain anchor position {1}")]
    OverlappingAnnotations(usize, usize),
    #[error("no expansion flag for relation {0:?}")]
    UnknownRelation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionPolicy {
    Never,
    Always,
    PerRelation(BTreeMap<String, bool>),
}

impl ExpansionPolicy {
    pub fn resolve(&self, relation_id: &str) -> Result<bool, ExpansionError> {
        match self {
            Self::Never => Ok(false),
            Self::Always => Ok(true),
            Self::PerRelation(flags) => flags
                .get(relation_id)
                .copied()
                .ok_or_else(|| ExpansionError::UnknownRelation(relation_id.to_string())),
        }
    }
}

/// Returns the annotation span containing the anchor when expansion is on
/// and such a span exists; otherwise the anchor token alone.
pub fn expand(
    position: usize,
    context: &[String],
    annotations: &[Span],
    policy: &ExpansionPolicy,
    relation_id: &str,
) -> Result<ExtractionResult, ExpansionError> {
    if position >= context.len() {
        return Err(ExpansionError::AnchorOutOfBounds {
            position,
            len: context.len(),
        });
    }
    let mut span = Span::single(position);
    if policy.resolve(relation_id)? {
        let mut covering = annotations.iter().filter(|s| s.contains(position));
        if let Some(found) = covering.next() {
            let extra = covering.count();
            if extra > 0 {
                return Err(ExpansionError::OverlappingAnnotations(extra + 1, position));
            }
            span = Span::new(found.start(), found.end())?;
        }
    }
    Ok(ExtractionResult::answer(span, context)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn expands_to_covering_entity() {
        let context: Vec<String> = ["I", "love", "New", "York", "City", "."].iter().map(|s| s.to_string()).collect();
        let ann = vec![Span::labelled(2, 5, "GPE").unwrap()];
        let r = expand(3, &context, &ann, &ExpansionPolicy::Always, "r").unwrap();
        assert_eq!(r.span(), Some(&Span::new(2, 5).unwrap()));
        assert_eq!(r.text().unwrap().to_string(), "New York City");
    }

    #[test]
    fn falls_back_to_anchor() {
        let context = ctx(6);
        let r = expand(3, &context, &[Span::new(0, 2).unwrap()], &ExpansionPolicy::Always, "r").unwrap();
        assert_eq!(r.span(), Some(&Span::new(3, 4).unwrap()));
        let r = expand(3, &context, &[Span::new(2, 5).unwrap()], &ExpansionPolicy::Never, "r").unwrap();
        assert_eq!(r.span(), Some(&Span::new(3, 4).unwrap()));
    }

    #[test]
    fn per_relation_flags() {
        let policy = ExpansionPolicy::PerRelation([("on".to_string(), true), ("off".to_string(), false)].into());
        let ann = [Span::new(1, 3).unwrap()];
        let context = ctx(4);
        assert_eq!(expand(2, &context, &ann, &policy, "on").unwrap().span().unwrap().len(), 2);
        assert_eq!(expand(2, &context, &ann, &policy, "off").unwrap().span().unwrap().len(), 1);
        assert_eq!(
            expand(2, &context, &ann, &policy, "missing"),
            Err(ExpansionError::UnknownRelation("missing".into()))
        );
    }

    #[test]
    fn overlapping_annotations_surface() {
        let ann = [Span::new(0, 3).unwrap(), Span::new(2, 4).unwrap()];
        assert_eq!(
            expand(2, &ctx(5), &ann, &ExpansionPolicy::Always, "r"),
            Err(ExpansionError::OverlappingAnnotations(2, 2))
        );
    }

    #[test]
    fn anchor_out_of_bounds() {
        assert!(matches!(
            expand(5, &ctx(5), &[], &ExpansionPolicy::Never, "r"),
            Err(ExpansionError::AnchorOutOfBounds { .. })
        ));
    }

    fn disjoint_spans(len: usize) -> impl Strategy<Value = Vec<Span>> {
        prop::collection::vec((0..len, 1usize..4), 0..5).prop_map(move |raw| {
            let mut spans: Vec<Span> = Vec::new();
            for (start, width) in raw {
                let end = (start + width).min(len);
                let span = Span::new(start, end).unwrap();
                if spans.iter().all(|s| !s.overlaps(&span)) {
                    spans.push(span);
                }
            }
            spans
        })
    }

    proptest! {
        #[test]
        fn expansion_invariants(spans in disjoint_spans(12), position in 0usize..12, always in any::<bool>()) {
            let context = ctx(12);
            let policy = if always { ExpansionPolicy::Always } else { ExpansionPolicy::Never };
            let r = expand(position, &context, &spans, &policy, "r").unwrap();
            let span = r.span().unwrap().clone();
            prop_assert!(span.contains(position));
            if !always {
                prop_assert_eq!(span.len(), 1);
            }
            // idempotent: any position inside the result expands to the same span
            for p in span.start()..span.end() {
                let again = expand(p, &context, &spans, &policy, "r").unwrap();
                if always {
                    prop_assert_eq!(again.span().unwrap(), &span);
                }
            }
            r.check_against(&context).unwrap();
        }
    }
}
