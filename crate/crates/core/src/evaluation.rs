//! Exact-match / token-F1 scoring, per-relation aggregation, error
//! categories, and conversion of relation-classification data into
//! slot-filling pairs.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Serialize, Serializer};

use crate::model::{is_punctuation, EntityContextPair, ExtractionResult, ModelError, Span, TokenSequence};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Why a prediction differs from the gold answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ErrorClass {
    ExactMatch,
    NoOverlap,
    /// Overlapping prediction longer than the gold span by 1, 2, or 3+
    /// (stored as 3) tokens.
    LongerBy(usize),
    ShorterOrShifted,
    /// Answered where the gold answer is "no answer".
    ShouldReject,
    /// Rejected where a gold answer exists.
    ShouldAccept,
}

impl ErrorClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ExactMatch => "exact_match",
            Self::NoOverlap => "no_overlap",
            Self::LongerBy(1) => "longer_by_1",
            Self::LongerBy(2) => "longer_by_2",
            Self::LongerBy(_) => "longer_by_3+",
            Self::ShorterOrShifted => "shorter_or_shifted",
            Self::ShouldReject => "should_reject",
            Self::ShouldAccept => "should_accept",
        }
    }
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ErrorClass {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredExample {
    pub em: f64,
    pub f1: f64,
    pub error_class: ErrorClass,
}

/// Lowercases and drops punctuation-only tokens and English articles.
pub fn normalize(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| t.to_lowercase())
        .filter(|t| !is_punctuation(t) && !ARTICLES.contains(&t.as_str()))
        .collect()
}

/// Harmonic mean of token-multiset precision and recall.
pub fn token_f1(prediction: &[String], gold: &[String]) -> f64 {
    if prediction.is_empty() || gold.is_empty() {
        return if prediction.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in prediction {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / prediction.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn score(prediction: &ExtractionResult, gold: &ExtractionResult) -> ScoredExample {
    let (pred, gold) = match (prediction.text(), gold.text()) {
        (None, None) => {
            return ScoredExample {
                em: 1.0,
                f1: 1.0,
                error_class: ErrorClass::ExactMatch,
            }
        }
        (Some(_), None) => {
            return ScoredExample {
                em: 0.0,
                f1: 0.0,
                error_class: ErrorClass::ShouldReject,
            }
        }
        (None, Some(_)) => {
            return ScoredExample {
                em: 0.0,
                f1: 0.0,
                error_class: ErrorClass::ShouldAccept,
            }
        }
        (Some(p), Some(g)) => (p, g),
    };
    let (np, ng) = (normalize(pred), normalize(gold));
    if np == ng {
        return ScoredExample {
            em: 1.0,
            f1: 1.0,
            error_class: ErrorClass::ExactMatch,
        };
    }
    let f1 = token_f1(&np, &ng);
    let error_class = if f1 == 0.0 {
        ErrorClass::NoOverlap
    } else if pred.len() > gold.len() {
        ErrorClass::LongerBy((pred.len() - gold.len()).min(3))
    } else {
        ErrorClass::ShorterOrShifted
    };
    ScoredExample {
        em: 0.0,
        f1,
        error_class,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationReport {
    pub relation_id: String,
    pub examples: usize,
    pub mean_em: f64,
    pub mean_f1: f64,
    pub error_histogram: BTreeMap<ErrorClass, usize>,
}

/// Per-relation reports plus the unweighted mean of relation means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub relations: Vec<RelationReport>,
    pub macro_em: f64,
    pub macro_f1: f64,
}

pub fn aggregate(grouped: &BTreeMap<String, Vec<ScoredExample>>) -> EvaluationReport {
    let mut relations = Vec::new();
    for (relation_id, examples) in grouped {
        if examples.is_empty() {
            log::warn!("relation {relation_id:?} has no scored examples; skipped");
            continue;
        }
        let n = examples.len() as f64;
        let mut error_histogram = BTreeMap::new();
        for e in examples {
            *error_histogram.entry(e.error_class).or_insert(0) += 1;
        }
        relations.push(RelationReport {
            relation_id: relation_id.clone(),
            examples: examples.len(),
            mean_em: examples.iter().map(|e| e.em).sum::<f64>() / n,
            mean_f1: examples.iter().map(|e| e.f1).sum::<f64>() / n,
            error_histogram,
        });
    }
    let (macro_em, macro_f1) = if relations.is_empty() {
        (0.0, 0.0)
    } else {
        let n = relations.len() as f64;
        (
            relations.iter().map(|r| r.mean_em).sum::<f64>() / n,
            relations.iter().map(|r| r.mean_f1).sum::<f64>() / n,
        )
    };
    EvaluationReport {
        relations,
        macro_em,
        macro_f1,
    }
}

impl EvaluationReport {
    /// Aligned-column text rendering.
    pub fn to_table(&self) -> String {
        let width = self
            .relations
            .iter()
            .map(|r| r.relation_id.len())
            .chain(std::iter::once("MACRO".len()))
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}  errors", "relation", "n", "EM", "F1");
        for r in &self.relations {
            let errors: Vec<String> = r
                .error_histogram
                .iter()
                .filter(|(c, _)| **c != ErrorClass::ExactMatch)
                .map(|(c, n)| format!("{c}={n}"))
                .collect();
            let _ = writeln!(
                out,
                "{:<width$}  {:>8}  {:>8.4}  {:>8.4}  {}",
                r.relation_id,
                r.examples,
                r.mean_em,
                r.mean_f1,
                errors.join(" ")
            );
        }
        let total: usize = self.relations.iter().map(|r| r.examples).sum();
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8.4}  {:>8.4}", "MACRO", total, self.macro_em, self.macro_f1);
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("relation,examples,mean_em,mean_f1\n");
        for r in &self.relations {
            let _ = writeln!(out, "{},{},{},{}", r.relation_id, r.examples, r.mean_em, r.mean_f1);
        }
        out
    }
}

/// A relation-classification example: subject, relation label, object span
/// and context.
#[derive(Debug, Clone, PartialEq, Eq, serde::Deserialize, Serialize)]
pub struct ClassificationExample {
    pub subject: Vec<String>,
    pub relation: String,
    pub object: (usize, usize),
    pub context: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedDataset {
    pub pairs: Vec<EntityContextPair>,
    /// No-relation examples whose head entity appears in no relation.
    pub dropped: usize,
}

/// Turns relation-classification examples into slot-filling pairs.
///
/// Positive examples keep their object as the gold answer. Each example
/// labelled `no_relation_label` is assigned to a relation whose positives
/// share its head entity, cycling through those relations in order of first
/// appearance, with "no answer" as gold. Output follows input order.
pub fn adapt_relation_classification(
    examples: &[ClassificationExample],
    no_relation_label: &str,
) -> Result<AdaptedDataset, ModelError> {
    let mut relations_by_head: HashMap<&[String], Vec<&str>> = HashMap::new();
    for ex in examples.iter().filter(|e| e.relation != no_relation_label) {
        let rels = relations_by_head.entry(&ex.subject).or_default();
        if !rels.contains(&ex.relation.as_str()) {
            rels.push(&ex.relation);
        }
    }

    let mut next: HashMap<&[String], usize> = HashMap::new();
    let mut pairs = Vec::new();
    let mut dropped = 0;
    for ex in examples {
        let subject = TokenSequence::new(ex.subject.clone());
        let context = TokenSequence::new(ex.context.clone());
        if ex.relation != no_relation_label {
            let span = Span::new(ex.object.0, ex.object.1)?;
            let gold = ExtractionResult::answer(span, &context)?;
            pairs.push(EntityContextPair::new(&ex.relation, subject, context)?.with_gold(gold)?);
            continue;
        }
        match relations_by_head.get(ex.subject.as_slice()) {
            Some(rels) => {
                let slot = next.entry(&ex.subject).or_insert(0);
                let relation = rels[*slot % rels.len()];
                *slot += 1;
                pairs.push(EntityContextPair::new(relation, subject, context)?.with_gold(ExtractionResult::NoAnswer)?);
            }
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} no-relation examples with unmatched head entities");
    }
    Ok(AdaptedDataset { pairs, dropped })
}
