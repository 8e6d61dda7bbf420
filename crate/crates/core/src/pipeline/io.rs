//! File formats: templates, dataset JSONL, extractions JSONL.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use super::PipelineError;
use crate::model::{EntityContextPair, ExtractionResult, ModelError, Relation, Span, TokenSequence};
use crate::templating::parse_template;

/// Parses `<relation_id>\t<template>` lines. Blank lines and lines starting
/// with `#` are ignored.
pub fn parse_templates(text: &str) -> Result<BTreeMap<String, Relation>, PipelineError> {
    let mut relations = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, raw) = line
            .split_once('\t')
            .ok_or_else(|| PipelineError::data(format!("templates line {line_no}: expected <relation>\\t<template>")))?;
        let id = id.trim();
        let template = parse_template(raw)
            .map_err(|e| PipelineError::data(format!("templates line {line_no}: {e}")))?;
        let relation = Relation::new(id, template)
            .map_err(|e| PipelineError::data(format!("templates line {line_no}: {e}")))?;
        if relations.insert(id.to_string(), relation).is_some() {
            return Err(PipelineError::data(format!(
                "templates line {line_no}: duplicate relation {id:?}"
            )));
        }
    }
    Ok(relations)
}

pub fn load_templates(path: &Path) -> Result<BTreeMap<String, Relation>, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))?;
    parse_templates(&text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub span: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// One line of a dataset file. `gold: null` means "no answer"; a missing
/// `gold` key means unlabeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub relation: String,
    pub subject: Vec<String>,
    pub context: Vec<String>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        deserialize_with = "present"
    )]
    pub gold: Option<Option<GoldRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<AnnotationRecord>>,
}

/// Distinguishes an explicit `null` from an absent key.
fn present<'de, D, T>(deserializer: D) -> Result<Option<Option<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(deserializer).map(Some)
}

impl DatasetRecord {
    pub fn from_pair(pair: &EntityContextPair) -> Self {
        Self {
            relation: pair.relation_id().to_string(),
            subject: pair.entity().to_vec(),
            context: pair.context().to_vec(),
            gold: pair.gold().map(|g| {
                g.span().map(|s| GoldRecord {
                    span: [s.start(), s.end()],
                })
            }),
            annotations: pair.has_annotations().then(|| {
                pair.annotations()
                    .iter()
                    .map(|s| AnnotationRecord {
                        start: s.start(),
                        end: s.end(),
                        label: s.label().map(str::to_string),
                    })
                    .collect()
            }),
        }
    }

    pub fn into_pair(self) -> Result<EntityContextPair, ModelError> {
        let context = TokenSequence::new(self.context);
        let mut pair = EntityContextPair::new(self.relation, TokenSequence::new(self.subject), context.clone())?;
        if let Some(gold) = self.gold {
            let gold = match gold {
                None => ExtractionResult::NoAnswer,
                Some(GoldRecord { span: [s, e] }) => ExtractionResult::answer(Span::new(s, e)?, &context)?,
            };
            pair = pair.with_gold(gold)?;
        }
        if let Some(annotations) = self.annotations {
            let spans = annotations
                .into_iter()
                .map(|a| match a.label {
                    Some(label) => Span::labelled(a.start, a.end, label),
                    None => Span::new(a.start, a.end),
                })
                .collect::<Result<Vec<_>, _>>()?;
            pair = pair.with_annotations(spans)?;
        }
        Ok(pair)
    }
}

pub fn parse_dataset<R: BufRead>(reader: R, origin: &str) -> Result<Vec<EntityContextPair>, PipelineError> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::data(format!("{origin}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| PipelineError::data(format!("{origin} line {}: {e}", i + 1)))?;
        let pair = record
            .into_pair()
            .map_err(|e| PipelineError::data(format!("{origin} line {}: {e}", i + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EntityContextPair>, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))?;
    parse_dataset(BufReader::new(file), &path.display().to_string())
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable record"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub span: [usize; 2],
    pub text: Vec<String>,
}

/// One line of the extractions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub relation: String,
    pub subject: Vec<String>,
    pub prediction: Option<PredictionRecord>,
    pub anchor: Option<usize>,
    pub rejected: bool,
    /// Rejection score; null when rejection is off or the pair was
    /// unscorable.
    pub score: Option<f64>,
}

impl ExtractionRecord {
    pub fn prediction_result(&self) -> ExtractionResult {
        match &self.prediction {
            None => ExtractionResult::NoAnswer,
            Some(p) => ExtractionResult::Answer {
                span: Span::new(p.span[0], p.span[1]).unwrap_or_else(|_| Span::single(p.span[0])),
                text: TokenSequence::new(p.text.clone()),
            },
        }
    }
}
