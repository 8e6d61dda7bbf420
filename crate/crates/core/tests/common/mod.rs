#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reflex::embeddings::{load_embeddings, EmbeddingTable};
use reflex::model::{EntityContextPair, ExtractionResult, Relation, Span, TokenSequence};
use reflex::pipeline::io::parse_templates;
use reflex::pipeline::{BackendConfig, DatasetRecord, RunConfig, Settings};
use reflex::provider::ReferenceFixture;

pub const RELATION: &str = "born_in";
pub const TEMPLATE: &str = "[SUB] born in [OBJ]";
pub const ANSWER: &str = "Paris";
pub const ANSWER_POSITION: usize = 3;

/// One relation whose rejection scores are set exactly by construction.
///
/// Template tokens `born` and `in` share the unit vector e1. Pair `i` has a
/// context word `ctx{i}` at cos(theta) e1 + sin(theta) e2, so its rejection
/// score is the requested value. Every other token is out of vocabulary.
/// The reference backend predicts `Paris` with a pinned vector, so the anchor
/// of every pair lands on the `Paris` token.
pub struct Synthetic {
    pub templates_text: String,
    pub embeddings_text: String,
    pub relations: BTreeMap<String, Relation>,
    pub pairs: Vec<EntityContextPair>,
    pub table: EmbeddingTable,
    pub fixture: ReferenceFixture,
    pub targets: Vec<f64>,
    pub valid: Vec<bool>,
}

pub fn scored(targets: &[f64], valid: &[bool]) -> Synthetic {
    assert_eq!(targets.len(), valid.len());
    let mut embeddings_text = format!("{} 3\nborn 1 0 0\nin 1 0 0\n", targets.len() + 2);
    let mut pairs = Vec::new();
    for (i, (&score, &ok)) in targets.iter().zip(valid).enumerate() {
        let sin = (1.0 - score * score).max(0.0).sqrt();
        embeddings_text.push_str(&format!("ctx{i} {score} {sin} 0\n"));
        let entity = format!("E{i}");
        let context: TokenSequence = [entity.as_str(), &format!("ctx{i}"), "near", ANSWER, "."].as_slice().into();
        let gold = if ok {
            ExtractionResult::answer(Span::single(ANSWER_POSITION), &context).unwrap()
        } else {
            ExtractionResult::NoAnswer
        };
        let pair = EntityContextPair::new(RELATION, vec![entity].into(), context)
            .unwrap()
            .with_gold(gold)
            .unwrap();
        pairs.push(pair);
    }
    let templates_text = format!("{RELATION}\t{TEMPLATE}\n");
    let mut vectors = BTreeMap::new();
    vectors.insert(ANSWER.to_string(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let fixture = ReferenceFixture {
        dimension: 8,
        seed: 5,
        vocab: [(ANSWER.to_string(), 3.0), (",".to_string(), 1.0)].into(),
        vectors,
    };
    Synthetic {
        relations: parse_templates(&templates_text).unwrap(),
        table: load_embeddings(embeddings_text.as_bytes()).unwrap(),
        templates_text,
        embeddings_text,
        pairs,
        fixture,
        targets: targets.to_vec(),
        valid: valid.to_vec(),
    }
}

/// 70 valid pairs scoring 0.8 +- 0.05 and 30 invalid pairs scoring
/// 0.1 +- 0.05, shuffled.
pub fn planted(seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut valid: Vec<bool> = (0..100).map(|i| i < 70).collect();
    valid.shuffle(&mut rng);
    let targets: Vec<f64> = valid
        .iter()
        .map(|&ok| {
            let center = if ok { 0.8 } else { 0.1 };
            center + rng.random_range(-0.05..0.05)
        })
        .collect();
    scored(&targets, &valid)
}

pub fn dataset_jsonl(pairs: &[EntityContextPair]) -> String {
    let records: Vec<DatasetRecord> = pairs.iter().map(DatasetRecord::from_pair).collect();
    reflex::pipeline::io::to_jsonl(&records)
}

/// Writes inputs for `syn` under `dir` and returns a config using them.
pub fn write_inputs(dir: &Path, syn: &Synthetic) -> RunConfig {
    std::fs::write(dir.join("templates.tsv"), &syn.templates_text).unwrap();
    std::fs::write(dir.join("vectors.vec"), &syn.embeddings_text).unwrap();
    std::fs::write(dir.join("data.jsonl"), dataset_jsonl(&syn.pairs)).unwrap();
    std::fs::write(dir.join("fixture.json"), serde_json::to_string(&syn.fixture).unwrap()).unwrap();
    RunConfig {
        templates_path: dir.join("templates.tsv"),
        dataset_path: dir.join("data.jsonl"),
        dev_dataset_path: None,
        embeddings_path: Some(dir.join("vectors.vec")),
        backend: BackendConfig::Reference(dir.join("fixture.json")),
        settings: Settings::default(),
        output_dir: dir.join("out"),
        dump_diagnostics: false,
        write_csv: false,
    }
}
