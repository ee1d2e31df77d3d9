#![allow(dead_code)]

use std::path::Path;

use tetrad_core::{EncoderConfig, Tokenizer};
use tetrad_data::{load_or_build, synth_corpus, unify_records, EmbeddingTable, TargetVariant, TemplateUnifier};
use tetrad_train::{build_tokenizer, Datasets};

pub struct Fixture {
    pub datasets: Datasets,
    pub table: EmbeddingTable,
    pub tokenizer: Tokenizer,
    pub encoder: EncoderConfig,
}

/// Synthetic corpus of `count` records, template-unified, with cached
/// embeddings and a vocabulary over every pair.
pub fn fixture(root: &Path, count: usize, test_fraction: f64) -> Fixture {
    let raw = synth_corpus(root, 7, count, test_fraction).unwrap();
    let records = unify_records(&raw, &TemplateUnifier).unwrap();
    let encoder = EncoderConfig::default();
    let table = load_or_build(root, &records, &encoder).unwrap();
    let datasets = Datasets::build(&records, &TemplateUnifier, TargetVariant::Full, 7).unwrap();
    let tokenizer = build_tokenizer(datasets.all(), 2048).unwrap();
    Fixture { datasets, table, tokenizer, encoder }
}
