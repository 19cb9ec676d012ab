//! Shared inputs for the benchmarks.

use std::path::{Path, PathBuf};

use rooster_core::corpus::{load_corpus, LemmaRecord};
use rooster_core::model::{load_checkpoint, Model};

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// The 100 lemmas of the bundled corpus, in document order.
pub fn bundled_records() -> Vec<LemmaRecord> {
    load_corpus(&data_dir().join("bundled"))
        .expect("bundled corpus loads")
        .into_iter()
        .flat_map(|d| d.records)
        .collect()
}

pub fn fixture_model() -> Model {
    load_checkpoint(&data_dir().join("fixtures/model.ckpt")).expect("fixture checkpoint loads")
}
