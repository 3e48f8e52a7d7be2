//! Shared fixtures for the hot-path benchmarks.

use std::collections::HashMap;

use sensegram_core::corpus::build_vocab;
use sensegram_core::lexicon::build_sense_inventory;
use sensegram_core::model::{init_model, EmbeddingMatrices};
use sensegram_core::{SenseInventory, Vocab};

/// A Zipf-ish vocabulary of `types` words where every tenth word has
/// `senses` senses, plus matrices initialized the same way training does.
pub fn fixture(types: usize, dim: usize, senses: u32) -> (Vocab, SenseInventory, EmbeddingMatrices) {
    let mut tokens: Vec<String> = Vec::new();
    for i in 0..types {
        let count = 5 + (types - i) as u64;
        for _ in 0..count {
            tokens.push(format!("w{i}"));
        }
    }
    let vocab = build_vocab(&tokens, 1).expect("fixture vocab");
    let counts: HashMap<String, u32> =
        (0..types).step_by(10).map(|i| (format!("w{i}"), senses)).collect();
    let inventory = build_sense_inventory(&vocab, &counts, 8);
    let matrices = init_model(&vocab, &inventory, dim, 1234);
    (vocab, inventory, matrices)
}
