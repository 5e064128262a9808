mod arpa;
mod beam;
mod greedy;
mod lexicon;
mod metrics;
pub mod wfst;

use serde::{Deserialize, Serialize};

pub use arpa::{load_arpa, read_arpa, save_arpa, NGramModel, SENTENCE_END, SENTENCE_START, UNKNOWN_WORD};
pub use beam::{prefix_beam_search, BeamConfig};
pub use greedy::{best_path, greedy_decode};
pub use lexicon::{load_lexicon, read_lexicon, save_lexicon, Lexicon, LexiconTrie};
pub use metrics::{edit_counts, edit_distance_metrics, EditCounts};
pub use wfst::{
    build_grammar_fst, build_lexicon_fst, build_token_fst, compose, shortest_path, viterbi_decode, DecodeGraph,
    TlgDecoder,
};

/// Decoder output. `units` is filled by unit-level decoders, `words` (ids
/// into the lexicon) by word-level ones; `score` is a natural-log total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub units: Vec<u32>,
    pub words: Vec<u32>,
    pub score: f64,
}
