//! Deterministic template corpora for tests and desk-scale experiments.
//!
//! Each category owns a disjoint pool of content words; all categories share
//! one pool of function words. Context and response of a pair are drawn from
//! the same category.

use std::collections::BTreeMap;

use rand::Rng;

use super::{CorpusError, LabelTaxonomy, RawExchange};

pub const SYNTH_LABEL: &str = "topic";

pub const SYNTH_CATEGORY_NAMES: [&str; 5] = ["weather", "food", "music", "travel", "sport"];

pub const FUNCTION_WORDS: [&str; 10] = ["the", "a", "is", "and", "to", "of", "it", "i", "you", "that"];

pub const CONTENT_POOLS: [[&str; 15]; 5] = [
    [
        "rain", "sunny", "cloud", "storm", "wind", "snow", "cold", "warm", "fog", "thunder",
        "breeze", "humid", "frost", "drizzle", "forecast",
    ],
    [
        "pizza", "bread", "soup", "salad", "cheese", "pasta", "rice", "apple", "spicy", "sweet",
        "dinner", "lunch", "cook", "bake", "recipe",
    ],
    [
        "guitar", "song", "piano", "drum", "melody", "concert", "band", "jazz", "rhythm", "sing",
        "album", "violin", "chorus", "tune", "lyrics",
    ],
    [
        "flight", "hotel", "beach", "train", "passport", "island", "luggage", "tour", "map",
        "airport", "journey", "ticket", "cruise", "border", "abroad",
    ],
    [
        "soccer", "tennis", "goal", "coach", "team", "match", "score", "league", "stadium",
        "referee", "sprint", "trophy", "player", "tackle", "season",
    ],
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub exchanges: Vec<RawExchange>,
    pub taxonomy: LabelTaxonomy,
}

fn sentence<R: Rng>(rng: &mut R, pool: &[&str; 15]) -> String {
    let len = rng.random_range(4..=7);
    let forced = rng.random_range(0..len);
    (0..len)
        .map(|i| {
            if i == forced || rng.random_bool(0.5) {
                pool[rng.random_range(0..pool.len())]
            } else {
                FUNCTION_WORDS[rng.random_range(0..FUNCTION_WORDS.len())]
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `pairs_per_category` pairs for each of `num_categories` categories,
/// interleaved category by category.
pub fn synth_corpus(
    num_categories: usize,
    pairs_per_category: usize,
    seed: u64,
) -> Result<SynthCorpus, CorpusError> {
    if !(2..=CONTENT_POOLS.len()).contains(&num_categories) {
        return Err(CorpusError::Taxonomy(format!(
            "synthetic corpora support 2..=5 categories, got {num_categories}"
        )));
    }
    let taxonomy = LabelTaxonomy::identity(SYNTH_LABEL, &SYNTH_CATEGORY_NAMES[..num_categories]);
    let mut rng = crate::rng::stream(seed, "synth-corpus");
    let mut exchanges = Vec::with_capacity(num_categories * pairs_per_category);
    for _ in 0..pairs_per_category {
        for (k, pool) in CONTENT_POOLS.iter().enumerate().take(num_categories) {
            let context = sentence(&mut rng, pool);
            let response = sentence(&mut rng, pool);
            let mut labels = BTreeMap::new();
            labels.insert(SYNTH_LABEL.to_string(), k);
            exchanges.push(RawExchange {
                context,
                response,
                labels,
            });
        }
    }
    Ok(SynthCorpus {
        exchanges,
        taxonomy,
    })
}
