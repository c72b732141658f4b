use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{DialoguePair, EOS, PAD, SOS};

/// A padded mini-batch. Matrices are row-major `batch x max_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub size: usize,
    pub context_width: usize,
    pub response_width: usize,
    pub context: Vec<usize>,
    /// `[SOS, x_1 .. x_n, EOS, PAD ..]` per row
    pub response: Vec<usize>,
    pub context_lens: Vec<usize>,
    /// framed lengths, SOS and EOS included
    pub response_lens: Vec<usize>,
    pub labels: BTreeMap<String, Vec<usize>>,
}

impl Batch {
    /// Frames and pads `pairs` in the given order. Contexts keep at most
    /// `max_len` tokens, responses at most `max_len - 2` words.
    pub fn from_pairs(pairs: &[&DialoguePair], max_len: usize) -> Self {
        assert!(max_len >= 2, "max_len must be at least 2");
        let size = pairs.len();
        let context_lens: Vec<usize> = pairs.iter().map(|p| p.context.len().min(max_len)).collect();
        let response_lens: Vec<usize> = pairs
            .iter()
            .map(|p| p.response.len().min(max_len - 2) + 2)
            .collect();
        let context_width = context_lens.iter().copied().max().unwrap_or(0);
        let response_width = response_lens.iter().copied().max().unwrap_or(0);
        let mut context = vec![PAD; size * context_width];
        let mut response = vec![PAD; size * response_width];
        let mut labels: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (b, pair) in pairs.iter().enumerate() {
            let crow = &mut context[b * context_width..(b + 1) * context_width];
            crow[..context_lens[b]].copy_from_slice(&pair.context[..context_lens[b]]);
            let rrow = &mut response[b * response_width..(b + 1) * response_width];
            let words = response_lens[b] - 2;
            rrow[0] = SOS;
            rrow[1..=words].copy_from_slice(&pair.response[..words]);
            rrow[words + 1] = EOS;
            for (name, &id) in &pair.labels {
                labels.entry(name.clone()).or_insert_with(|| vec![usize::MAX; size])[b] = id;
            }
        }
        Self {
            size,
            context_width,
            response_width,
            context,
            response,
            context_lens,
            response_lens,
            labels,
        }
    }

    pub fn context_row(&self, b: usize) -> &[usize] {
        &self.context[b * self.context_width..(b + 1) * self.context_width]
    }

    pub fn response_row(&self, b: usize) -> &[usize] {
        &self.response[b * self.response_width..(b + 1) * self.response_width]
    }

    /// Label ids for `name`, one per row (`None` if any row lacks it).
    pub fn label_ids(&self, name: &str) -> Option<&[usize]> {
        let ids = self.labels.get(name)?;
        (!ids.contains(&usize::MAX)).then_some(ids.as_slice())
    }

    /// Checks the SOS/EOS/PAD framing of every row.
    pub fn framing_is_valid(&self) -> bool {
        (0..self.size).all(|b| {
            let c = self.context_row(b);
            let r = self.response_row(b);
            let (cl, rl) = (self.context_lens[b], self.response_lens[b]);
            c[..cl].iter().all(|&t| t != PAD)
                && c[cl..].iter().all(|&t| t == PAD)
                && rl >= 2
                && r[0] == SOS
                && r[..rl].iter().filter(|&&t| t == EOS).count() == 1
                && r[rl - 1] == EOS
                && r[..rl].iter().all(|&t| t != PAD)
                && r[rl..].iter().all(|&t| t == PAD)
        })
    }
}

/// Shuffles with a seeded generator and cuts into batches; the last partial
/// batch is kept.
pub fn make_batches(
    pairs: &[DialoguePair],
    batch_size: usize,
    max_len: usize,
    seed: u64,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut crate::rng::stream(seed, crate::rng::DATA_SHUFFLE));
    order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<&DialoguePair> = chunk.iter().map(|&i| &pairs[i]).collect();
            Batch::from_pairs(&rows, max_len)
        })
        .collect()
}
