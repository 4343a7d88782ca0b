//! Greedy byte-pair merge learning over integer symbol streams.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{TokenizerConfig, TokenizerError, TokenizerModel};

/// `(left, right) -> new`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Merge {
    pub left: u32,
    pub right: u32,
    pub new: u32,
}

/// Replaces non-overlapping occurrences of the merge pair, scanning left to right.
pub(crate) fn merge_sequence(seq: &[u32], m: &Merge) -> Vec<u32> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == m.left && seq[i + 1] == m.right {
            out.push(m.new);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

type Pair = (u32, u32);

fn add_pairs(seq: &[u32], weight: i64, counts: &mut HashMap<Pair, i64>) {
    for w in seq.windows(2) {
        *counts.entry((w[0], w[1])).or_insert(0) += weight;
    }
}

/// Learns merges until the vocabulary is full or no pair occurs at least twice.
///
/// Each round merges the pair with the highest occurrence count across the
/// corpus (overlapping occurrences counted), ties going to the
/// lexicographically smallest pair.
pub fn fit_bpe(corpus: &[Vec<u32>], config: TokenizerConfig) -> Result<TokenizerModel, TokenizerError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let base = config.base_symbols() as u32;
    for seq in corpus {
        if let Some((index, &symbol)) = seq.iter().enumerate().find(|(_, s)| **s >= base) {
            return Err(TokenizerError::SymbolOutOfRange { index, symbol, max: base - 1 });
        }
    }

    // Identical sequences are folded into one weighted word.
    let mut unique: HashMap<&[u32], i64> = HashMap::new();
    for seq in corpus {
        *unique.entry(seq.as_slice()).or_insert(0) += 1;
    }
    let mut words: Vec<(Vec<u32>, i64)> = unique.into_iter().map(|(s, w)| (s.to_vec(), w)).collect();
    words.sort();

    let mut counts: HashMap<Pair, i64> = HashMap::new();
    let mut occurs_in: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    for (i, (w, weight)) in words.iter().enumerate() {
        add_pairs(w, *weight, &mut counts);
        for p in w.windows(2) {
            occurs_in.entry((p[0], p[1])).or_default().insert(i);
        }
    }

    let mut merges = Vec::new();
    let budget = config.vocab_size - config.base_symbols();
    while merges.len() < budget {
        let best = counts
            .iter()
            .filter(|(_, c)| **c >= 2)
            .min_by(|(pa, ca), (pb, cb)| cb.cmp(ca).then(pa.cmp(pb)));
        let Some((&(left, right), _)) = best else { break };
        let m = Merge { left, right, new: base + merges.len() as u32 };
        merges.push(m);

        let touched = occurs_in.remove(&(left, right)).unwrap_or_default();
        for i in touched {
            let (old, weight) = &words[i];
            let weight = *weight;
            let new = merge_sequence(old, &m);
            for w in old.windows(2) {
                let p = (w[0], w[1]);
                if let Some(c) = counts.get_mut(&p) {
                    *c -= weight;
                    if *c == 0 {
                        counts.remove(&p);
                    }
                }
            }
            add_pairs(&new, weight, &mut counts);
            for w in new.windows(2) {
                occurs_in.entry((w[0], w[1])).or_default().insert(i);
            }
            words[i].0 = new;
        }
        counts.remove(&(left, right));
    }
    TokenizerModel::new(config, merges)
}
