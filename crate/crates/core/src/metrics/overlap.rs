use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use super::MetricsError;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with clipped n-gram precisions for `n = 1..=max_n`.
/// Unigram precision is unsmoothed; higher orders use `(m + 1) / (t + 1)`.
/// The brevity penalty uses the reference length closest to the candidate
/// (shorter on ties). An empty candidate scores 0.
pub fn bleu<T: Eq + Hash, R: AsRef<[T]>>(candidate: &[T], references: &[R], max_n: usize) -> f64 {
    let c = candidate.len();
    if c == 0 || references.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let total: usize = cand.values().sum();
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in references {
            for (g, k) in ngram_counts(r.as_ref(), n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        let matched: usize = cand
            .iter()
            .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let r = references
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty");
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * (log_sum / max_n as f64).exp()
}

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

const SUFFIXES: &[&str] = &["ingly", "edly", "ness", "ment", "ing", "ies", "ed", "ly", "es", "s"];

/// Affix-stripping stemmer: removes the first matching suffix that leaves at
/// least three characters (`ies` becomes `y`), then undoubles a final
/// consonant left behind by `ing`/`ed` (`running` -> `run`).
pub fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    for suf in SUFFIXES {
        let Some(base) = w.strip_suffix(suf) else { continue };
        if base.chars().count() < 3 || (*suf == "s" && base.ends_with('s')) {
            continue;
        }
        let mut out = base.to_string();
        if *suf == "ies" {
            out.push('y');
        }
        if suf.starts_with("ing") || suf.starts_with("ed") {
            let b: Vec<char> = out.chars().collect();
            let n = b.len();
            if n >= 2 && b[n - 1] == b[n - 2] && !"aeioulsz".contains(b[n - 1]) {
                out.pop();
            }
        }
        return out;
    }
    w
}

/// Unigram alignment (exact, then stem matches), greedy left to right.
/// Returns `(matches, chunks)`.
fn align<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> (usize, usize) {
    let mut ref_used = vec![false; reference.len()];
    let mut link: Vec<Option<usize>> = vec![None; candidate.len()];
    let stages: [fn(&str) -> String; 2] = [|w| w.to_string(), stem];
    for f in stages {
        let ref_keys: Vec<String> = reference.iter().map(|r| f(r.as_ref())).collect();
        for (i, c) in candidate.iter().enumerate() {
            if link[i].is_some() {
                continue;
            }
            let key = f(c.as_ref());
            if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && ref_keys[j] == key) {
                ref_used[j] = true;
                link[i] = Some(j);
            }
        }
    }
    let mut matches = 0;
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, l) in link.iter().enumerate() {
        match *l {
            Some(j) => {
                matches += 1;
                if prev != Some((i.wrapping_sub(1), j.wrapping_sub(1))) {
                    chunks += 1;
                }
                prev = Some((i, j));
            }
            None => prev = None,
        }
    }
    (matches, chunks)
}

/// METEOR without synonym resources: `F = 10PR / (R + 9P)` scaled by
/// `1 - 0.5 (chunks / matches)^3`.
pub fn meteor_lite<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let (m, ch) = align(candidate, reference);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    f * (1.0 - 0.5 * (ch as f64 / m as f64).powi(3))
}

/// Unique over total `n`-grams across all outputs; n-grams never span two
/// outputs.
pub fn distinct_n<T: Eq + Hash, S: AsRef<[T]>>(outputs: &[S], n: usize) -> Result<f64, MetricsError> {
    let mut seen: HashSet<&[T]> = HashSet::new();
    let mut total = 0usize;
    for o in outputs {
        let o = o.as_ref();
        if n == 0 || o.len() < n {
            continue;
        }
        for w in o.windows(n) {
            seen.insert(w);
            total += 1;
        }
    }
    if total == 0 {
        return Err(MetricsError::NoNgrams(n));
    }
    Ok(seen.len() as f64 / total as f64)
}
