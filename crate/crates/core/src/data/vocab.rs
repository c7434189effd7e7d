use std::collections::{BTreeMap, HashMap};

use super::Example;
use crate::model::TokenBatch;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;

const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Whitespace-token vocabulary. Ids `0..4` are reserved for
/// `[PAD] [UNK] [CLS] [SEP]`; the remaining ids are dense and assigned by
/// descending frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a, I>(examples: I) -> Self
    where
        I: IntoIterator<Item = &'a Example>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for ex in examples {
            let b = ex.text_b.as_deref().unwrap_or("");
            for tok in ex.text_a.split_whitespace().chain(b.split_whitespace()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut by_freq: Vec<(&str, usize)> = counts.into_iter().collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_tokens(by_freq.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Vocabulary with the reserved tokens followed by `tokens` in order.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for t in tokens {
            if !RESERVED.contains(&t.as_str()) && !all.contains(&t) {
                all.push(t);
            }
        }
        let ids = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens: all, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

/// Token ids, attention mask and segment ids of one example, padded to
/// `max_len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub segments: Vec<usize>,
}

impl Encoded {
    /// Number of non-padding positions.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// `[CLS] a… ([SEP] b… [SEP])` then `[PAD]` up to `max_len`.
///
/// Overlong input is truncated: single sentences keep their first
/// `max_len − 1` tokens; for pairs the longer segment loses its last token
/// until both fit.
pub fn tokenize(example: &Example, vocab: &Vocab, max_len: usize) -> Encoded {
    let max_len = max_len.max(1);
    let mut a: Vec<usize> = example
        .text_a
        .split_whitespace()
        .map(|t| vocab.id(t))
        .collect();

    let mut ids = vec![CLS];
    let mut segments = vec![0];
    match &example.text_b {
        None => {
            a.truncate(max_len - 1);
            ids.extend(&a);
            segments.extend(std::iter::repeat_n(0, a.len()));
        }
        Some(text_b) => {
            let mut b: Vec<usize> = text_b.split_whitespace().map(|t| vocab.id(t)).collect();
            let budget = max_len.saturating_sub(3);
            while a.len() + b.len() > budget {
                if a.len() >= b.len() {
                    a.pop();
                } else {
                    b.pop();
                }
            }
            ids.extend(&a);
            ids.push(SEP);
            segments.extend(std::iter::repeat_n(0, a.len() + 1));
            ids.extend(&b);
            ids.push(SEP);
            segments.extend(std::iter::repeat_n(1, b.len() + 1));
            ids.truncate(max_len);
            segments.truncate(max_len);
        }
    }
    let real = ids.len();
    ids.resize(max_len, PAD);
    segments.resize(max_len, 0);
    let mask = (0..max_len).map(|i| i < real).collect();
    Encoded {
        ids,
        mask,
        segments,
    }
}

/// Encodes examples into one batch padded to the longest example, never
/// beyond `max_len`.
pub fn encode_batch<'a, I>(examples: I, vocab: &Vocab, max_len: usize) -> TokenBatch
where
    I: IntoIterator<Item = &'a Example>,
{
    let encoded: Vec<Encoded> = examples
        .into_iter()
        .map(|ex| tokenize(ex, vocab, max_len))
        .collect();
    let width = encoded
        .iter()
        .map(Encoded::real_len)
        .max()
        .unwrap_or(1)
        .max(1);
    TokenBatch::stack(
        encoded
            .iter()
            .map(|e| (&e.ids[..width], &e.segments[..width], &e.mask[..width])),
    )
    .expect("encoded rows share a width")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(a: &str, b: Option<&str>) -> Example {
        Example {
            text_a: a.into(),
            text_b: b.map(Into::into),
            label: 0,
            stratum: None,
        }
    }

    #[test]
    fn reserved_ids_are_fixed_and_vocab_is_dense() {
        let v = Vocab::build([&ex("b a a c", None), &ex("c a", Some("d"))]);
        assert_eq!(v.id("[PAD]"), PAD);
        assert_eq!(v.id("[UNK]"), UNK);
        assert_eq!(v.id("[CLS]"), CLS);
        assert_eq!(v.id("[SEP]"), SEP);
        // a:3, c:2, b:1, d:1 (tie broken lexicographically)
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("c"), 5);
        assert_eq!(v.id("b"), 6);
        assert_eq!(v.id("d"), 7);
        assert_eq!(v.len(), 8);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn single_sentence_layout() {
        let v = Vocab::from_tokens(["t1".to_string(), "t2".to_string()]);
        let e = tokenize(&ex("t1 t2", None), &v, 8);
        assert_eq!(e.ids, vec![CLS, 4, 5, PAD, PAD, PAD, PAD, PAD]);
        assert_eq!(
            e.mask,
            vec![true, true, true, false, false, false, false, false]
        );
        assert_eq!(e.segments, vec![0; 8]);
    }

    #[test]
    fn pair_layout_has_two_separators_and_segment_ids() {
        let v = Vocab::from_tokens(["x".to_string(), "y".to_string(), "z".to_string()]);
        let e = tokenize(&ex("x y", Some("z")), &v, 8);
        assert_eq!(e.ids, vec![CLS, 4, 5, SEP, 6, SEP, PAD, PAD]);
        assert_eq!(e.ids.iter().filter(|&&i| i == SEP).count(), 2);
        assert_eq!(e.segments, vec![0, 0, 0, 0, 1, 1, 0, 0]);
        assert_eq!(e.real_len(), 6);
    }

    #[test]
    fn truncation_trims_longer_segment_first() {
        let v = Vocab::from_tokens((0..10).map(|i| format!("w{i}")));
        let e = tokenize(&ex("w0 w1 w2 w3 w4", Some("w5 w6")), &v, 7);
        // budget 4: a loses tokens until it is no longer than b
        assert_eq!(e.ids, vec![CLS, 4, 5, SEP, 9, 10, SEP]);
        assert_eq!(e.mask, vec![true; 7]);

        let e = tokenize(&ex("w0 w1 w2 w3 w4", None), &v, 3);
        assert_eq!(e.ids, vec![CLS, 4, 5]);
    }

    #[test]
    fn tokenize_is_deterministic() {
        let v = Vocab::build([&ex("a b c", Some("d e"))]);
        let e = ex("a b c", Some("d e"));
        assert_eq!(tokenize(&e, &v, 12), tokenize(&e, &v, 12));
    }

    #[test]
    fn encode_batch_pads_to_longest() {
        let v = Vocab::build([&ex("a b c", None)]);
        let b = encode_batch([&ex("a", None), &ex("a b c", None)], &v, 10);
        assert_eq!(b.batch, 2);
        assert_eq!(b.seq_len, 4);
        assert_eq!(
            b.mask,
            vec![true, true, false, false, true, true, true, true]
        );
    }
}
