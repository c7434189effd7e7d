use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Stratum, TaskInfo};
use crate::error::{Error, Result};
use crate::metrics::Metric;

/// Parameters of the synthetic keyword-classification task.
///
/// EASY samples carry a class keyword (`key{k}`, class `k mod n_classes`)
/// in one of the first two word positions. HARD samples carry no keyword;
/// their class is `(i + j) mod n_classes` for a marker `left{i}` in the
/// first two positions and a marker `right{j}` in the last two, so the
/// label depends on both ends of the sequence jointly. All other words are
/// fillers `w{f}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_keywords: usize,
    pub n_fillers: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Fraction of EASY samples in every split.
    pub easy_fraction: f64,
    /// Words per sample, before `[CLS]`.
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 2,
            n_keywords: 8,
            n_fillers: 32,
            n_train: 2000,
            n_dev: 500,
            n_test: 0,
            easy_fraction: 0.5,
            min_words: 6,
            max_words: 12,
        }
    }
}

const MAX_RETRIES: usize = 10_000;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::Config { field, reason });
        if self.n_classes < 2 {
            return bad(
                "n_classes",
                format!("need at least 2, got {}", self.n_classes),
            );
        }
        if self.n_keywords < self.n_classes {
            return bad(
                "n_keywords",
                format!(
                    "{} keywords cannot cover {} classes",
                    self.n_keywords, self.n_classes
                ),
            );
        }
        if self.n_fillers == 0 {
            return bad("n_fillers", "need at least one filler word".into());
        }
        if self.min_words < 4 {
            return bad(
                "min_words",
                format!("need at least 4, got {}", self.min_words),
            );
        }
        if self.max_words < self.min_words {
            return bad(
                "max_words",
                format!("{} is below min_words {}", self.max_words, self.min_words),
            );
        }
        if !(0.0..=1.0).contains(&self.easy_fraction) {
            return bad(
                "easy_fraction",
                format!("must lie in [0, 1], got {}", self.easy_fraction),
            );
        }
        Ok(())
    }

    /// Longest tokenized sequence, `[CLS]` included.
    pub fn max_seq_len(&self) -> usize {
        self.max_words + 1
    }
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    rng: ChaCha8Rng,
    seen: HashSet<String>,
}

impl Generator<'_> {
    fn filler(&mut self) -> String {
        format!("w{}", self.rng.random_range(0..self.spec.n_fillers))
    }

    fn sample(&mut self, stratum: Stratum, label: usize) -> String {
        let c = self.spec.n_classes;
        let len = self
            .rng
            .random_range(self.spec.min_words..=self.spec.max_words);
        let mut words: Vec<String> = (0..len).map(|_| self.filler()).collect();
        match stratum {
            Stratum::Easy => {
                // keywords of this class: label, label + c, label + 2c, ...
                let per_class = (self.spec.n_keywords - label).div_ceil(c);
                let k = label + c * self.rng.random_range(0..per_class);
                let pos = self.rng.random_range(0..2);
                words[pos] = format!("key{k}");
            }
            Stratum::Hard => {
                let i = self.rng.random_range(0..c);
                let j = (label + c - i) % c;
                let left = self.rng.random_range(0..2);
                let right = len - 1 - self.rng.random_range(0..2);
                words[left] = format!("left{i}");
                words[right] = format!("right{j}");
            }
        }
        words.join(" ")
    }

    fn split(&mut self, n: usize) -> Result<Vec<Example>> {
        let c = self.spec.n_classes;
        let n_easy = (n as f64 * self.spec.easy_fraction).round() as usize;
        let mut plan: Vec<(Stratum, usize)> = (0..n_easy)
            .map(|i| (Stratum::Easy, i % c))
            .chain((0..n - n_easy).map(|i| (Stratum::Hard, i % c)))
            .collect();
        plan.shuffle(&mut self.rng);

        let mut out = Vec::with_capacity(n);
        for (stratum, label) in plan {
            let mut attempts = 0;
            let text = loop {
                let text = self.sample(stratum, label);
                if self.seen.insert(text.clone()) {
                    break text;
                }
                attempts += 1;
                if attempts > MAX_RETRIES {
                    return Err(Error::Config {
                        field: "n_fillers",
                        reason: "too few distinct sequences for the requested sample counts".into(),
                    });
                }
            };
            out.push(Example {
                text_a: text,
                text_b: None,
                label,
                stratum: Some(stratum),
            });
        }
        Ok(out)
    }
}

/// Generates train/dev/test splits as a pure function of `(spec, seed)`.
/// No text appears in more than one split.
pub fn make_synthetic_task(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut gen = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(seed),
        seen: HashSet::new(),
    };
    let train = gen.split(spec.n_train)?;
    let dev = gen.split(spec.n_dev)?;
    let test = gen.split(spec.n_test)?;
    Ok(Dataset {
        task: TaskInfo {
            n_classes: spec.n_classes,
            pair: false,
            metric: Metric::Accuracy,
        },
        train,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_train: 300,
            n_dev: 100,
            n_test: 50,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = make_synthetic_task(&small(), 42).unwrap();
        let b = make_synthetic_task(&small(), 42).unwrap();
        let c = make_synthetic_task(&small(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let d = make_synthetic_task(&small(), 1).unwrap();
        assert_eq!((d.train.len(), d.dev.len(), d.test.len()), (300, 100, 50));
        let train: HashSet<_> = d.train.iter().map(|e| &e.text_a).collect();
        assert!(d
            .dev
            .iter()
            .chain(&d.test)
            .all(|e| !train.contains(&e.text_a)));
        d.validate().unwrap();
    }

    #[test]
    fn labels_are_balanced() {
        for c in [2, 3, 4] {
            let spec = SyntheticSpec {
                n_classes: c,
                ..small()
            };
            let d = make_synthetic_task(&spec, 7).unwrap();
            let mut counts = vec![0usize; c];
            for e in &d.dev {
                counts[e.label] += 1;
            }
            // a majority-class predictor scores close to chance
            let majority = *counts.iter().max().unwrap() as f64 / d.dev.len() as f64;
            assert!((majority - 1.0 / c as f64).abs() <= 0.05, "{counts:?}");
        }
    }

    #[test]
    fn strata_carry_their_signal() {
        let spec = SyntheticSpec {
            n_classes: 3,
            ..small()
        };
        let d = make_synthetic_task(&spec, 3).unwrap();
        let mut n_easy = 0;
        for e in &d.train {
            let words: Vec<&str> = e.text_a.split(' ').collect();
            assert!(words.len() >= spec.min_words && words.len() <= spec.max_words);
            match e.stratum.unwrap() {
                Stratum::Easy => {
                    n_easy += 1;
                    let key = words[..2]
                        .iter()
                        .find_map(|w| w.strip_prefix("key"))
                        .unwrap();
                    assert_eq!(key.parse::<usize>().unwrap() % 3, e.label);
                }
                Stratum::Hard => {
                    assert!(!e.text_a.contains("key"));
                    let i: usize = words[..2]
                        .iter()
                        .find_map(|w| w.strip_prefix("left"))
                        .unwrap()
                        .parse()
                        .unwrap();
                    let j: usize = words[words.len() - 2..]
                        .iter()
                        .find_map(|w| w.strip_prefix("right"))
                        .unwrap()
                        .parse()
                        .unwrap();
                    assert_eq!((i + j) % 3, e.label);
                }
            }
        }
        assert_eq!(n_easy, 150);
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let spec = SyntheticSpec {
            n_classes: 5,
            n_keywords: 4,
            ..small()
        };
        assert!(matches!(
            make_synthetic_task(&spec, 0),
            Err(Error::Config {
                field: "n_keywords",
                ..
            })
        ));
        let spec = SyntheticSpec {
            n_fillers: 1,
            min_words: 4,
            max_words: 4,
            ..small()
        };
        assert!(make_synthetic_task(&spec, 0).is_err());
    }
}
