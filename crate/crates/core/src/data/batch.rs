use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Example;
use crate::error::{Error, Result};

/// Partitions `0..len` into consecutive chunks of `batch_size` (the last
/// one possibly shorter), after a seed-determined shuffle if requested.
pub fn batch_indices(
    len: usize,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// One epoch over a split.
pub struct Batches<'a> {
    split: &'a [Example],
    batches: std::vec::IntoIter<Vec<usize>>,
}

impl<'a> Batches<'a> {
    pub fn new(split: &'a [Example], batch_size: usize, seed: u64, shuffle: bool) -> Result<Self> {
        let batches = batch_indices(split.len(), batch_size, seed, shuffle)?;
        Ok(Self {
            split,
            batches: batches.into_iter(),
        })
    }
}

impl<'a> Iterator for Batches<'a> {
    type Item = Vec<&'a Example>;

    fn next(&mut self) -> Option<Self::Item> {
        let idx = self.batches.next()?;
        Some(idx.into_iter().map(|i| &self.split[i]).collect())
    }
}
