use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Pair;
use crate::{Error, Result};

/// One optimization step: indices into the pair list and their class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub pairs: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Seeded per-epoch shuffle of drone/satellite pairs into batches.
///
/// The final batch of an epoch may be short, so every pair is visited exactly
/// once per epoch.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    labels: Vec<usize>,
    batch_size: usize,
    seed: u64,
}

impl BatchSampler {
    pub fn new(pairs: &[Pair], batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > pairs.len() {
            return Err(Error::BatchTooLarge {
                batch: batch_size,
                available: pairs.len(),
            });
        }
        Ok(Self {
            labels: pairs.iter().map(|p| p.class).collect(),
            batch_size,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.labels.len().div_ceil(self.batch_size)
    }

    pub fn epoch(&self, epoch: usize) -> Vec<Step> {
        let mut order: Vec<usize> = (0..self.labels.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        order
            .chunks(self.batch_size)
            .map(|chunk| Step {
                pairs: chunk.to_vec(),
                labels: chunk.iter().map(|&i| self.labels[i]).collect(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(n: usize, classes: usize) -> Vec<Pair> {
        (0..n)
            .map(|i| Pair {
                class: i % classes,
                drone: i / classes,
                satellite: 0,
            })
            .collect()
    }

    #[test]
    fn thirty_two_steps() {
        let s = BatchSampler::new(&pairs(1024, 16), 32, 0).unwrap();
        assert_eq!(s.steps_per_epoch(), 32);
        assert_eq!(s.epoch(0).len(), 32);
    }

    #[test]
    fn covers_every_pair_once() {
        let s = BatchSampler::new(&pairs(50, 5), 8, 3).unwrap();
        let steps = s.epoch(2);
        assert_eq!(steps.len(), 7);
        let mut seen: Vec<usize> = steps.iter().flat_map(|st| st.pairs.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..50).collect::<Vec<_>>());
        assert!(steps.iter().all(|st| st.labels.iter().all(|&l| l < 5)));
    }

    #[test]
    fn seeded_order() {
        let p = pairs(40, 4);
        let a = BatchSampler::new(&p, 8, 9).unwrap();
        let b = BatchSampler::new(&p, 8, 9).unwrap();
        assert_eq!(a.epoch(1), b.epoch(1));
        assert_ne!(a.epoch(0), a.epoch(1));
        assert!(BatchSampler::new(&p, 41, 0).is_err());
    }
}
