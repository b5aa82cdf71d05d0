//! N-way-K-shot episode construction.
//!
//! For every class the episode takes `min(K, available)` training indices
//! without replacement, so under-populated classes contribute everything
//! they have. Sampling is a pure function of `(dataset, K, seed)`: the
//! generator is ChaCha8 seeded from the run seed mixed with a stable hash
//! of the dataset name, and classes are visited in sorted order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::init::{fnv1a, mix_seed};

/// A K-shot training subset of one train split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    /// Indices into the source train split, grouped by class in sorted
    /// class order, ascending within a class.
    pub train_indices: Vec<usize>,
    pub shots: usize,
    pub seed: u64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.train_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_indices.is_empty()
    }

    /// Degenerate episode covering the whole train split (full-train mode).
    pub fn full(train: &Dataset, seed: u64) -> Episode {
        Episode {
            train_indices: (0..train.len()).collect(),
            shots: train.len(),
            seed,
        }
    }
}

/// Draw `min(K, available)` indices per class, deterministically.
pub fn sample_episode(train: &Dataset, shots: usize, seed: u64) -> Result<Episode> {
    if shots == 0 {
        return Err(Error::Argument("K must be positive".into()));
    }
    if train.is_empty() {
        return Err(Error::Protocol("train split is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, fnv1a(train.name.as_bytes())));

    let mut sorted_classes = train.class_names.clone();
    sorted_classes.sort();

    let mut train_indices = Vec::new();
    for class in &sorted_classes {
        let mut pool: Vec<usize> = train
            .instances
            .iter()
            .enumerate()
            .filter(|(_, inst)| &inst.label == class)
            .map(|(i, _)| i)
            .collect();
        if pool.is_empty() {
            return Err(Error::Protocol(format!(
                "class {class:?} has no samples in the train split"
            )));
        }
        let take = shots.min(pool.len());
        // partial Fisher-Yates, self-contained so the draw sequence never
        // depends on library internals
        for i in 0..take {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut chosen: Vec<usize> = pool[..take].to_vec();
        chosen.sort_unstable();
        train_indices.extend(chosen);
    }

    Ok(Episode {
        train_indices,
        shots,
        seed,
    })
}
