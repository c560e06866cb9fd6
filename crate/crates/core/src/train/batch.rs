use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Indices of the items in one training batch: canonical instances and
/// observation records of the dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MixedBatch {
    pub canonical: Vec<usize>,
    pub observations: Vec<usize>,
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.canonical.len() + self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn draw<R: Rng + ?Sized>(pool: &[usize], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if pool.is_empty() && n > 0 {
        return Err(Error::Empty("training pool"));
    }
    Ok((0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect())
}

/// Draws `⌈ratio·size⌉` canonical items and `size` minus that many
/// observations, uniformly with replacement.
pub fn mix_batch(
    canonical_pool: &[usize],
    observation_pool: &[usize],
    size: usize,
    ratio: f64,
    seed: u64,
) -> Result<MixedBatch> {
    if size < 2 {
        return Err(Error::invalid(format!("batch size {size} below 2")));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("mix ratio {ratio} outside [0, 1]")));
    }
    let nc = ((ratio * size as f64).ceil() as usize).min(size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(MixedBatch {
        canonical: draw(canonical_pool, nc, &mut rng)?,
        observations: draw(observation_pool, size - nc, &mut rng)?,
    })
}
