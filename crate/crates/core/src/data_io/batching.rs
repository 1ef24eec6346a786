use rand::seq::SliceRandom;

use super::Section;
use crate::rng::{Domain, Streams};
use crate::{Result, VpnError};

/// Shuffled mini-batches of `0..n`, determined by `(seed, epoch)` alone.
/// The last batch keeps the remainder.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(VpnError::Contract("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut Streams::new(seed).stream(Domain::Shuffle, epoch, 0, 0));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn batches(section: &Section, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    batch_indices(section.len(), batch_size, seed, epoch)
}
