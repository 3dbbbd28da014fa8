//! Class-balanced batches by minority oversampling.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for};

/// One slot of a batch: the item index and a seed for its augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub index: usize,
    pub aug_seed: u64,
}

/// One epoch of batches over items with class `classes[i]`.
///
/// Every batch holds the same number of items of each class
/// (`batch_size / num_classes`). The epoch is one pass over the largest class;
/// smaller classes are cycled through fresh permutations, so their
/// appearance counts differ by at most one. When the largest class does not
/// fill the last batch, that batch is smaller but still uniform.
pub fn balanced_batches(classes: &[usize], num_classes: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<BatchItem>>> {
    if num_classes == 0 || batch_size == 0 || !batch_size.is_multiple_of(num_classes) {
        return Err(Error::Config(format!(
            "batch size {batch_size} is not a positive multiple of {num_classes} classes"
        )));
    }
    let mut members = vec![Vec::new(); num_classes];
    for (i, &c) in classes.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::Data(format!("item {i} has class {c}, expected < {num_classes}")));
        }
        members[c].push(i);
    }
    if let Some(c) = members.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("class {c} has no labeled studies")));
    }

    let per = batch_size / num_classes;
    let majority = members.iter().map(Vec::len).max().unwrap();
    let mut rng = rng_for(seed, &[0xBA1A]);
    let streams: Vec<Vec<usize>> = members
        .iter()
        .map(|m| {
            let mut s = Vec::with_capacity(majority);
            while s.len() < majority {
                let mut p = m.clone();
                p.shuffle(&mut rng);
                let take = (majority - s.len()).min(p.len());
                s.extend_from_slice(&p[..take]);
            }
            s
        })
        .collect();

    let mut batches = Vec::new();
    let mut start = 0;
    while start < majority {
        let end = (start + per).min(majority);
        let mut batch: Vec<usize> = streams.iter().flat_map(|s| s[start..end].iter().copied()).collect();
        batch.shuffle(&mut rng);
        let b = batches.len() as u64;
        batches.push(
            batch
                .into_iter()
                .enumerate()
                .map(|(slot, index)| BatchItem {
                    index,
                    aug_seed: derive_seed(seed, &[0xA0C, b, slot as u64]),
                })
                .collect(),
        );
        start = end;
    }
    Ok(batches)
}
