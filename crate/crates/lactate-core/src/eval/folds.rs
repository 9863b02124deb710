//! Stay-level fold assignment: every sample of a stay shares its fold.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n_folds: usize,
    /// stay_id -> fold index; an exact partition with sizes differing by <= 1.
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_folds];
        for &f in self.fold_of.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Uniform random stay-level partition, deterministic given the seed.
pub fn kfold(stays: &[String], folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds < 2 {
        return Err(Error::config(format!("folds must be >= 2, got {folds}")));
    }
    if stays.len() < folds {
        return Err(Error::data(format!(
            "{} stays cannot fill {} folds",
            stays.len(),
            folds
        )));
    }
    let mut order: Vec<&String> = stays.iter().collect();
    let mut rng = seeding::rng_for(seed, &[0x666f_6c64]);
    order.shuffle(&mut rng);
    let fold_of = order
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i % folds))
        .collect();
    Ok(FoldAssignment { n_folds: folds, fold_of })
}
