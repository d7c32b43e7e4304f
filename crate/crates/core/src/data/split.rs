use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sorted train and validation indices of one fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Shuffle each class, then deal its members round-robin across folds, the
/// second class continuing where the first stopped so fold sizes stay even.
/// `k = 1` trains and validates on everything.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k == 0 {
        return Err(Error::Config("fold count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut dealt = 0;
    for class in [false, true] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Data(format!(
                "class {} has {} samples, fewer than {k} folds",
                class as u8,
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = dealt % k;
            dealt += 1;
        }
    }
    if k == 1 {
        let all: Vec<usize> = (0..labels.len()).collect();
        return Ok(vec![Fold { train: all.clone(), val: all }]);
    }
    Ok((0..k)
        .map(|f| {
            let (val, train) = (0..labels.len()).partition(|&i| assignment[i] == f);
            Fold { train, val }
        })
        .collect())
}
