use std::collections::HashMap;

use rand::seq::SliceRandom;

use super::types::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream;

/// Sequence indices of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions students (not chunks) into `k` test shards. For fold `i`, the
/// remaining students are split 3:1 into train and validation.
pub fn kfold_split(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let students = ds.students();
    if k < 2 {
        return Err(Error::Config(format!("need k >= 2 folds, got {k}")));
    }
    if students.len() < k {
        return Err(Error::Config(format!(
            "{} students cannot be split into {k} folds",
            students.len()
        )));
    }
    let mut order: Vec<usize> = (0..students.len()).collect();
    order.shuffle(&mut stream(seed, &[0x666f_6c64]));

    let base = students.len() / k;
    let extra = students.len() % k;
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        shards.push(order[start..start + size].to_vec());
        start += size;
    }

    let student_index: HashMap<&str, usize> =
        students.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let mut chunks_of: Vec<Vec<usize>> = vec![Vec::new(); students.len()];
    for (seq_idx, seq) in ds.sequences.iter().enumerate() {
        chunks_of[student_index[seq.student_id.as_str()]].push(seq_idx);
    }
    let expand = |group: &[usize]| -> Vec<usize> {
        let mut out: Vec<usize> = group.iter().flat_map(|&s| chunks_of[s].iter().copied()).collect();
        out.sort_unstable();
        out
    };

    let folds = (0..k)
        .map(|i| {
            let mut rest: Vec<usize> = shards
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, s)| s.iter().copied())
                .collect();
            rest.sort_unstable();
            rest.shuffle(&mut stream(seed, &[0x7661_6c69, i as u64]));
            let n_valid = ((rest.len() + 2) / 4).max(1).min(rest.len().saturating_sub(1));
            let (valid, train) = rest.split_at(n_valid);
            Fold {
                train: expand(train),
                valid: expand(valid),
                test: expand(&shards[i]),
            }
        })
        .collect();
    Ok(folds)
}
