use super::types::{Dataset, StudentSequence};
use crate::error::{Error, Result};

pub const DEFAULT_MIN_LEN: usize = 3;
pub const DEFAULT_MAX_LEN: usize = 200;

/// Drops sequences shorter than `min_len` and cuts longer ones into
/// consecutive chunks of at most `max_len`. A trailing chunk shorter than
/// `min_len` is dropped. Chunks keep the student id.
pub fn preprocess(ds: &Dataset, min_len: usize, max_len: usize) -> Result<Dataset> {
    if min_len < 2 || max_len < min_len {
        return Err(Error::Config(format!(
            "need 2 <= min_len <= max_len, got min_len={min_len}, max_len={max_len}"
        )));
    }
    let mut out = ds.clone_meta();
    for seq in &ds.sequences {
        if seq.len() < min_len {
            continue;
        }
        for chunk in seq.interactions.chunks(max_len) {
            if chunk.len() >= min_len {
                out.sequences.push(StudentSequence {
                    student_id: seq.student_id.clone(),
                    interactions: chunk.to_vec(),
                });
            }
        }
    }
    Ok(out)
}
