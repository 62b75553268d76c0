//! Interaction logs: parsing, preprocessing, fold construction and a
//! synthetic generator with known response probabilities.

mod folds;
mod io;
mod preprocess;
mod synth;
mod types;

pub use folds::{kfold_split, Fold};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, HEADER};
pub use preprocess::{preprocess, DEFAULT_MAX_LEN, DEFAULT_MIN_LEN};
pub use synth::{gen_synthetic, SynthConfig, SyntheticData};
pub use types::{Dataset, Interaction, KcId, QuestionId, StudentSequence};
