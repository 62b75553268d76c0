//! IRT-grounded synthetic students with known response probabilities.
//!
//! Each student has one ability per KC and each question one difficulty and
//! a random KC set. A posed question is answered correctly with probability
//! `σ(mean ability over its KCs − difficulty)`; afterwards every attempted
//! KC's ability grows by `gamma`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::types::{Dataset, Interaction, KcId, QuestionId, StudentSequence};
use crate::autodiff::sigmoid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub students: usize,
    pub questions: usize,
    pub kcs: usize,
    /// Inclusive range of KC-set sizes per question.
    pub kcs_per_question: (usize, usize),
    /// Ability increment per attempt of a KC.
    pub gamma: f64,
    /// Inclusive range of sequence lengths.
    pub seq_len: (usize, usize),
    pub seed: u64,
    pub ability_std: f64,
    pub difficulty_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            students: 2000,
            questions: 200,
            kcs: 20,
            kcs_per_question: (1, 3),
            gamma: 0.05,
            seq_len: (20, 100),
            seed: 0,
            ability_std: 1.0,
            difficulty_std: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.students == 0 || self.questions == 0 || self.kcs == 0 {
            return fail("students, questions and kcs must all be >= 1".into());
        }
        let (kmin, kmax) = self.kcs_per_question;
        if kmin == 0 || kmin > kmax || kmax > self.kcs {
            return fail(format!(
                "kcs_per_question {kmin}..={kmax} must lie within 1..={}",
                self.kcs
            ));
        }
        let (lmin, lmax) = self.seq_len;
        if lmin == 0 || lmin > lmax {
            return fail(format!("seq_len {lmin}..={lmax} is empty"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return fail(format!("gamma must be >= 0, got {}", self.gamma));
        }
        for (name, v) in [("ability_std", self.ability_std), ("difficulty_std", self.difficulty_std)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Generated logs and the true probability behind every response.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// `oracle[s][t]` is the probability used to draw response `t` of sequence `s`.
    pub oracle: Vec<Vec<f64>>,
    pub difficulties: Vec<f64>,
}

impl SyntheticData {
    /// True probabilities and responses at every position a model predicts
    /// (all but the first of each sequence).
    pub fn oracle_predictions(&self) -> (Vec<f64>, Vec<u8>) {
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for (seq, probs) in self.dataset.sequences.iter().zip(&self.oracle) {
            for (it, &p) in seq.interactions.iter().zip(probs).skip(1) {
                preds.push(p);
                labels.push(it.response);
            }
        }
        (preds, labels)
    }

    pub fn write_oracle<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["student_id", "step", "prob"])?;
        for (seq, probs) in self.dataset.sequences.iter().zip(&self.oracle) {
            for (t, p) in probs.iter().enumerate() {
                w.write_record([seq.student_id.as_str(), &t.to_string(), &format!("{p:?}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_oracle(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_oracle(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let difficulty = Normal::new(0.0, cfg.difficulty_std).map_err(|e| Error::Config(e.to_string()))?;
    let ability = Normal::new(0.0, cfg.ability_std).map_err(|e| Error::Config(e.to_string()))?;

    let mut difficulties = Vec::with_capacity(cfg.questions);
    let mut qmatrix = BTreeMap::new();
    for q in 0..cfg.questions {
        difficulties.push(difficulty.sample(&mut rng));
        let size = rng.gen_range(cfg.kcs_per_question.0..=cfg.kcs_per_question.1);
        let mut kcs: Vec<KcId> = sample(&mut rng, cfg.kcs, size)
            .into_iter()
            .map(|k| KcId(k as u32))
            .collect();
        kcs.sort_unstable();
        qmatrix.insert(QuestionId(q as u32), kcs);
    }

    let width = cfg.students.to_string().len();
    let mut sequences = Vec::with_capacity(cfg.students);
    let mut oracle = Vec::with_capacity(cfg.students);
    for s in 0..cfg.students {
        let mut theta: Vec<f64> = (0..cfg.kcs).map(|_| ability.sample(&mut rng)).collect();
        let len = rng.gen_range(cfg.seq_len.0..=cfg.seq_len.1);
        let mut interactions = Vec::with_capacity(len);
        let mut probs = Vec::with_capacity(len);
        for t in 0..len {
            let q = QuestionId(rng.gen_range(0..cfg.questions) as u32);
            let kcs = &qmatrix[&q];
            let mean = kcs.iter().map(|k| theta[k.index()]).sum::<f64>() / kcs.len() as f64;
            let p = sigmoid(mean - difficulties[q.index()]);
            let response = u8::from(rng.gen::<f64>() < p);
            for k in kcs {
                theta[k.index()] += cfg.gamma;
            }
            probs.push(p);
            interactions.push(Interaction::new(q, kcs.clone(), response, t as i64 * 1000)?);
        }
        sequences.push(StudentSequence {
            student_id: format!("s{s:0width$}"),
            interactions,
        });
        oracle.push(probs);
    }

    let dataset = Dataset {
        sequences,
        n: cfg.questions,
        m: cfg.kcs,
        qmatrix,
        question_names: (0..cfg.questions).map(|q| format!("q{q}")).collect(),
        kc_names: (0..cfg.kcs).map(|k| format!("k{k}")).collect(),
    };
    Ok(SyntheticData {
        dataset,
        oracle,
        difficulties,
    })
}
