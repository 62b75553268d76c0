use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuestionId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KcId(pub u32);

impl QuestionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl KcId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One attempt: question, its KC set, the 0/1 response and a timestamp in ms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub question: QuestionId,
    pub kcs: Vec<KcId>,
    pub response: u8,
    pub timestamp: i64,
}

impl Interaction {
    pub fn new(question: QuestionId, kcs: Vec<KcId>, response: u8, timestamp: i64) -> Result<Self> {
        if kcs.is_empty() {
            return Err(Error::Data(format!("question {} without KCs", question.0)));
        }
        if response > 1 {
            return Err(Error::Domain(format!("response must be 0 or 1, got {response}")));
        }
        Ok(Self {
            question,
            kcs,
            response,
            timestamp,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentSequence {
    pub student_id: String,
    pub interactions: Vec<Interaction>,
}

impl StudentSequence {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn is_chronological(&self) -> bool {
        self.interactions
            .windows(2)
            .all(|w| w[0].timestamp <= w[1].timestamp)
    }
}

/// Interaction logs with dense 0-based question and KC ids.
///
/// `question_names` / `kc_names` map dense ids back to the raw ids of the
/// source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub sequences: Vec<StudentSequence>,
    pub n: usize,
    pub m: usize,
    pub qmatrix: BTreeMap<QuestionId, Vec<KcId>>,
    pub question_names: Vec<String>,
    pub kc_names: Vec<String>,
}

impl Dataset {
    pub fn interaction_count(&self) -> usize {
        self.sequences.iter().map(StudentSequence::len).sum()
    }

    /// Distinct student ids in order of first appearance.
    pub fn students(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.sequences
            .iter()
            .filter(|s| seen.insert(s.student_id.as_str()))
            .map(|s| s.student_id.as_str())
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    pub(crate) fn clone_meta(&self) -> Dataset {
        Dataset {
            sequences: Vec::new(),
            n: self.n,
            m: self.m,
            qmatrix: self.qmatrix.clone(),
            question_names: self.question_names.clone(),
            kc_names: self.kc_names.clone(),
        }
    }

    /// Checks id ranges, KC sets and q-matrix consistency.
    pub fn validate(&self) -> Result<()> {
        for seq in &self.sequences {
            for it in &seq.interactions {
                if it.question.index() >= self.n {
                    return Err(Error::Data(format!(
                        "question id {} out of range (n = {})",
                        it.question.0, self.n
                    )));
                }
                if it.kcs.is_empty() {
                    return Err(Error::Data(format!("question {} without KCs", it.question.0)));
                }
                if let Some(k) = it.kcs.iter().find(|k| k.index() >= self.m) {
                    return Err(Error::Data(format!("KC id {} out of range (m = {})", k.0, self.m)));
                }
                if self.qmatrix.get(&it.question) != Some(&it.kcs) {
                    return Err(Error::Data(format!(
                        "question {} KC set disagrees with the q-matrix",
                        it.question.0
                    )));
                }
            }
        }
        Ok(())
    }
}
