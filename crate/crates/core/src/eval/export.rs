//! Per-step exports of module scores and KC mastery for inspection and plotting.

use std::io::Write;

use serde::Serialize;

use crate::autodiff::sigmoid;
use crate::data::{Dataset, KcId, QuestionId, StudentSequence};
use crate::error::{Error, Result};
use crate::model::{forward_sequence, QiktParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModuleOutputRow {
    /// Position of the predicted interaction within the sequence.
    pub step: usize,
    pub question: QuestionId,
    pub response: u8,
    pub r_hat: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub sigma_zeta: f64,
}

pub fn export_module_outputs(params: &QiktParams, seq: &StudentSequence) -> Result<Vec<ModuleOutputRow>> {
    let outputs = forward_sequence(params, &seq.interactions)?;
    Ok(outputs
        .iter()
        .enumerate()
        .map(|(t, o)| {
            let target = &seq.interactions[t + 1];
            ModuleOutputRow {
                step: t + 1,
                question: target.question,
                response: target.response,
                r_hat: o.r_hat,
                sigma_alpha: sigmoid(o.alpha),
                sigma_beta: sigmoid(o.beta),
                sigma_zeta: sigmoid(o.zeta),
            }
        })
        .collect())
}

/// Step × KC matrix of exported mastery values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnowledgeStates {
    pub kcs: Vec<KcId>,
    /// One row per prediction step, one column per selected KC.
    pub rows: Vec<Vec<f64>>,
}

pub fn export_knowledge_states(
    params: &QiktParams,
    seq: &StudentSequence,
    kc_subset: &[KcId],
) -> Result<KnowledgeStates> {
    if kc_subset.is_empty() {
        return Err(Error::Config("empty KC subset".into()));
    }
    if let Some(k) = kc_subset.iter().find(|k| k.index() >= params.config.m) {
        return Err(Error::Index {
            op: "export_knowledge_states",
            index: k.index(),
            len: params.config.m,
        });
    }
    let outputs = forward_sequence(params, &seq.interactions)?;
    let rows = outputs
        .iter()
        .map(|o| kc_subset.iter().map(|k| o.kc_mastery[k.index()]).collect())
        .collect();
    Ok(KnowledgeStates {
        kcs: kc_subset.to_vec(),
        rows,
    })
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_module_outputs_csv<W: Write>(rows: &[ModuleOutputRow], ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "step",
        "question_id",
        "response",
        "r_hat",
        "sigma_alpha",
        "sigma_beta",
        "sigma_zeta",
    ])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            ds.question_names
                .get(r.question.index())
                .cloned()
                .unwrap_or_else(|| r.question.0.to_string()),
            r.response.to_string(),
            fmt(r.r_hat),
            fmt(r.sigma_alpha),
            fmt(r.sigma_beta),
            fmt(r.sigma_zeta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_knowledge_states_csv<W: Write>(states: &KnowledgeStates, ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["step".to_string()];
    header.extend(states.kcs.iter().map(|k| {
        ds.kc_names
            .get(k.index())
            .cloned()
            .unwrap_or_else(|| k.0.to_string())
    }));
    w.write_record(&header)?;
    for (t, row) in states.rows.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|&v| fmt(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
