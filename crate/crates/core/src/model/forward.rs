//! The forward graph: encoders, recurrent cells, score heads and the
//! prediction layer, all recorded on a [`Tape`].

use serde::Serialize;

use super::config::{ModelConfig, Variant};
use super::params::QiktParams;
use crate::autodiff::{sigmoid, NodeId, Tape, Tensor};
use crate::data::{Interaction, KcId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    pub w: [NodeId; 4],
    pub u: [NodeId; 4],
    pub b: [NodeId; 4],
}

#[derive(Debug, Clone, Copy)]
pub struct HeadNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub w_out: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

/// Parameter leaves of one tape.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    pub question_emb: NodeId,
    pub kc_emb: NodeId,
    pub ka_lstm: LstmNodes,
    pub ks_lstm: LstmNodes,
    pub ka_head: HeadNodes,
    pub ks_head: HeadNodes,
    pub ps_head: SolverNodes,
    pub irt: Option<(NodeId, NodeId)>,
    /// All of the above in canonical tensor order.
    pub ordered: Vec<NodeId>,
}

impl QiktParams {
    /// Records every tensor as a borrowed leaf.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>) -> ParamNodes {
        let ordered: Vec<NodeId> = self.tensors().into_iter().map(|t| tape.leaf(t)).collect();
        let mut cur = Cursor(ordered.iter());
        let question_emb = cur.next();
        let kc_emb = cur.next();
        let ka_lstm = cur.lstm();
        let ks_lstm = cur.lstm();
        let ka_head = cur.head();
        let ks_head = cur.head();
        let ps_head = SolverNodes {
            w1: cur.next(),
            b1: cur.next(),
            w2: cur.next(),
            b2: cur.next(),
            w_out: cur.next(),
            b_out: cur.next(),
        };
        let irt = self.irt.as_ref().map(|_| (cur.next(), cur.next()));
        ParamNodes {
            question_emb,
            kc_emb,
            ka_lstm,
            ks_lstm,
            ka_head,
            ks_head,
            ps_head,
            irt,
            ordered,
        }
    }
}

struct Cursor<'i>(std::slice::Iter<'i, NodeId>);

impl Cursor<'_> {
    fn next(&mut self) -> NodeId {
        *self.0.next().expect("canonical tensor order")
    }

    fn lstm(&mut self) -> LstmNodes {
        LstmNodes {
            w: std::array::from_fn(|_| self.next()),
            u: std::array::from_fn(|_| self.next()),
            b: std::array::from_fn(|_| self.next()),
        }
    }

    fn head(&mut self) -> HeadNodes {
        HeadNodes {
            w1: self.next(),
            b1: self.next(),
            w2: self.next(),
            b2: self.next(),
            w_out: self.next(),
        }
    }
}

/// Hidden output and cell memory of a recurrent cell.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape<'_>, d: usize) -> Self {
        Self {
            h: tape.constant(Tensor::zeros(&[d])),
            c: tape.constant(Tensor::zeros(&[d])),
        }
    }
}

/// Mean of the KC embedding rows of `kcs`.
pub fn avg_kc_embedding(tape: &mut Tape<'_>, kc_emb: NodeId, kcs: &[KcId]) -> Result<NodeId> {
    if kcs.is_empty() {
        return Err(Error::Data("question without KCs".into()));
    }
    let rows: Vec<usize> = kcs.iter().map(|k| k.index()).collect();
    tape.mean_rows(kc_emb, &rows)
}

fn check_response(r: u8) -> Result<()> {
    if r > 1 {
        return Err(Error::Domain(format!("response must be 0 or 1, got {r}")));
    }
    Ok(())
}

/// Acquisition input: `q ⊕ k̄ ⊕ 0₂d` for a correct answer, `0₂d ⊕ q ⊕ k̄` otherwise.
pub fn encode_ka(tape: &mut Tape<'_>, q: NodeId, kbar: NodeId, r: u8) -> Result<NodeId> {
    check_response(r)?;
    let d = tape.value(q).len();
    if tape.value(kbar).len() != d {
        return Err(Error::dim("encode_ka", tape.value(q).shape(), tape.value(kbar).shape()));
    }
    let zeros = tape.constant(Tensor::zeros(&[2 * d]));
    if r == 1 {
        tape.concat(&[q, kbar, zeros])
    } else {
        tape.concat(&[zeros, q, kbar])
    }
}

/// Knowledge-state input: `k̄ ⊕ 0_d` for a correct answer, `0_d ⊕ k̄` otherwise.
pub fn encode_ks(tape: &mut Tape<'_>, kbar: NodeId, r: u8) -> Result<NodeId> {
    check_response(r)?;
    let d = tape.value(kbar).len();
    let zeros = tape.constant(Tensor::zeros(&[d]));
    if r == 1 {
        tape.concat(&[kbar, zeros])
    } else {
        tape.concat(&[zeros, kbar])
    }
}

fn affine(tape: &mut Tape<'_>, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
    let wx = tape.matvec(w, x)?;
    tape.add(wx, b)
}

/// One cell update. All four gates, the candidate included, use σ.
pub fn lstm_step(tape: &mut Tape<'_>, x: NodeId, state: LstmState, cell: &LstmNodes) -> Result<LstmState> {
    let mut gates = [x; 4];
    for (g, gate) in gates.iter_mut().enumerate() {
        let wx = tape.matvec(cell.w[g], x)?;
        let uh = tape.matvec(cell.u[g], state.h)?;
        let pre = tape.add(wx, uh)?;
        let pre = tape.add(pre, cell.b[g])?;
        *gate = tape.sigmoid(pre)?;
    }
    let [input, forget, output, candidate] = gates;
    let kept = tape.mul(forget, state.c)?;
    let written = tape.mul(input, candidate)?;
    let c = tape.add(kept, written)?;
    let squashed = tape.tanh(c)?;
    let h = tape.mul(output, squashed)?;
    Ok(LstmState { h, c })
}

/// `w ⊙ ReLU(W2 · ReLU(W1 · x + b1) + b2)`, before pooling.
fn head_vector(tape: &mut Tape<'_>, x: NodeId, head: &HeadNodes) -> Result<NodeId> {
    let hidden = affine(tape, head.w1, x, head.b1)?;
    let hidden = tape.relu(hidden)?;
    let out = affine(tape, head.w2, hidden, head.b2)?;
    let out = tape.relu(out)?;
    tape.mul(head.w_out, out)
}

/// Acquisition score α_t: sum-pooled over all question slots.
pub fn ka_score(tape: &mut Tape<'_>, a: NodeId, head: &HeadNodes) -> Result<NodeId> {
    let v = head_vector(tape, a, head)?;
    tape.sum_pool(v)
}

/// Mastery score β_t and the per-KC vector it pools (pre-sigmoid).
pub fn ks_score(tape: &mut Tape<'_>, g: NodeId, head: &HeadNodes) -> Result<(NodeId, NodeId)> {
    let v = head_vector(tape, g, head)?;
    let beta = tape.sum_pool(v)?;
    Ok((beta, v))
}

/// Application score ζ_{t+1} of the next question.
pub fn ps_score(
    tape: &mut Tape<'_>,
    g: NodeId,
    q_next: NodeId,
    kbar_next: NodeId,
    head: &SolverNodes,
) -> Result<NodeId> {
    let p = tape.concat(&[g, q_next, kbar_next])?;
    let hidden = affine(tape, head.w1, p, head.b1)?;
    let hidden = tape.relu(hidden)?;
    let out = affine(tape, head.w2, hidden, head.b2)?;
    let out = tape.relu(out)?;
    let z = tape.matvec(head.w_out, out)?;
    let z = tape.index(z, 0)?;
    tape.add(z, head.b_out)
}

/// The parameter-free prediction layer σ(α + β + ζ).
pub fn irt_predict(alpha: f64, beta: f64, zeta: f64) -> f64 {
    sigmoid(alpha + beta + zeta)
}

/// Combines the active scores into the prediction logit.
pub fn prediction_logit(
    tape: &mut Tape<'_>,
    variant: Variant,
    irt: Option<(NodeId, NodeId)>,
    alpha: NodeId,
    beta: NodeId,
    zeta: NodeId,
) -> Result<NodeId> {
    if variant.learned_combiner() {
        let (w, b) = irt.ok_or_else(|| Error::Contract("no_irt variant without combiner weights".into()))?;
        let mut acc = b;
        for (i, score) in [alpha, beta, zeta].into_iter().enumerate() {
            let wi = tape.index(w, i)?;
            let term = tape.mul(wi, score)?;
            acc = tape.add(acc, term)?;
        }
        return Ok(acc);
    }
    let mut logit = alpha;
    if variant.uses_beta() {
        logit = tape.add(logit, beta)?;
    }
    if variant.uses_zeta() {
        logit = tape.add(logit, zeta)?;
    }
    Ok(logit)
}

/// Graph handles for one prediction step.
#[derive(Debug, Clone, Copy)]
pub struct StepNodes {
    pub alpha: NodeId,
    pub beta: NodeId,
    pub zeta: NodeId,
    pub r_hat: NodeId,
    pub mastery_logits: NodeId,
}

/// Records the whole sequence; returns one step per target `r_2..r_L`.
pub fn build_sequence(
    tape: &mut Tape<'_>,
    nodes: &ParamNodes,
    config: &ModelConfig,
    seq: &[Interaction],
) -> Result<Vec<StepNodes>> {
    if seq.len() < 2 {
        return Err(Error::Data(format!(
            "sequence needs at least 2 interactions, got {}",
            seq.len()
        )));
    }
    let mut q = Vec::with_capacity(seq.len());
    let mut kbar = Vec::with_capacity(seq.len());
    for it in seq {
        if it.question.index() >= config.n {
            return Err(Error::Index {
                op: "question embedding",
                index: it.question.index(),
                len: config.n,
            });
        }
        q.push(tape.mean_rows(nodes.question_emb, &[it.question.index()])?);
        kbar.push(avg_kc_embedding(tape, nodes.kc_emb, &it.kcs)?);
    }

    let mut ka = LstmState::zeros(tape, config.d);
    let mut ks = LstmState::zeros(tape, config.d);
    let mut steps = Vec::with_capacity(seq.len() - 1);
    for t in 0..seq.len() - 1 {
        let r = seq[t].response;
        let e = encode_ka(tape, q[t], kbar[t], r)?;
        let c = encode_ks(tape, kbar[t], r)?;
        ka = lstm_step(tape, e, ka, &nodes.ka_lstm)?;
        ks = lstm_step(tape, c, ks, &nodes.ks_lstm)?;
        let alpha = ka_score(tape, ka.h, &nodes.ka_head)?;
        let (beta, mastery_logits) = ks_score(tape, ks.h, &nodes.ks_head)?;
        let zeta = ps_score(tape, ks.h, q[t + 1], kbar[t + 1], &nodes.ps_head)?;
        let logit = prediction_logit(tape, config.variant, nodes.irt, alpha, beta, zeta)?;
        let r_hat = tape.sigmoid(logit)?;
        steps.push(StepNodes {
            alpha,
            beta,
            zeta,
            r_hat,
            mastery_logits,
        });
    }
    Ok(steps)
}

/// Values of one prediction step, aligned to target `r_{t+1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutputs {
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub r_hat: f64,
    /// σ of the per-KC head outputs, in (0, 1).
    pub kc_mastery: Vec<f64>,
}

impl StepOutputs {
    pub fn read(tape: &Tape<'_>, step: &StepNodes) -> Result<Self> {
        Ok(Self {
            alpha: tape.scalar(step.alpha)?,
            beta: tape.scalar(step.beta)?,
            zeta: tape.scalar(step.zeta)?,
            r_hat: tape.scalar(step.r_hat)?,
            kc_mastery: tape
                .value(step.mastery_logits)
                .data()
                .iter()
                .map(|&v| sigmoid(v))
                .collect(),
        })
    }
}

pub fn forward_sequence(params: &QiktParams, seq: &[Interaction]) -> Result<Vec<StepOutputs>> {
    let mut tape = Tape::with_capacity(seq.len() * 96);
    let nodes = params.register(&mut tape);
    let steps = build_sequence(&mut tape, &nodes, &params.config, seq)?;
    steps.iter().map(|s| StepOutputs::read(&tape, s)).collect()
}

/// Predicted probabilities only.
pub fn predict_sequence(params: &QiktParams, seq: &[Interaction]) -> Result<Vec<f64>> {
    Ok(forward_sequence(params, seq)?.into_iter().map(|o| o.r_hat).collect())
}
