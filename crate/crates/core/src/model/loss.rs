use super::config::Variant;
use super::forward::StepNodes;
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Sum over steps of `BCE(r̂) + λ·(BCE(σα) + BCE(σβ) + BCE(σζ))`, with the
/// terms of ablated scores left out. Every term targets `r_{t+1}`.
pub fn joint_loss_sum(
    tape: &mut Tape<'_>,
    steps: &[StepNodes],
    targets: &[u8],
    lambda: f64,
    variant: Variant,
) -> Result<NodeId> {
    if steps.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} predictions but {} targets",
            steps.len(),
            targets.len()
        )));
    }
    let mut main: Option<NodeId> = None;
    let mut aux: Option<NodeId> = None;
    let accumulate = |tape: &mut Tape<'_>, acc: &mut Option<NodeId>, term: NodeId| -> Result<()> {
        *acc = Some(match *acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
        Ok(())
    };
    for (step, &r) in steps.iter().zip(targets) {
        let target = f64::from(r);
        let l = tape.bce(step.r_hat, target)?;
        accumulate(tape, &mut main, l)?;
        if lambda == 0.0 {
            continue;
        }
        let mut scores = vec![step.alpha];
        if variant.uses_beta() {
            scores.push(step.beta);
        }
        if variant.uses_zeta() {
            scores.push(step.zeta);
        }
        for score in scores {
            let p = tape.sigmoid(score)?;
            let l = tape.bce(p, target)?;
            accumulate(tape, &mut aux, l)?;
        }
    }
    let main = match main {
        Some(m) => m,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    match aux {
        Some(a) => {
            let weighted = tape.scale(a, lambda);
            tape.add(main, weighted)
        }
        None => Ok(main),
    }
}

/// [`joint_loss_sum`] averaged over predictions.
pub fn joint_loss(
    tape: &mut Tape<'_>,
    steps: &[StepNodes],
    targets: &[u8],
    lambda: f64,
    variant: Variant,
) -> Result<NodeId> {
    if steps.is_empty() {
        return Err(Error::Contract("loss over zero predictions".into()));
    }
    let sum = joint_loss_sum(tape, steps, targets, lambda, variant)?;
    Ok(tape.scale(sum, 1.0 / steps.len() as f64))
}
