//! Central finite-difference verification of tape gradients.

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub finite: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.finite && p.max_rel_err < self.tol)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    /// Names of parameters that failed, non-finite ones included.
    pub fn failures(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| !p.finite || p.max_rel_err >= self.tol)
            .map(|p| p.name.as_str())
            .collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares supplied analytic gradients against central differences of `f`.
pub fn compare_gradients<F>(
    f: F,
    params: &[(String, Tensor)],
    analytic: &[Tensor],
    h: f64,
    tol: f64,
) -> GradCheckReport
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut checks = Vec::with_capacity(params.len());
    for (pi, (name, _)) in params.iter().enumerate() {
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            finite: analytic[pi].is_finite(),
        };
        for j in 0..values[pi].len() {
            let orig = values[pi].data()[j];
            values[pi].data_mut()[j] = orig + h;
            let plus = f(&values);
            values[pi].data_mut()[j] = orig - h;
            let minus = f(&values);
            values[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            if !numeric.is_finite() {
                check.finite = false;
                check.worst_index = j;
                break;
            }
            let err = relative_error(analytic[pi].data()[j], numeric);
            if err > check.max_rel_err {
                check.max_rel_err = err;
                check.worst_index = j;
            }
        }
        checks.push(check);
    }
    GradCheckReport {
        params: checks,
        tol,
    }
}

/// Builds the graph with `build`, differentiates it on the tape and checks
/// every parameter entry against central differences with step `h`.
pub fn grad_check<F>(build: F, params: &[(String, Tensor)], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &[NodeId]) -> Result<NodeId>,
{
    let analytic = {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params.iter().map(|(_, t)| tape.leaf(t)).collect();
        let loss = build(&mut tape, &ids)?;
        let grads = tape.backward(loss)?;
        ids.iter()
            .zip(params)
            .map(|(&id, (_, t))| grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect::<Vec<_>>()
    };
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|t| tape.leaf(t)).collect();
        match build(&mut tape, &ids).and_then(|l| tape.scalar(l)) {
            Ok(v) => v,
            Err(_) => f64::NAN,
        }
    };
    Ok(compare_gradients(eval, params, &analytic, h, tol))
}
