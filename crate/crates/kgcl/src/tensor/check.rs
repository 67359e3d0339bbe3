//! Central finite-difference gradient verification.

use super::{Tape, Tensor, VarId};
use crate::error::Result;

/// Compare tape gradients of a scalar-valued builder against central finite
/// differences over every element of every input tensor.
///
/// `build` must be deterministic: it is re-run once per perturbed element
/// (plus once for the analytic pass) and must construct the same expression
/// each time. Relative error uses a `max(1, |analytic|)` denominator; the
/// maximum over all elements is returned.
pub fn check_gradients<F>(build: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let leaves: Vec<VarId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = build(&mut tape, &leaves)?;
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = leaves
        .iter()
        .zip(params)
        .map(|(&l, p)| grads.get_or_zeros(l, p.shape()))
        .collect();

    let eval = |work: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<VarId> = work.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = build(&mut tape, &leaves)?;
        tape.value(root).item()
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel = 0.0f64;
    for ti in 0..params.len() {
        for j in 0..params[ti].len() {
            let orig = params[ti].data()[j];
            work[ti].data_mut()[j] = orig + eps;
            let fp = eval(&work)?;
            work[ti].data_mut()[j] = orig - eps;
            let fm = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let an = analytic[ti].data()[j];
            let rel = (fd - an).abs() / an.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
