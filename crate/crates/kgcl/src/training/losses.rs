//! Contrastive and fine-tuning loss builders.
//!
//! Both contrastive levels share one InfoNCE form with multiple positives:
//!
//! ```text
//! L = -log( sum_{t in P} e^{cos(a, t)/tau} / sum_{k in P u N} e^{cos(a, k)/tau} )
//! ```
//!
//! computed as `logsumexp(all) - logsumexp(positives)` so that an empty
//! negative set yields exactly zero.

use crate::error::{Error, Result};
use crate::tensor::{Tape, VarId};

/// Floor for probabilities before `log` in the fine-tune objective.
pub const LOG_CLAMP: f64 = 1e-12;

fn info_nce(
    tape: &mut Tape,
    anchor: VarId,
    positives: &[VarId],
    negatives: &[VarId],
    tau: f64,
) -> Result<VarId> {
    if positives.is_empty() {
        return Err(Error::Precondition(
            "contrastive loss needs at least one positive".into(),
        ));
    }
    if tau <= 0.0 {
        return Err(Error::Precondition("temperature must be positive".into()));
    }
    let inv_tau = 1.0 / tau;
    let mut sims = Vec::with_capacity(positives.len() + negatives.len());
    for &sample in positives.iter().chain(negatives.iter()) {
        let cos = tape.cosine(anchor, sample)?;
        sims.push(tape.scale(cos, inv_tau)?);
    }
    let pos_vec = tape.stack_scalars(&sims[..positives.len()])?;
    let all_vec = tape.stack_scalars(&sims)?;
    let lse_pos = tape.logsumexp(pos_vec)?;
    let lse_all = tape.logsumexp(all_vec)?;
    tape.sub(lse_all, lse_pos)
}

/// Contextual-level loss over context-view embeddings.
pub fn contextual_loss(
    tape: &mut Tape,
    anchor: VarId,
    positives: &[VarId],
    negatives: &[VarId],
    tau: f64,
) -> Result<VarId> {
    info_nce(tape, anchor, positives, negatives, tau)
}

/// Global-level cross-view loss: anchor and positives are projected
/// context-view embeddings, negatives are projected structure-view
/// embeddings.
pub fn global_loss(
    tape: &mut Tape,
    anchor_proj: VarId,
    positive_projs: &[VarId],
    negative_structure_projs: &[VarId],
    tau: f64,
) -> Result<VarId> {
    info_nce(tape, anchor_proj, positive_projs, negative_structure_projs, tau)
}

/// Per-anchor losses of one pre-training batch. A level disabled by
/// configuration is absent.
#[derive(Clone, Copy, Debug)]
pub struct AnchorLosses {
    pub contextual: Option<VarId>,
    pub global: Option<VarId>,
}

/// Mean of scalar vars in order; an empty list is a zero leaf.
pub fn mean_scalars(tape: &mut Tape, vars: &[VarId]) -> Result<VarId> {
    if vars.is_empty() {
        return Ok(tape.scalar(0.0));
    }
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    tape.scale(acc, 1.0 / vars.len() as f64)
}

/// Joint pre-training objective: mean over anchors of
/// `lambda * L_global + (1 - lambda) * L_contextual`. Anchors with empty
/// positive sets never reach this function; when a level is disabled the
/// other level enters at full weight.
pub fn joint_pretrain_loss(
    tape: &mut Tape,
    per_anchor: &[AnchorLosses],
    lambda: f64,
) -> Result<VarId> {
    let mut terms = Vec::with_capacity(per_anchor.len());
    for al in per_anchor {
        let term = match (al.global, al.contextual) {
            (Some(g), Some(c)) => {
                let gw = tape.scale(g, lambda)?;
                let cw = tape.scale(c, 1.0 - lambda)?;
                tape.add(gw, cw)?
            }
            (Some(g), None) => g,
            (None, Some(c)) => c,
            (None, None) => {
                return Err(Error::Precondition(
                    "anchor contributes no loss at any level".into(),
                ))
            }
        };
        terms.push(term);
    }
    if per_anchor.is_empty() {
        log::warn!("joint loss over an empty batch; every anchor was skipped");
    }
    mean_scalars(tape, &terms)
}

/// Link-prediction probability: `sigmoid(c_s . c_o)`.
pub fn triple_score(tape: &mut Tape, c_s_r: VarId, c_o: VarId) -> Result<VarId> {
    let d = tape.dot(c_s_r, c_o)?;
    tape.sigmoid(d)
}

/// Negative log-likelihood over scored positives and negatives, arguments
/// clamped at `1e-12` before `log`.
pub fn finetune_loss(
    tape: &mut Tape,
    positive_scores: &[VarId],
    negative_scores: &[VarId],
) -> Result<VarId> {
    let one = tape.scalar(1.0);
    let mut terms = Vec::with_capacity(positive_scores.len() + negative_scores.len());
    for &p in positive_scores {
        let clamped = tape.clamp_min(p, LOG_CLAMP)?;
        terms.push(tape.log(clamped)?);
    }
    for &n in negative_scores {
        let flipped = tape.sub(one, n)?;
        let clamped = tape.clamp_min(flipped, LOG_CLAMP)?;
        terms.push(tape.log(clamped)?);
    }
    let stacked = tape.stack_scalars(&terms)?;
    let total = tape.sum_all(stacked)?;
    tape.scale(total, -1.0)
}
