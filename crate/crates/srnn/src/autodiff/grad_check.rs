//! Central-finite-difference verification of reverse-mode gradients.
//!
//! The finite-difference side rebuilds the tape from perturbed copies of the
//! parameters and never touches the adjoint machinery, so the two gradient
//! routes stay independent.

use crate::error::Result;

use super::matrix::Matrix;
use super::tape::{NodeId, Tape};

/// Worst relative error observed for one named parameter.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub step: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err <= self.tolerance)
    }
}

/// Compare reverse-mode gradients against central finite differences.
///
/// `build` must be deterministic (dropout in eval mode, fixed inputs): it is
/// invoked once per perturbed parameter entry. Relative error per entry is
/// |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
pub fn grad_check(
    params: &[(&str, Matrix)],
    mut build: impl FnMut(&mut Tape, &[NodeId]) -> Result<NodeId>,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let ad_grads = {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = params
            .iter()
            .map(|(_, m)| tape.parameter(m.clone()))
            .collect();
        let loss = build(&mut tape, &ids)?;
        tape.backward(loss)?;
        ids.iter()
            .map(|&id| tape.adjoint(id).clone())
            .collect::<Vec<_>>()
    };

    let mut work: Vec<Matrix> = params.iter().map(|(_, m)| m.clone()).collect();
    let mut entries = Vec::with_capacity(params.len());
    for (pi, (name, _)) in params.iter().enumerate() {
        let mut max_rel = 0.0f64;
        for k in 0..work[pi].len() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + step;
            let plus = eval_loss(&work, &mut build)?;
            work[pi].data_mut()[k] = orig - step;
            let minus = eval_loss(&work, &mut build)?;
            work[pi].data_mut()[k] = orig;

            let fd = (plus - minus) / (2.0 * step);
            let ad = ad_grads[pi].data()[k];
            let rel = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        entries.push(GradCheckEntry {
            name: name.to_string(),
            max_rel_err: max_rel,
        });
    }
    Ok(GradCheckReport {
        entries,
        step,
        tolerance,
    })
}

fn eval_loss(
    params: &[Matrix],
    build: &mut impl FnMut(&mut Tape, &[NodeId]) -> Result<NodeId>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|m| tape.parameter(m.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    Ok(tape.value(loss).get(0, 0))
}
