//! Central finite-difference gradient checker.
//!
//! Rebuilds the graph from perturbed copies of each checked tensor, so the
//! oracle never touches the reverse pass it is validating. Errors are
//! reported as |analytic - fd| / max(|analytic|, |fd|, 1e-3): relative for
//! healthy gradients with an absolute floor where both sides vanish.

use crate::error::Result;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// (tensor index, element index) of the worst disagreement.
    pub worst: (usize, usize),
    pub analytic_at_worst: f64,
    pub fd_at_worst: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares analytic gradients of `build`'s scalar output against central
/// finite differences with step `h`, for every element of every tensor in
/// `inputs`. The builder must register the tensors it is handed (already
/// perturbed as needed) and return the loss node.
pub fn finite_diff<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| tape.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = perturbed.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheck { max_rel_err: 0.0, worst: (0, 0), analytic_at_worst: 0.0, fd_at_worst: 0.0 };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for ti in 0..inputs.len() {
        for ei in 0..inputs[ti].numel() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + h;
            let up = eval(&work)?;
            work[ti].data_mut()[ei] = orig - h;
            let down = eval(&work)?;
            work[ti].data_mut()[ei] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[ti].data()[ei];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            if rel > report.max_rel_err {
                report = GradCheck { max_rel_err: rel, worst: (ti, ei), analytic_at_worst: a, fd_at_worst: fd };
            }
        }
    }
    Ok(report)
}

/// Convenience wrapper asserting the default tolerance.
pub fn assert_grads_match<F>(inputs: &[Tensor<f64>], build: F)
where
    F: Fn(&mut Tape<f64>, &[ValueId]) -> Result<ValueId>,
{
    let report = finite_diff(inputs, DEFAULT_STEP, build).expect("gradient check build failed");
    assert!(
        report.passes(DEFAULT_TOL),
        "gradient mismatch: rel err {} at tensor {} element {} (analytic {}, fd {})",
        report.max_rel_err,
        report.worst.0,
        report.worst.1,
        report.analytic_at_worst,
        report.fd_at_worst
    );
}

/// Store-level variant for model code that binds named parameters: checks
/// the gradient of every element of the listed parameters by perturbing a
/// cloned store and rebuilding the graph.
pub fn finite_diff_store<F>(
    store: &crate::store::ParamStore<f64>,
    names: &[&str],
    h: f64,
    build: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &mut crate::store::Binder<'_, f64>) -> Result<ValueId>,
{
    let mut tape = Tape::new();
    let mut binder = crate::store::Binder::new(store);
    let loss = build(&mut tape, &mut binder)?;
    tape.backward(loss)?;
    let grads = binder.grads(&tape);

    let eval = |s: &crate::store::ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let mut binder = crate::store::Binder::new(s);
        let loss = build(&mut tape, &mut binder)?;
        Ok(tape.value(loss).item())
    };

    let mut report = GradCheck { max_rel_err: 0.0, worst: (0, 0), analytic_at_worst: 0.0, fd_at_worst: 0.0 };
    let mut work = store.clone();
    for (ni, name) in names.iter().enumerate() {
        let n = store.get(name)?.numel();
        let entry = grads.get(*name);
        for ei in 0..n {
            let orig = work.get(name)?.data()[ei];
            work.get_mut(name)?.data_mut()[ei] = orig + h;
            let up = eval(&work)?;
            work.get_mut(name)?.data_mut()[ei] = orig - h;
            let down = eval(&work)?;
            work.get_mut(name)?.data_mut()[ei] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = entry.map(|e| e.grad.data()[ei]).unwrap_or(0.0);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            if rel > report.max_rel_err {
                report = GradCheck { max_rel_err: rel, worst: (ni, ei), analytic_at_worst: a, fd_at_worst: fd };
            }
        }
    }
    Ok(report)
}
