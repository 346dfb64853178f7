//! Aggregation cells and paths.
//!
//! A cell mixes the active pyramid feature with a weighted sum of previously
//! aggregated candidates:
//!
//!   continuous: C = f_post(b0 * F + b1 * f_pre(sum_j alpha_j * resize(C_j)))
//!   discrete:   T = f_pre(sum_{j in retained} resize(C_j)),
//!               C = f_post(b0 * F + b1 * T)
//!
//! with alpha the softmax of free logits (temperature 1) so it stays on the
//! simplex, and beta applied raw. The first cell of a path has an empty
//! candidate pool and reduces to C = f_post(b0 * F). f_pre is a plain
//! convolution; f_post is a convolution followed by group norm, which pins
//! the activation scale so stacked cells keep unit variance under the raw
//! beta sum.

use nasdet_autodiff::{Binder, Scalar, Shape, Tape, ValueId};
use serde::{Deserialize, Serialize};

use crate::error::{FaeError, Result};
use crate::neck::{cell_conv, NeckConfig, WidthSlice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathDirection {
    /// Coarsest stride first (P5 -> P2 on the toy pyramid).
    TopDown,
    /// Reversed order.
    BottomUp,
}

impl PathDirection {
    pub fn tag(self) -> &'static str {
        match self {
            PathDirection::TopDown => "td",
            PathDirection::BottomUp => "bu",
        }
    }
}

/// Snapshot of one cell's architecture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FaCellParams {
    /// Free logits over the candidate pool; empty for the first cell.
    pub alpha_logits: Vec<f64>,
    pub beta: [f64; 2],
}

impl FaCellParams {
    /// Relaxed connection probabilities (softmax at temperature 1).
    pub fn relaxed_alpha(&self) -> Vec<f64> {
        softmax(&self.alpha_logits)
    }
}

/// One aggregation path: an ordered run of cells, one per pyramid level in
/// traversal order. Cell k sees exactly k candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct FaPath {
    pub direction: PathDirection,
    pub cells: Vec<FaCellParams>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Keep candidates with relaxed probability >= 0.5; if the rule retains
/// nothing (possible once the pool has 3+ entries), fall back to the argmax
/// so the level stays connected.
pub fn discretize_fa(params: &FaCellParams) -> Vec<usize> {
    let alpha = params.relaxed_alpha();
    let retained: Vec<usize> =
        alpha.iter().enumerate().filter(|&(_, &p)| p >= 0.5).map(|(j, _)| j).collect();
    if !retained.is_empty() || alpha.is_empty() {
        return retained;
    }
    let argmax = alpha
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(j, _)| j)
        .unwrap();
    vec![argmax]
}

/// Matches a feature to a target spatial size by whole octaves: bilinear 2x
/// per octave up, stride-2 max pooling per octave down.
pub fn resize_to<T: Scalar>(tape: &mut Tape<T>, feat: ValueId, target: Shape) -> Result<ValueId> {
    let mut id = feat;
    let mut shape = tape.shape(feat);
    if shape.c != target.c {
        return Err(FaeError::BadResize { from_shape: shape.to_string(), to_shape: target.to_string() });
    }
    while shape.h > target.h && shape.w > target.w {
        id = tape.maxpool2(id)?;
        shape = tape.shape(id);
    }
    while shape.h < target.h && shape.w < target.w {
        id = tape.upsample2x(id)?;
        shape = tape.shape(id);
    }
    if (shape.h, shape.w) != (target.h, target.w) {
        return Err(FaeError::BadResize { from_shape: tape.shape(feat).to_string(), to_shape: target.to_string() });
    }
    Ok(id)
}

/// How an aggregation cell runs on the tape.
#[derive(Clone, Copy)]
pub enum FaMode<'a> {
    /// Relaxed alpha/beta read from `arch.*` parameters.
    Search,
    /// Fixed retained set; beta bound as a trainable parameter under the
    /// weight prefix (or as a constant when frozen).
    Discrete { retained: &'a [usize], beta_init: [f64; 2] },
}

/// Runs one cell. `prefix` scopes the convolution weights (and the discrete
/// beta); `arch_tag` like "td.c2" scopes the search-time alpha/beta.
#[allow(clippy::too_many_arguments)]
pub fn fa_cell_forward<T: Scalar>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    cfg: &NeckConfig,
    width: WidthSlice,
    prefix: &str,
    arch_tag: &str,
    pyramid_feat: ValueId,
    candidates: &[ValueId],
    mode: FaMode<'_>,
) -> Result<ValueId> {
    let target = tape.shape(pyramid_feat);

    let beta = match mode {
        FaMode::Search => binder.param(tape, &format!("arch.{arch_tag}.beta"))?,
        FaMode::Discrete { beta_init, .. } => {
            if cfg.beta_frozen {
                tape.input(nasdet_autodiff::Tensor::from_slice_vec(&[
                    T::from_f64(beta_init[0]),
                    T::from_f64(beta_init[1]),
                ]))
            } else {
                binder.param(tape, &format!("{prefix}{arch_tag}.beta"))?
            }
        }
    };

    // Candidate branch: weighted (search) or indicator (discrete) sum of the
    // resized pool, passed through f_pre.
    let pre = match mode {
        FaMode::Search => {
            if candidates.is_empty() {
                None
            } else {
                let mut resized = Vec::with_capacity(candidates.len());
                for &c in candidates {
                    resized.push(resize_to(tape, c, target)?);
                }
                let logits = binder.param(tape, &format!("arch.{arch_tag}.alpha"))?;
                let alpha = tape.softmax_t(logits, 1.0)?;
                let mixed = tape.weighted_sum(&resized, alpha)?;
                Some(cell_conv(tape, binder, cfg, width, &format!("{prefix}{arch_tag}.pre"), mixed, false)?)
            }
        }
        FaMode::Discrete { retained, .. } => {
            if retained.is_empty() {
                None
            } else {
                let mut acc: Option<ValueId> = None;
                for &j in retained {
                    if j >= candidates.len() {
                        return Err(FaeError::BadArch(format!(
                            "retained index {j} outside pool of {}",
                            candidates.len()
                        )));
                    }
                    let r = resize_to(tape, candidates[j], target)?;
                    acc = Some(match acc {
                        None => r,
                        Some(prev) => tape.add(prev, r)?,
                    });
                }
                Some(cell_conv(tape, binder, cfg, width, &format!("{prefix}{arch_tag}.pre"), acc.unwrap(), false)?)
            }
        }
    };

    let combined = match pre {
        Some(t) => tape.weighted_sum(&[pyramid_feat, t], beta)?,
        None => {
            // First cell of a path: no candidate branch, keep b0 * F.
            let b0 = tape.index_vec(beta, 0)?;
            tape.scale_by_scalar(pyramid_feat, b0)?
        }
    };
    cell_conv(tape, binder, cfg, width, &format!("{prefix}{arch_tag}.post"), combined, true).map_err(Into::into)
}

/// Discrete per-cell data carried by the path runner.
pub enum PathMode<'a> {
    Search,
    Discrete { cells: &'a [crate::arch::FaCellArch] },
}

/// Runs a whole path over the pyramid (input ordered fine -> coarse).
/// Each produced feature joins the candidate pool for later cells. Returns
/// aggregated features in the same fine -> coarse order as the input.
#[allow(clippy::too_many_arguments)]
pub fn fa_path_forward<T: Scalar>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    cfg: &NeckConfig,
    width: WidthSlice,
    prefix: &str,
    direction: PathDirection,
    pyramid: &[ValueId],
    mode: &PathMode<'_>,
) -> Result<Vec<ValueId>> {
    let levels = pyramid.len();
    let visit: Vec<usize> = match direction {
        PathDirection::TopDown => (0..levels).rev().collect(),
        PathDirection::BottomUp => (0..levels).collect(),
    };
    let mut pool: Vec<ValueId> = Vec::with_capacity(levels);
    let mut out = vec![None; levels];
    for (k, &level) in visit.iter().enumerate() {
        let arch_tag = format!("{}.c{}", direction.tag(), k);
        let cell_mode = match mode {
            PathMode::Search => FaMode::Search,
            PathMode::Discrete { cells } => {
                let cell = &cells[k];
                FaMode::Discrete { retained: &cell.retained, beta_init: cell.beta }
            }
        };
        let produced =
            fa_cell_forward(tape, binder, cfg, width, prefix, &arch_tag, pyramid[level], &pool, cell_mode)?;
        pool.push(produced);
        out[level] = Some(produced);
    }
    Ok(out.into_iter().map(|v| v.unwrap()).collect())
}
