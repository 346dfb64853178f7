//! Enhancement cells: per-level DAGs where every non-input node takes one
//! predecessor through a mixed candidate operation.
//!
//! During search the incoming edge is a hard categorical sample
//! h = onehot(argmax(kappa + gumbel)), relaxed in the backward pass by
//! h~ = softmax((kappa + gumbel) / tau); the operation on the chosen edge is
//! the softmax(gamma)-weighted sum over the candidate set. The cell output
//! is the sum of leaf nodes (nodes that feed no later node).

use nasdet_autodiff::{Binder, Scalar, Tape, Tensor, ValueId};
use rand::Rng;

use crate::arch::FeCellArch;
use crate::error::{FaeError, Result};
use crate::neck::{op_conv, NeckConfig, WidthSlice};
use crate::ops::{CellOp, OpSetKind};

/// Snapshot of one cell's architecture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FeCellParams {
    pub num_nodes: usize,
    /// kappa[i-1][j]: connection logit for edge j -> i (j < i).
    pub kappa: Vec<Vec<f64>>,
    /// gamma[i-1][j][op]: operation logits for edge j -> i.
    pub gamma: Vec<Vec<Vec<f64>>>,
}

impl FeCellParams {
    pub fn validate(&self, op_set: OpSetKind) -> Result<()> {
        if self.num_nodes < 2 {
            return Err(FaeError::BadCell(format!("need >= 2 nodes, got {}", self.num_nodes)));
        }
        for i in 1..self.num_nodes {
            if self.kappa[i - 1].len() != i || self.gamma[i - 1].len() != i {
                return Err(FaeError::BadCell(format!("node {i} needs {i} incoming edges")));
            }
            for g in &self.gamma[i - 1] {
                if g.len() != op_set.len() {
                    return Err(FaeError::BadCell("gamma length must match the op set".into()));
                }
            }
        }
        Ok(())
    }
}

/// i.i.d. Gumbel(0,1) draws: -ln(-ln(u)).
pub fn sample_gumbel<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>().max(1e-300);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Per-node noise vectors for one cell (node i draws i values).
pub fn sample_fe_noise<R: Rng>(rng: &mut R, num_nodes: usize) -> Vec<Vec<f64>> {
    (1..num_nodes).map(|i| sample_gumbel(rng, i)).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let _ = values[best];
    best
}

/// Hard/soft edge selection given explicit noise: returns the one-hot index
/// argmax(kappa + noise) and the relaxed weights softmax((kappa + noise)/tau).
pub fn gumbel_edge_select_with_noise(kappa: &[f64], noise: &[f64], tau: f64) -> (usize, Vec<f64>) {
    assert!(tau > 0.0, "temperature must be positive");
    assert!(!kappa.is_empty() && kappa.len() == noise.len());
    let perturbed: Vec<f64> = kappa.iter().zip(noise).map(|(k, o)| k + o).collect();
    let hard = argmax(&perturbed);
    let soft = crate::fa::softmax(&perturbed.iter().map(|v| v / tau).collect::<Vec<_>>());
    (hard, soft)
}

/// Sampling form of the edge selector.
pub fn gumbel_edge_select<R: Rng>(kappa: &[f64], tau: f64, rng: &mut R) -> (usize, Vec<f64>) {
    let noise = sample_gumbel(rng, kappa.len());
    gumbel_edge_select_with_noise(kappa, &noise, tau)
}

/// Keep, per node, the incoming edge with maximal kappa and on it the op
/// with maximal gamma. Forward-only edges make the result acyclic by
/// construction.
pub fn discretize_fe(params: &FeCellParams, op_set: OpSetKind) -> Result<FeCellArch> {
    params.validate(op_set)?;
    let ops = op_set.ops();
    let mut edges = Vec::with_capacity(params.num_nodes - 1);
    for i in 1..params.num_nodes {
        let from = argmax(&params.kappa[i - 1]);
        let op = ops[argmax(&params.gamma[i - 1][from])];
        edges.push((from, i, op));
    }
    let cell = FeCellArch { num_nodes: params.num_nodes, edges };
    cell.validate()?;
    Ok(cell)
}

/// Mixed candidate operation on one edge: sum over the op set weighted by
/// softmax(gamma). In discrete form only the chosen op runs.
#[allow(clippy::too_many_arguments)]
pub fn mixed_op<T: Scalar>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    cfg: &NeckConfig,
    width: WidthSlice,
    edge_prefix: &str,
    gamma_name: &str,
    feat: ValueId,
) -> Result<ValueId> {
    let ops = cfg.op_set.ops();
    let mut branches = Vec::with_capacity(ops.len());
    for op in ops {
        branches.push(op_conv(tape, binder, cfg, width, edge_prefix, *op, feat)?);
    }
    let logits = binder.param(tape, gamma_name)?;
    let gamma = tape.softmax_t(logits, 1.0)?;
    tape.weighted_sum(&branches, gamma).map_err(Into::into)
}

pub enum FeMode<'a> {
    /// Gumbel-sampled topology; noise[i-1] holds node i's draws.
    Search { tau: f64, noise: &'a [Vec<f64>] },
    Discrete { cell: &'a FeCellArch },
}

/// Runs one enhancement cell on the tape. `prefix` scopes the op weights
/// ("{prefix}fe.l{level}..."), and search-time kappa/gamma live under
/// "arch.fe.l{level}...".
#[allow(clippy::too_many_arguments)]
pub fn fe_cell_forward<T: Scalar>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    cfg: &NeckConfig,
    width: WidthSlice,
    prefix: &str,
    level: usize,
    input: ValueId,
    mode: FeMode<'_>,
) -> Result<ValueId> {
    let num_nodes = match &mode {
        FeMode::Search { noise, .. } => {
            if noise.len() != cfg.fe_nodes - 1 {
                return Err(FaeError::BadCell(format!(
                    "noise for {} nodes, cell has {}",
                    noise.len() + 1,
                    cfg.fe_nodes
                )));
            }
            cfg.fe_nodes
        }
        FeMode::Discrete { cell } => {
            cell.validate()?;
            cell.num_nodes
        }
    };
    if num_nodes < 2 {
        return Err(FaeError::BadCell("enhancement cell needs at least 2 nodes".into()));
    }

    let mut nodes: Vec<ValueId> = Vec::with_capacity(num_nodes);
    nodes.push(input);
    // fed[i]: node i is the selected input of some later node.
    let mut fed = vec![false; num_nodes];

    match mode {
        FeMode::Search { tau, noise } => {
            for i in 1..num_nodes {
                let kappa_name = format!("arch.fe.l{level}.n{i}.kappa");
                let kappa_id = binder.param(tape, &kappa_name)?;
                let noise_vals = &noise[i - 1];
                let noise_id = tape.input(Tensor::from_slice_vec(
                    &noise_vals.iter().map(|&v| T::from_f64(v)).collect::<Vec<_>>(),
                ));
                let perturbed = tape.add(kappa_id, noise_id)?;
                let soft = tape.softmax_t(perturbed, tau)?;
                let hard = {
                    let vals: Vec<f64> = tape.value(perturbed).data().iter().map(|v| v.to_f64()).collect();
                    argmax(&vals)
                };
                let edge_prefix = format!("{prefix}fe.l{level}.e{hard}_{i}");
                let gamma_name = format!("arch.fe.l{level}.e{hard}_{i}.gamma");
                let feat = mixed_op(tape, binder, cfg, width, &edge_prefix, &gamma_name, nodes[hard])?;
                let out = tape.st_gumbel_combine(feat, soft, hard)?;
                nodes.push(out);
                fed[hard] = true;
            }
        }
        FeMode::Discrete { cell } => {
            for &(from, to, op) in &cell.edges {
                let edge_prefix = format!("{prefix}fe.l{level}.e{from}_{to}");
                let out = op_conv(tape, binder, cfg, width, &edge_prefix, op, nodes[from])?;
                nodes.push(out);
                fed[from] = true;
            }
        }
    }

    // Output = sum of leaves (nodes never selected as an input).
    let leaves: Vec<ValueId> =
        (0..num_nodes).filter(|&i| !fed[i]).map(|i| nodes[i]).collect();
    debug_assert!(!leaves.is_empty());
    let mut acc = leaves[0];
    for &l in &leaves[1..] {
        acc = tape.add(acc, l)?;
    }
    Ok(acc)
}

/// Reference enhancement topologies used by the probe harness, expressed as
/// ordinary discrete cells over the op set.
pub fn aspp_like_cell() -> FeCellArch {
    FeCellArch {
        num_nodes: 4,
        edges: vec![(0, 1, CellOp::Conv1x1), (0, 2, CellOp::Conv3x3D2), (0, 3, CellOp::Conv3x3D3)],
    }
}

pub fn rfe_like_cell() -> FeCellArch {
    FeCellArch {
        num_nodes: 5,
        edges: vec![
            (0, 1, CellOp::Conv1x3),
            (0, 2, CellOp::Conv3x1),
            (0, 3, CellOp::Conv1x5),
            (0, 4, CellOp::Conv5x1),
        ],
    }
}
