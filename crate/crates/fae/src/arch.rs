//! Discrete architecture description and its on-disk form.
//!
//! Serialized as versioned JSON. Floats survive the round trip bit-exactly
//! (f64 formatting is shortest-round-trip).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FaeError, Result};
use crate::ops::{CellOp, OpSetKind};

pub const ARCH_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FePosition {
    /// Enhancement before the top-down path.
    Before,
    /// Between the top-down and bottom-up paths.
    #[default]
    Middle,
    /// After the bottom-up path.
    After,
}

impl FePosition {
    pub const ALL: [FePosition; 3] = [FePosition::Before, FePosition::Middle, FePosition::After];

    pub fn name(self) -> &'static str {
        match self {
            FePosition::Before => "before",
            FePosition::Middle => "middle",
            FePosition::After => "after",
        }
    }
}

/// One aggregation cell after discretization: which candidate-pool entries
/// stay connected, and the retained importance pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaCellArch {
    pub retained: Vec<usize>,
    pub beta: [f64; 2],
}

/// One enhancement DAG: exactly one (from, op) edge per non-input node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeCellArch {
    pub num_nodes: usize,
    /// (from, to, op), sorted by `to`; every node 1..num_nodes appears once.
    pub edges: Vec<(usize, usize, CellOp)>,
}

impl FeCellArch {
    /// Parent of each non-input node, indexed by node-1.
    pub fn parents(&self) -> Vec<usize> {
        self.edges.iter().map(|&(from, _, _)| from).collect()
    }

    /// Nodes that feed no later node (the cell output is their sum).
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.num_nodes)
            .filter(|&i| !self.edges.iter().any(|&(from, _, _)| from == i))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_nodes < 2 {
            return Err(FaeError::BadArch(format!("cell needs >= 2 nodes, got {}", self.num_nodes)));
        }
        if self.edges.len() != self.num_nodes - 1 {
            return Err(FaeError::BadArch(format!(
                "{} edges for {} nodes; every non-input node needs exactly one",
                self.edges.len(),
                self.num_nodes
            )));
        }
        for (idx, &(from, to, _)) in self.edges.iter().enumerate() {
            if to != idx + 1 {
                return Err(FaeError::BadArch(format!("edge list must cover nodes in order, found to={to} at {idx}")));
            }
            if from >= to {
                return Err(FaeError::BadArch(format!("edge {from}->{to} is not forward")));
            }
        }
        Ok(())
    }
}

/// Full discrete neck: per-path aggregation cells (in traversal order),
/// per-level enhancement DAGs, the enhancement position, and the stack
/// layout (per stacked block: does its enhancement stage run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteArch {
    pub version: u32,
    pub levels: usize,
    pub fe_position: FePosition,
    pub op_set: OpSetKind,
    pub top_down: Vec<FaCellArch>,
    pub bottom_up: Vec<FaCellArch>,
    /// One enhancement cell per pyramid level (fine to coarse).
    pub fe: Vec<FeCellArch>,
    /// Stack layout: one flag per stacked block, true = enhancement active.
    pub stack_fe: Vec<bool>,
}

impl DiscreteArch {
    pub fn validate(&self) -> Result<()> {
        if self.version != ARCH_VERSION {
            return Err(FaeError::BadArch(format!("unsupported version {}", self.version)));
        }
        if self.top_down.len() != self.levels || self.bottom_up.len() != self.levels {
            return Err(FaeError::BadArch("one aggregation cell per level per path".into()));
        }
        if self.fe.len() != self.levels {
            return Err(FaeError::BadArch("one enhancement cell per level".into()));
        }
        for (k, cell) in self.top_down.iter().chain(self.bottom_up.iter()).enumerate() {
            let pool = k % self.levels;
            if pool == 0 && !cell.retained.is_empty() {
                return Err(FaeError::BadArch("first cell in a path has an empty candidate pool".into()));
            }
            if pool > 0 && cell.retained.is_empty() {
                return Err(FaeError::BadArch(format!("cell {pool} retained set is empty")));
            }
            if cell.retained.iter().any(|&j| j >= pool.max(1)) {
                return Err(FaeError::BadArch(format!("cell {pool} retains an index outside its pool")));
            }
        }
        for cell in &self.fe {
            cell.validate()?;
            for &(_, _, op) in &cell.edges {
                if !self.op_set.ops().contains(&op) {
                    return Err(FaeError::BadArch(format!("op {} not in the configured set", op.name())));
                }
            }
        }
        if self.stack_fe.is_empty() {
            return Err(FaeError::BadArch("stack layout must have at least one block".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| FaeError::ArchIo(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| FaeError::ArchIo(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FaeError::ArchIo(e.to_string()))?;
        let arch: DiscreteArch = serde_json::from_str(&text).map_err(|e| FaeError::ArchIo(e.to_string()))?;
        arch.validate()?;
        Ok(arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> DiscreteArch {
        DiscreteArch {
            version: ARCH_VERSION,
            levels: 2,
            fe_position: FePosition::Middle,
            op_set: OpSetKind::Extended,
            top_down: vec![
                FaCellArch { retained: vec![], beta: [1.0, 1.0] },
                FaCellArch { retained: vec![0], beta: [0.25, 1.75] },
            ],
            bottom_up: vec![
                FaCellArch { retained: vec![], beta: [1.0, 1.0] },
                FaCellArch { retained: vec![0], beta: [1.0, 0.5] },
            ],
            fe: vec![
                FeCellArch { num_nodes: 3, edges: vec![(0, 1, CellOp::Conv1x3), (0, 2, CellOp::Conv3x3D2)] },
                FeCellArch { num_nodes: 2, edges: vec![(0, 1, CellOp::Conv5x5)] },
            ],
            stack_fe: vec![true],
        }
    }

    #[test]
    fn round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("arch.json");
        let mut arch = tiny_arch();
        arch.top_down[1].beta = [0.1 + 0.2, 1.0 / 3.0]; // awkward floats on purpose
        arch.save(&path).unwrap();
        let loaded = DiscreteArch::load(&path).unwrap();
        assert_eq!(arch, loaded);
        assert_eq!(arch.top_down[1].beta[0].to_bits(), loaded.top_down[1].beta[0].to_bits());
        // Saving the loaded copy reproduces the file byte for byte.
        let path2 = dir.path().join("arch2.json");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn leaves_of_chain_and_fan_out() {
        let chain = FeCellArch {
            num_nodes: 4,
            edges: vec![(0, 1, CellOp::Conv1x1), (1, 2, CellOp::Conv1x1), (2, 3, CellOp::Conv1x1)],
        };
        assert_eq!(chain.leaves(), vec![3]);
        let fan = FeCellArch { num_nodes: 3, edges: vec![(0, 1, CellOp::Conv1x1), (0, 2, CellOp::Conv1x1)] };
        assert_eq!(fan.leaves(), vec![1, 2]);
    }

    #[test]
    fn validation_rejects_malformed_dags() {
        let mut bad = tiny_arch();
        bad.fe[0].edges.pop(); // node 2 unreachable
        assert!(bad.validate().is_err());
        let mut bad = tiny_arch();
        bad.top_down[1].retained = vec![3];
        assert!(bad.validate().is_err());
    }
}
