//! Candidate operation set for enhancement cells.
//!
//! Every op is a same-padded, channel-preserving convolution, so any DAG
//! built from them preserves feature shape. The base set holds the seven
//! kernel shapes; the extended set adds two dilated 3x3 variants.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellOp {
    Conv1x1,
    Conv1x3,
    Conv3x1,
    Conv3x3,
    Conv1x5,
    Conv5x1,
    Conv5x5,
    Conv3x3D2,
    Conv3x3D3,
}

impl CellOp {
    /// (kh, kw, dilation)
    pub fn geometry(self) -> (usize, usize, usize) {
        match self {
            CellOp::Conv1x1 => (1, 1, 1),
            CellOp::Conv1x3 => (1, 3, 1),
            CellOp::Conv3x1 => (3, 1, 1),
            CellOp::Conv3x3 => (3, 3, 1),
            CellOp::Conv1x5 => (1, 5, 1),
            CellOp::Conv5x1 => (5, 1, 1),
            CellOp::Conv5x5 => (5, 5, 1),
            CellOp::Conv3x3D2 => (3, 3, 2),
            CellOp::Conv3x3D3 => (3, 3, 3),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellOp::Conv1x1 => "c1x1",
            CellOp::Conv1x3 => "c1x3",
            CellOp::Conv3x1 => "c3x1",
            CellOp::Conv3x3 => "c3x3",
            CellOp::Conv1x5 => "c1x5",
            CellOp::Conv5x1 => "c5x1",
            CellOp::Conv5x5 => "c5x5",
            CellOp::Conv3x3D2 => "c3x3d2",
            CellOp::Conv3x3D3 => "c3x3d3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OpSetKind {
    /// The seven plain kernel shapes.
    Base,
    /// Plain shapes plus 3x3 dilation-2 and dilation-3.
    #[default]
    Extended,
}

impl OpSetKind {
    pub fn ops(self) -> &'static [CellOp] {
        const BASE: [CellOp; 7] = [
            CellOp::Conv1x1,
            CellOp::Conv1x3,
            CellOp::Conv3x1,
            CellOp::Conv3x3,
            CellOp::Conv1x5,
            CellOp::Conv5x1,
            CellOp::Conv5x5,
        ];
        const EXTENDED: [CellOp; 9] = [
            CellOp::Conv1x1,
            CellOp::Conv1x3,
            CellOp::Conv3x1,
            CellOp::Conv3x3,
            CellOp::Conv1x5,
            CellOp::Conv5x1,
            CellOp::Conv5x5,
            CellOp::Conv3x3D2,
            CellOp::Conv3x3D3,
        ];
        match self {
            OpSetKind::Base => &BASE,
            OpSetKind::Extended => &EXTENDED,
        }
    }

    pub fn len(self) -> usize {
        self.ops().len()
    }

    pub fn is_empty(self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_sizes() {
        assert_eq!(OpSetKind::Base.len(), 7);
        assert_eq!(OpSetKind::Extended.len(), 9);
    }

    #[test]
    fn names_are_unique() {
        let mut names: Vec<&str> = OpSetKind::Extended.ops().iter().map(|o| o.name()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 9);
    }
}
