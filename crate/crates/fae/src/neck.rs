//! Neck assembly: configuration, weight creation, and the combined
//! aggregate-and-enhance forward with its three enhancement positions.

use nasdet_autodiff::init::{constant_vec, kaiming_conv};
use nasdet_autodiff::{Binder, ParamStore, Scalar, Shape, SliceSpec, Tape, ValueId};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{DiscreteArch, FePosition};
use crate::error::Result;
use crate::fa::{fa_path_forward, PathDirection, PathMode};
use crate::fe::{fe_cell_forward, sample_fe_noise, FeMode};
use crate::ops::{CellOp, OpSetKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeckConfig {
    pub levels: usize,
    /// Stored (maximal) channel width of every neck convolution.
    pub channels: usize,
    pub fe_nodes: usize,
    pub op_set: OpSetKind,
    pub fe_position: FePosition,
    pub gn_groups: usize,
    /// Kernel size of the cell's pre/post convolutions.
    pub cell_kernel: usize,
    /// Keep discrete-mode beta fixed at its stored value instead of training it.
    pub beta_frozen: bool,
}

impl Default for NeckConfig {
    fn default() -> Self {
        NeckConfig {
            levels: 4,
            channels: 16,
            fe_nodes: 4,
            op_set: OpSetKind::Extended,
            fe_position: FePosition::Middle,
            gn_groups: 8,
            cell_kernel: 3,
            beta_frozen: false,
        }
    }
}

/// Active vs stored channel width; equality means no slicing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WidthSlice {
    pub active: usize,
    pub max: usize,
}

impl WidthSlice {
    pub fn full(width: usize) -> Self {
        WidthSlice { active: width, max: width }
    }

    pub fn conv(&self) -> SliceSpec {
        if self.active == self.max {
            SliceSpec::Full
        } else {
            SliceSpec::Conv { out: self.active, inp: self.active }
        }
    }

    pub fn chan(&self) -> SliceSpec {
        if self.active == self.max {
            SliceSpec::Full
        } else {
            SliceSpec::Channels { len: self.active }
        }
    }
}

/// Convolution + bias (+ group norm when `gn`), weights under `name.{w,b}`
/// or `name.{w,gn.g,gn.b}`.
pub fn cell_conv<T: Scalar>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    cfg: &NeckConfig,
    width: WidthSlice,
    name: &str,
    x: ValueId,
    gn: bool,
) -> nasdet_autodiff::Result<ValueId> {
    let w = binder.param_sliced(tape, &format!("{name}.w"), width.conv())?;
    let y = tape.conv2d(x, w, 1, 1)?;
    if gn {
        let g = binder.param_sliced(tape, &format!("{name}.gn.g"), width.chan())?;
        let b = binder.param_sliced(tape, &format!("{name}.gn.b"), width.chan())?;
        tape.group_norm(y, g, b, cfg.gn_groups, 1e-5)
    } else {
        let b = binder.param_sliced(tape, &format!("{name}.b"), width.chan())?;
        tape.bias_add(y, b)
    }
}

/// One candidate op on an edge: plain conv + bias so an identity 1x1 kernel
/// really is the identity.
pub fn op_conv<T: Scalar>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    _cfg: &NeckConfig,
    width: WidthSlice,
    edge_prefix: &str,
    op: CellOp,
    x: ValueId,
) -> nasdet_autodiff::Result<ValueId> {
    let (_, _, dilation) = op.geometry();
    let w = binder.param_sliced(tape, &format!("{edge_prefix}.{}.w", op.name()), width.conv())?;
    let y = tape.conv2d(x, w, 1, dilation)?;
    let b = binder.param_sliced(tape, &format!("{edge_prefix}.{}.b", op.name()), width.chan())?;
    tape.bias_add(y, b)
}

fn insert_conv_unit<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    shape: Shape,
    gn: bool,
) {
    store.insert(format!("{name}.w"), kaiming_conv(rng, shape));
    if gn {
        store.insert(format!("{name}.gn.g"), constant_vec(shape.b, 1.0));
        store.insert(format!("{name}.gn.b"), constant_vec(shape.b, 0.0));
    } else {
        store.insert(format!("{name}.b"), constant_vec(shape.b, 0.0));
    }
}

fn insert_op_unit<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, edge_prefix: &str, op: CellOp, c: usize) {
    let (kh, kw, _) = op.geometry();
    store.insert(format!("{edge_prefix}.{}.w", op.name()), kaiming_conv(rng, Shape::new(c, c, kh, kw)));
    store.insert(format!("{edge_prefix}.{}.b", op.name()), constant_vec(c, 0.0));
}

/// Architecture parameters for a joint search: alpha/beta per cell and
/// kappa/gamma per enhancement edge, all under the `arch.` prefix. Logits
/// start at zero (uniform relaxation), beta at (1, 1).
pub fn init_arch_params<T: Scalar>(store: &mut ParamStore<T>, cfg: &NeckConfig) {
    for dir in [PathDirection::TopDown, PathDirection::BottomUp] {
        for k in 0..cfg.levels {
            if k > 0 {
                store.insert(format!("arch.{}.c{k}.alpha", dir.tag()), constant_vec(k, 0.0));
            }
            store.insert(format!("arch.{}.c{k}.beta", dir.tag()), constant_vec(2, 1.0));
        }
    }
    for l in 0..cfg.levels {
        for i in 1..cfg.fe_nodes {
            store.insert(format!("arch.fe.l{l}.n{i}.kappa"), constant_vec(i, 0.0));
            for j in 0..i {
                store.insert(format!("arch.fe.l{l}.e{j}_{i}.gamma"), constant_vec(cfg.op_set.len(), 0.0));
            }
        }
    }
}

/// Weights for a search-time neck (single block): every cell's pre/post
/// convs plus one conv per (edge, op) pair.
pub fn init_search_weights<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: &NeckConfig, rng: &mut R, prefix: &str) {
    let c = cfg.channels;
    let k = cfg.cell_kernel;
    for dir in [PathDirection::TopDown, PathDirection::BottomUp] {
        for cell in 0..cfg.levels {
            if cell > 0 {
                insert_conv_unit(store, rng, &format!("{prefix}{}.c{cell}.pre", dir.tag()), Shape::new(c, c, k, k), false);
            }
            insert_conv_unit(store, rng, &format!("{prefix}{}.c{cell}.post", dir.tag()), Shape::new(c, c, k, k), true);
        }
    }
    for l in 0..cfg.levels {
        for i in 1..cfg.fe_nodes {
            for j in 0..i {
                for op in cfg.op_set.ops() {
                    insert_op_unit(store, rng, &format!("{prefix}fe.l{l}.e{j}_{i}"), *op, c);
                }
            }
        }
    }
}

/// Weights for one discrete block: cell convs, trainable beta initialized
/// from the searched values, and only the retained (edge, op) convs on
/// levels whose enhancement stage is active.
#[allow(clippy::too_many_arguments)]
pub fn init_discrete_weights<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    cfg: &NeckConfig,
    arch: &DiscreteArch,
    rng: &mut R,
    prefix: &str,
    fe_active: bool,
) {
    let c = cfg.channels;
    let k = cfg.cell_kernel;
    for (dir, cells) in
        [(PathDirection::TopDown, &arch.top_down), (PathDirection::BottomUp, &arch.bottom_up)]
    {
        for (cell, spec) in cells.iter().enumerate() {
            if cell > 0 {
                insert_conv_unit(store, rng, &format!("{prefix}{}.c{cell}.pre", dir.tag()), Shape::new(c, c, k, k), false);
            }
            insert_conv_unit(store, rng, &format!("{prefix}{}.c{cell}.post", dir.tag()), Shape::new(c, c, k, k), true);
            if !cfg.beta_frozen {
                let beta = nasdet_autodiff::Tensor::from_slice_vec(&[
                    T::from_f64(spec.beta[0]),
                    T::from_f64(spec.beta[1]),
                ]);
                store.insert(format!("{prefix}{}.c{cell}.beta", dir.tag()), beta);
            }
        }
    }
    if fe_active {
        for (l, cell) in arch.fe.iter().enumerate() {
            for &(from, to, op) in &cell.edges {
                insert_op_unit(store, rng, &format!("{prefix}fe.l{l}.e{from}_{to}"), op, c);
            }
        }
    }
}

/// How the neck block runs.
pub enum NeckMode<'a> {
    /// Continuous relaxation with Gumbel-sampled enhancement topology.
    Search { tau: f64 },
    Discrete { arch: &'a DiscreteArch },
}

fn fe_stage<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    cfg: &NeckConfig,
    width: WidthSlice,
    prefix: &str,
    feats: &[ValueId],
    mode: &NeckMode<'_>,
    rng: &mut R,
) -> Result<Vec<ValueId>> {
    let mut out = Vec::with_capacity(feats.len());
    for (l, &f) in feats.iter().enumerate() {
        let id = match mode {
            NeckMode::Search { tau } => {
                let noise = sample_fe_noise(rng, cfg.fe_nodes);
                fe_cell_forward(tape, binder, cfg, width, prefix, l, f, FeMode::Search { tau: *tau, noise: &noise })?
            }
            NeckMode::Discrete { arch } => {
                fe_cell_forward(tape, binder, cfg, width, prefix, l, f, FeMode::Discrete { cell: &arch.fe[l] })?
            }
        };
        out.push(id);
    }
    Ok(out)
}

/// One aggregate-and-enhance block: (FE?) -> top-down -> (FE?) -> bottom-up
/// -> (FE?) according to the configured position, with an independent
/// enhancement cell per level. `fe_active` lets stacked supernet blocks skip
/// their enhancement stage.
#[allow(clippy::too_many_arguments)]
pub fn autofae_block_forward<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    cfg: &NeckConfig,
    width: WidthSlice,
    prefix: &str,
    pyramid: &[ValueId],
    mode: &NeckMode<'_>,
    fe_active: bool,
    rng: &mut R,
) -> Result<Vec<ValueId>> {
    fn path_mode<'m>(m: &NeckMode<'m>, dir: PathDirection) -> PathMode<'m> {
        match m {
            NeckMode::Search { .. } => PathMode::Search,
            NeckMode::Discrete { arch } => PathMode::Discrete {
                cells: match dir {
                    PathDirection::TopDown => &arch.top_down,
                    PathDirection::BottomUp => &arch.bottom_up,
                },
            },
        }
    }
    let position = match mode {
        NeckMode::Search { .. } => cfg.fe_position,
        NeckMode::Discrete { arch } => arch.fe_position,
    };

    let mut feats: Vec<ValueId> = pyramid.to_vec();
    if fe_active && position == FePosition::Before {
        feats = fe_stage(tape, binder, cfg, width, prefix, &feats, mode, rng)?;
    }
    let td = path_mode(mode, PathDirection::TopDown);
    feats = fa_path_forward(tape, binder, cfg, width, prefix, PathDirection::TopDown, &feats, &td)?;
    if fe_active && position == FePosition::Middle {
        feats = fe_stage(tape, binder, cfg, width, prefix, &feats, mode, rng)?;
    }
    let bu = path_mode(mode, PathDirection::BottomUp);
    feats = fa_path_forward(tape, binder, cfg, width, prefix, PathDirection::BottomUp, &feats, &bu)?;
    if fe_active && position == FePosition::After {
        feats = fe_stage(tape, binder, cfg, width, prefix, &feats, mode, rng)?;
    }
    Ok(feats)
}

/// Full neck: the discrete stack (or a single search block). Block b's
/// weights live under "{base}s{b}.".
#[allow(clippy::too_many_arguments)]
pub fn autofae_forward<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    cfg: &NeckConfig,
    width: WidthSlice,
    base: &str,
    pyramid: &[ValueId],
    mode: &NeckMode<'_>,
    rng: &mut R,
) -> Result<Vec<ValueId>> {
    let stack: Vec<bool> = match mode {
        NeckMode::Search { .. } => vec![true],
        NeckMode::Discrete { arch } => arch.stack_fe.clone(),
    };
    let mut feats = pyramid.to_vec();
    for (b, &fe_active) in stack.iter().enumerate() {
        let prefix = format!("{base}s{b}.");
        feats = autofae_block_forward(tape, binder, cfg, width, &prefix, &feats, mode, fe_active, rng)?;
    }
    Ok(feats)
}

/// Reads the searched parameters back out of the store and applies the
/// discretization rules.
pub fn discretize_from_store<T: Scalar>(store: &ParamStore<T>, cfg: &NeckConfig) -> Result<DiscreteArch> {
    use crate::fa::{discretize_fa, FaCellParams};
    use crate::fe::{discretize_fe, FeCellParams};

    let vec_of = |name: &str| -> Result<Vec<f64>> {
        Ok(store.get(name).map_err(crate::error::FaeError::from)?.data().iter().map(|v| v.to_f64()).collect())
    };

    let mut paths: Vec<Vec<crate::arch::FaCellArch>> = Vec::new();
    for dir in [PathDirection::TopDown, PathDirection::BottomUp] {
        let mut cells = Vec::with_capacity(cfg.levels);
        for k in 0..cfg.levels {
            let alpha_logits =
                if k > 0 { vec_of(&format!("arch.{}.c{k}.alpha", dir.tag()))? } else { Vec::new() };
            let beta = vec_of(&format!("arch.{}.c{k}.beta", dir.tag()))?;
            let params = FaCellParams { alpha_logits, beta: [beta[0], beta[1]] };
            cells.push(crate::arch::FaCellArch { retained: discretize_fa(&params), beta: params.beta });
        }
        paths.push(cells);
    }
    let bottom_up = paths.pop().unwrap();
    let top_down = paths.pop().unwrap();

    let mut fe = Vec::with_capacity(cfg.levels);
    for l in 0..cfg.levels {
        let mut kappa = Vec::new();
        let mut gamma = Vec::new();
        for i in 1..cfg.fe_nodes {
            kappa.push(vec_of(&format!("arch.fe.l{l}.n{i}.kappa"))?);
            let mut per_edge = Vec::new();
            for j in 0..i {
                per_edge.push(vec_of(&format!("arch.fe.l{l}.e{j}_{i}.gamma"))?);
            }
            gamma.push(per_edge);
        }
        let params = FeCellParams { num_nodes: cfg.fe_nodes, kappa, gamma };
        fe.push(discretize_fe(&params, cfg.op_set)?);
    }

    let arch = DiscreteArch {
        version: crate::arch::ARCH_VERSION,
        levels: cfg.levels,
        fe_position: cfg.fe_position,
        op_set: cfg.op_set,
        top_down,
        bottom_up,
        fe,
        stack_fe: vec![true],
    };
    arch.validate()?;
    Ok(arch)
}
