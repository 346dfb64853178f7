//! Named parameter storage plus the tape binder.
//!
//! Parameters live outside the tape and persist across steps; each step the
//! model binds the values it needs (possibly channel-sliced views for
//! weight-shared sub-networks) onto a fresh tape, and after `backward` the
//! binder collects gradients keyed by parameter name together with the slice
//! region they apply to. Optimizers then write updates back through the
//! region, so a sliced sub-network and the full store share one source of
//! truth.

use indexmap::IndexMap;

use crate::error::{AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Shape, Tensor};

/// Which part of a stored parameter a binding covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceSpec {
    /// The whole tensor.
    Full,
    /// Leading output/input channels of a (out, in, kh, kw) kernel.
    Conv { out: usize, inp: usize },
    /// Leading entries of a flat vector (biases, norm affines).
    Channels { len: usize },
}

impl SliceSpec {
    /// Shape of the bound view given the stored shape.
    pub fn view_shape(&self, full: Shape) -> Shape {
        match *self {
            SliceSpec::Full => full,
            SliceSpec::Conv { out, inp } => Shape::new(out, inp, full.h, full.w),
            SliceSpec::Channels { len } => Shape::vec(len),
        }
    }

    /// Copies the covered region out of `full` into a new tensor.
    pub fn extract<T: Scalar>(&self, full: &Tensor<T>) -> Tensor<T> {
        match *self {
            SliceSpec::Full => full.clone(),
            SliceSpec::Conv { out, inp } => {
                let fs = full.shape();
                let mut t = Tensor::zeros(Shape::new(out, inp, fs.h, fs.w));
                let plane = fs.h * fs.w;
                for o in 0..out {
                    for i in 0..inp {
                        let src = (o * fs.c + i) * plane;
                        let dst = (o * inp + i) * plane;
                        t.data_mut()[dst..dst + plane].copy_from_slice(&full.data()[src..src + plane]);
                    }
                }
                t
            }
            SliceSpec::Channels { len } => Tensor::from_slice_vec(&full.data()[..len]),
        }
    }

    /// Visits each (full_index, view_index) pair of the covered region.
    pub fn for_each_index(&self, full: Shape, mut f: impl FnMut(usize, usize)) {
        match *self {
            SliceSpec::Full => {
                for i in 0..full.numel() {
                    f(i, i);
                }
            }
            SliceSpec::Conv { out, inp } => {
                let plane = full.h * full.w;
                for o in 0..out {
                    for i in 0..inp {
                        let src = (o * full.c + i) * plane;
                        let dst = (o * inp + i) * plane;
                        for p in 0..plane {
                            f(src + p, dst + p);
                        }
                    }
                }
            }
            SliceSpec::Channels { len } => {
                for i in 0..len {
                    f(i, i);
                }
            }
        }
    }
}

/// Insertion-ordered map of named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        let prev = self.entries.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter '{name}'");
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries.get(name).ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries.get_mut(name).ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}

/// One gradient produced by a backward pass, with the region it updates.
#[derive(Debug, Clone)]
pub struct GradEntry<T: Scalar> {
    pub grad: Tensor<T>,
    pub slice: SliceSpec,
}

pub type GradMap<T> = IndexMap<String, GradEntry<T>>;

/// Binds store parameters onto a tape and collects their gradients back.
pub struct Binder<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    bound: IndexMap<String, (ValueId, SliceSpec)>,
}

impl<'s, T: Scalar> Binder<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Binder { store, bound: IndexMap::new() }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Binds the full tensor (cached: repeated binds return the same node).
    pub fn param(&mut self, tape: &mut Tape<T>, name: &str) -> Result<ValueId> {
        self.param_sliced(tape, name, SliceSpec::Full)
    }

    /// Binds a slice of the tensor onto the tape.
    pub fn param_sliced(&mut self, tape: &mut Tape<T>, name: &str, slice: SliceSpec) -> Result<ValueId> {
        if let Some(&(id, prev)) = self.bound.get(name) {
            assert_eq!(prev, slice, "parameter '{name}' bound twice with different slices");
            return Ok(id);
        }
        let full = self.store.get(name)?;
        let view = slice.extract(full);
        let id = tape.param(view);
        self.bound.insert(name.to_string(), (id, slice));
        Ok(id)
    }

    /// Gradients for every bound parameter after `tape.backward`.
    /// Parameters the loss never reached get explicit zero gradients.
    pub fn grads(&self, tape: &Tape<T>) -> GradMap<T> {
        self.bound
            .iter()
            .map(|(name, &(id, slice))| {
                let grad = match tape.grad(id) {
                    Some(g) => g.clone(),
                    None => Tensor::zeros(tape.shape(id)),
                };
                (name.clone(), GradEntry { grad, slice })
            })
            .collect()
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &str> {
        self.bound.keys().map(|k| k.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_slice_extracts_leading_channels() {
        // 2x2 kernel bank (O=2, I=2, 1x1): values 0..4
        let full = Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let s = SliceSpec::Conv { out: 1, inp: 2 };
        assert_eq!(s.extract(&full).data(), &[0.0, 1.0]);
        let s = SliceSpec::Conv { out: 2, inp: 1 };
        assert_eq!(s.extract(&full).data(), &[0.0, 2.0]);
    }

    #[test]
    fn binder_returns_zero_grads_for_unreached_params() {
        let mut store = ParamStore::<f64>::new();
        store.insert("a", Tensor::scalar(2.0));
        store.insert("b", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let mut binder = Binder::new(&store);
        let a = binder.param(&mut tape, "a").unwrap();
        let _b = binder.param(&mut tape, "b").unwrap();
        let x = tape.input(Tensor::scalar(5.0));
        let prod = tape.scale_by_scalar(x, a).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss).unwrap();
        let grads = binder.grads(&tape);
        assert_eq!(grads["a"].grad.item(), 5.0);
        assert_eq!(grads["b"].grad.item(), 0.0);
    }
}
