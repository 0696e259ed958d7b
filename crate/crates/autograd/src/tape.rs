//! Reverse-mode tape.
//!
//! A [`Tape`] records every tensor produced during a forward pass together
//! with a backward closure per operation. Calling [`Tape::backward`] walks the
//! recording in reverse, accumulates gradients, and routes leaf gradients into
//! their originating [`Param`]s.
//!
//! All tensors are `f64`. Values are immutable once pushed; a fresh tape is
//! built per training step.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::ArrayD;

use crate::param::Param;

/// Dynamic-rank f64 array, the only storage type of the engine.
pub type Arr = ArrayD<f64>;

/// Read-only view of all values recorded so far, handed to backward closures.
pub struct Values<'a>(pub(crate) &'a [Arr]);

impl<'a> Values<'a> {
    pub fn get(&self, id: usize) -> &Arr {
        &self.0[id]
    }
}

/// Backward closure: receives recorded values, the output gradient, and a
/// per-input mask saying which input gradients are actually needed. Returns
/// one optional gradient per input, aligned with `BackwardEntry::inputs`.
pub(crate) type BackFn = Box<dyn Fn(&Values<'_>, &Arr, &[bool]) -> Vec<Option<Arr>>>;

pub(crate) struct BackwardEntry {
    pub inputs: Vec<usize>,
    pub run: BackFn,
}

#[derive(Default)]
pub(crate) struct TapeInner {
    pub entries: Vec<Option<BackwardEntry>>,
    pub needs_grad: Vec<bool>,
    /// Leaf node id -> param to receive the accumulated gradient.
    pub hooks: Vec<(usize, Param)>,
}

/// Recording context for one forward/backward pass.
pub struct Tape {
    pub(crate) values: RefCell<Vec<Arr>>,
    pub(crate) inner: RefCell<TapeInner>,
    pub(crate) grads: RefCell<Vec<Option<Arr>>>,
}

impl Tape {
    pub fn new() -> Rc<Tape> {
        Rc::new(Tape {
            values: RefCell::new(Vec::new()),
            inner: RefCell::new(TapeInner::default()),
            grads: RefCell::new(Vec::new()),
        })
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.values.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(
        self: &Rc<Self>,
        value: Arr,
        entry: Option<BackwardEntry>,
        force_needs_grad: bool,
    ) -> Tensor {
        let needs = force_needs_grad
            || entry.as_ref().is_some_and(|e| {
                let inner = self.inner.borrow();
                e.inputs.iter().any(|&i| inner.needs_grad[i])
            });
        let shape = value.shape().to_vec();
        let id = {
            let mut values = self.values.borrow_mut();
            let mut inner = self.inner.borrow_mut();
            let id = values.len();
            values.push(value);
            // Entries on nodes that cannot receive gradient are dropped so the
            // backward sweep skips them entirely.
            inner.entries.push(if needs { entry } else { None });
            inner.needs_grad.push(needs);
            id
        };
        Tensor {
            tape: Rc::clone(self),
            id,
            shape,
        }
    }

    /// Record a constant. No gradient flows into or out of it.
    pub fn constant(self: &Rc<Self>, value: Arr) -> Tensor {
        self.push(value, None, false)
    }

    /// Record an input leaf whose gradient will be retained (readable through
    /// [`Tensor::grad`] after backward). Used by tests probing d loss / d input.
    pub fn leaf(self: &Rc<Self>, value: Arr) -> Tensor {
        self.push(value, None, true)
    }

    pub(crate) fn register_hook(&self, id: usize, param: Param) {
        self.inner.borrow_mut().hooks.push((id, param));
    }

    /// Run reverse accumulation from `loss` (must be a single-element tensor).
    /// Gradients of all nodes are retained on the tape; leaf hooks accumulate
    /// into their params (`param.grad += g`).
    pub fn backward(&self, loss: &Tensor) {
        assert_eq!(
            loss.shape().iter().product::<usize>(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        );
        let values = self.values.borrow();
        let inner = self.inner.borrow();
        let n = values.len();
        let mut grads: Vec<Option<Arr>> = vec![None; n];
        grads[loss.id] = Some(ArrayD::ones(values[loss.id].raw_dim()));

        let vals = Values(&values);
        for id in (0..=loss.id).rev() {
            if grads[id].is_none() || !inner.needs_grad[id] {
                continue;
            }
            let Some(entry) = inner.entries[id].as_ref() else {
                continue;
            };
            let g_out = grads[id].as_ref().unwrap();
            let needs: Vec<bool> = entry
                .inputs
                .iter()
                .map(|&i| inner.needs_grad[i])
                .collect();
            let input_grads = (entry.run)(&vals, g_out, &needs);
            debug_assert_eq!(input_grads.len(), entry.inputs.len());
            for (&src, g) in entry.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                debug_assert_eq!(
                    g.shape(),
                    values[src].shape(),
                    "gradient shape mismatch on node {src}"
                );
                match &mut grads[src] {
                    Some(acc) => *acc += &g,
                    // Keep stored gradients in standard layout so backward
                    // closures can rely on contiguous slices.
                    slot @ None => {
                        *slot = Some(if g.is_standard_layout() {
                            g
                        } else {
                            g.as_standard_layout().into_owned()
                        })
                    }
                }
            }
        }

        for (id, param) in &inner.hooks {
            if let Some(g) = &grads[*id] {
                param.accumulate_grad(g);
            }
        }
        *self.grads.borrow_mut() = grads;
    }
}

/// Handle to one recorded value. Cheap to clone.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) tape: Rc<Tape>,
    pub(crate) id: usize,
    pub(crate) shape: Vec<usize>,
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn tape(&self) -> &Rc<Tape> {
        &self.tape
    }

    /// Clone the underlying value out of the tape.
    pub fn value(&self) -> Arr {
        self.tape.values.borrow()[self.id].clone()
    }

    /// Read the value without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&Arr) -> R) -> R {
        f(&self.tape.values.borrow()[self.id])
    }

    /// Scalar read; panics unless the tensor has exactly one element.
    pub fn scalar(&self) -> f64 {
        self.with_value(|v| {
            assert_eq!(v.len(), 1, "scalar() on tensor of shape {:?}", v.shape());
            *v.iter().next().unwrap()
        })
    }

    /// Gradient of the most recent `backward` call w.r.t. this tensor, if any
    /// was accumulated.
    pub fn grad(&self) -> Option<Arr> {
        self.tape.grads.borrow().get(self.id).cloned().flatten()
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.inner.borrow().needs_grad[self.id]
    }

    pub(crate) fn same_tape(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.tape, &other.tape)
    }
}
