//! Trainable parameters and the named parameter store.
//!
//! A [`Param`] owns a persistent value plus a gradient accumulator that
//! survives across tapes (gradient accumulation works by simply not clearing
//! it between micro-batches). Frozen params enter the graph as constants, so
//! no gradient is ever computed for them.
//!
//! Initialization is derived from the store seed and the param's full name,
//! which makes weights independent of construction order.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tape::{Arr, Tape, Tensor};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform(-b, b) with b = 1/sqrt(fan_in), the usual conv/linear default.
    FanIn { fan_in: usize },
    Uniform { lo: f64, hi: f64 },
}

struct ParamInner {
    name: String,
    value: RefCell<Arr>,
    grad: RefCell<Arr>,
    trainable: Cell<bool>,
}

#[derive(Clone)]
pub struct Param(Rc<ParamInner>);

impl Param {
    fn new(name: String, value: Arr, trainable: bool) -> Param {
        let grad = ArrayD::zeros(value.raw_dim());
        Param(Rc::new(ParamInner {
            name,
            value: RefCell::new(value),
            grad: RefCell::new(grad),
            trainable: Cell::new(trainable),
        }))
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.0.value.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self) -> Arr {
        self.0.value.borrow().clone()
    }

    /// Replace the value in place. Shape must match.
    pub fn set_value(&self, v: Arr) {
        let mut cur = self.0.value.borrow_mut();
        assert_eq!(cur.shape(), v.shape(), "set_value shape mismatch on {}", self.0.name);
        *cur = v;
    }

    pub fn grad(&self) -> Arr {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().fill(0.0);
    }

    pub fn grad_norm(&self) -> f64 {
        self.0.grad.borrow().iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_trainable(&self) -> bool {
        self.0.trainable.get()
    }

    pub fn set_trainable(&self, t: bool) {
        self.0.trainable.set(t);
    }

    pub(crate) fn accumulate_grad(&self, g: &Arr) {
        *self.0.grad.borrow_mut() += g;
    }

    /// Apply `f(value, grad)` to the raw buffers (used by optimizers).
    pub fn update_with(&self, f: impl FnOnce(&mut Arr, &Arr)) {
        let mut v = self.0.value.borrow_mut();
        let g = self.0.grad.borrow();
        f(&mut v, &g);
    }

    /// Enter the graph: as a hooked leaf when trainable, as a constant when
    /// frozen. Reusing a param several times in one tape is fine — each use
    /// accumulates into the same grad buffer.
    pub fn tensor(&self, tape: &Rc<Tape>) -> Tensor {
        let v = self.value();
        if self.is_trainable() {
            let t = tape.push(v, None, true);
            tape.register_hook(t.id, self.clone());
            t
        } else {
            tape.constant(v)
        }
    }
}

/// Named collection of params. Names are `/`-joined scope paths.
pub struct ParamStore {
    params: RefCell<BTreeMap<String, Param>>,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> ParamStore {
        ParamStore {
            params: RefCell::new(BTreeMap::new()),
            seed,
        }
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            path: String::new(),
        }
    }

    fn create(&self, name: String, shape: &[usize], init: Init) -> Param {
        let mut params = self.params.borrow_mut();
        assert!(
            !params.contains_key(&name),
            "duplicate param name: {name}"
        );
        let value = init_array(shape, init, self.seed, &name);
        let p = Param::new(name.clone(), value, true);
        params.insert(name, p.clone());
        p
    }

    pub fn get(&self, name: &str) -> Option<Param> {
        self.params.borrow().get(name).cloned()
    }

    /// All params in name order.
    pub fn params(&self) -> Vec<Param> {
        self.params.borrow().values().cloned().collect()
    }

    pub fn trainable_params(&self) -> Vec<Param> {
        self.params
            .borrow()
            .values()
            .filter(|p| p.is_trainable())
            .cloned()
            .collect()
    }

    pub fn set_trainable_prefix(&self, prefix: &str, trainable: bool) {
        for (name, p) in self.params.borrow().iter() {
            if name.starts_with(prefix) {
                p.set_trainable(trainable);
            }
        }
    }

    pub fn zero_grads(&self) {
        for p in self.params.borrow().values() {
            p.zero_grad();
        }
    }

    pub fn total_len(&self) -> usize {
        self.params.borrow().values().map(|p| p.len()).sum()
    }
}

/// Path-scoped param factory, analogous to a var-store root in other stacks.
pub struct Scope<'a> {
    store: &'a ParamStore,
    path: String,
}

impl<'a> Scope<'a> {
    pub fn sub(&self, name: &str) -> Scope<'a> {
        let path = if self.path.is_empty() {
            name.to_string()
        } else {
            format!("{}/{}", self.path, name)
        };
        Scope {
            store: self.store,
            path,
        }
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Param {
        let full = if self.path.is_empty() {
            name.to_string()
        } else {
            format!("{}/{}", self.path, name)
        };
        self.store.create(full, shape, init)
    }
}

fn init_array(shape: &[usize], init: Init, seed: u64, name: &str) -> Arr {
    let n: usize = shape.iter().product();
    match init {
        Init::Zeros => ArrayD::zeros(IxDyn(shape)),
        Init::Constant(c) => ArrayD::from_elem(IxDyn(shape), c),
        Init::FanIn { fan_in } => {
            let b = 1.0 / (fan_in.max(1) as f64).sqrt();
            sample_uniform(shape, n, -b, b, seed, name)
        }
        Init::Uniform { lo, hi } => sample_uniform(shape, n, lo, hi, seed, name),
    }
}

fn sample_uniform(shape: &[usize], n: usize, lo: f64, hi: f64, seed: u64, name: &str) -> Arr {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// FNV-1a over the param name; combined with the store seed this pins the
/// init stream to the name rather than to creation order.
fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
