//! Named parameter storage and the basic layers built on it.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{numel, Element, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    TruncNormal(f64),
}

/// Initialisation std for weights.
pub const WEIGHT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    /// `None` for shape-only stores used for counting.
    pub value: Option<Tensor<f32>>,
}

/// Ordered, named collection of learnable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    seed: u64,
    materialize: bool,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore { params: Vec::new(), seed, materialize: true }
    }

    /// A store that records names and shapes but allocates nothing.
    pub fn shapes_only() -> Self {
        ParamStore { params: Vec::new(), seed: 0, materialize: false }
    }

    pub fn is_materialized(&self) -> bool {
        self.materialize
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let id = ParamId(self.params.len());
        let value = self.materialize.then(|| {
            let n = numel(shape);
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::TruncNormal(std) => {
                    let mut r = rng::keyed(self.seed, &[id.0 as u64]);
                    rng::trunc_normal(&mut r, n, std)
                }
            };
            Tensor::from_parts(shape.to_vec(), data)
        });
        self.params.push(Param { name: name.into(), shape: shape.to_vec(), value });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn try_get(&self, id: ParamId) -> Result<&Tensor<f32>> {
        self.params
            .get(id.0)
            .and_then(|p| p.value.as_ref())
            .ok_or_else(|| Error::Usage(format!("parameter {} has no values (shape-only store)", id.0)))
    }

    /// Panics on shape-only stores.
    pub fn get(&self, id: ParamId) -> &Tensor<f32> {
        self.try_get(id).expect("materialized parameter")
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<f32> {
        self.params[id.0].value.as_mut().expect("materialized parameter")
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<f32>) -> Result<()> {
        let p = &mut self.params[id.0];
        if value.shape() != p.shape.as_slice() {
            return Err(Error::dim(format!(
                "parameter {} expects shape {:?}, got {:?}",
                p.name,
                p.shape,
                value.shape()
            )));
        }
        p.value = Some(value);
        Ok(())
    }

    /// Total number of learnable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| numel(&p.shape)).sum()
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| numel(&p.shape))
            .sum()
    }

    /// FNV-1a over the raw parameter bytes; used to compare snapshots.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            if let Some(v) = &p.value {
                for x in v.data() {
                    for b in x.to_bits().to_le_bytes() {
                        h ^= b as u64;
                        h = h.wrapping_mul(0x0100_0000_01b3);
                    }
                }
            }
        }
        h
    }
}

/// A tape together with the parameter store it reads from.
pub struct Ctx<'a, T: Element> {
    tape: &'a mut Tape<T>,
    store: &'a ParamStore,
}

impl<'a, T: Element> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, store: &'a ParamStore) -> Self {
        Ctx { tape, store }
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        self.tape.param(self.store, id)
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }
}

impl<T: Element> Deref for Ctx<'_, T> {
    type Target = Tape<T>;
    fn deref(&self) -> &Tape<T> {
        self.tape
    }
}

impl<T: Element> DerefMut for Ctx<'_, T> {
    fn deref_mut(&mut self) -> &mut Tape<T> {
        self.tape
    }
}

/// Fully connected layer, weight stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::with_init(store, name, in_dim, out_dim, Init::TruncNormal(WEIGHT_STD))
    }

    pub fn with_init(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, init: Init) -> Self {
        let weight = store.add(format!("{name}.weight"), &[in_dim, out_dim], init);
        let bias = store.add(format!("{name}.bias"), &[out_dim], Init::Zeros);
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Element>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(self.weight)?;
        let b = cx.param(self.bias)?;
        cx.linear(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

pub const LN_EPS: f64 = 1e-6;

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), &[dim], Init::Ones);
        let beta = store.add(format!("{name}.beta"), &[dim], Init::Zeros);
        LayerNorm { gamma, beta, dim, eps: LN_EPS }
    }

    pub fn forward<T: Element>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let g = cx.param(self.gamma)?;
        let b = cx.param(self.beta)?;
        cx.layer_norm(x, g, b, self.eps)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            &[c_out, c_in / groups, kernel, kernel],
            Init::TruncNormal(WEIGHT_STD),
        );
        let bias = store.add(format!("{name}.bias"), &[c_out], Init::Zeros);
        Conv2d { weight, bias, c_in, c_out, kernel, stride, padding, groups }
    }

    pub fn forward<T: Element>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(self.weight)?;
        let b = cx.param(self.bias)?;
        cx.conv2d(x, w, Some(b), self.stride, self.padding, self.groups)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_three_to_two_has_eight_params() {
        let mut store = ParamStore::new(0);
        Linear::new(&mut store, "fc", 3, 2);
        assert_eq!(store.count(), 8);
        let mut shapes = ParamStore::shapes_only();
        Linear::new(&mut shapes, "fc", 3, 2);
        assert_eq!(shapes.count(), 8);
        assert!(shapes.try_get(ParamId(0)).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let build = |seed| {
            let mut s = ParamStore::new(seed);
            Linear::new(&mut s, "a", 4, 4);
            s
        };
        assert_eq!(build(3), build(3));
        assert_ne!(build(3).checksum(), build(4).checksum());
        let s = build(1);
        assert!(s.get(ParamId(0)).data().iter().all(|v| v.abs() <= 0.04));
    }
}
