use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};

use super::kernels::{self, ConvGeom, LayerNormSaved};
use super::{check_axes, check_narrow, concat_shape, split_axis, Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Permute { x: Var, axes: Vec<usize> },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    AddBias { x: Var, b: Var, c: usize },
    Sum { x: Var },
    Mean { x: Var },
    Softmax { x: Var, outer: usize, n: usize, inner: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, saved: LayerNormSaved<T> },
    Gelu { x: Var },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Pool { x: Var, c: usize, h: usize, w: usize, k: usize },
    Bilinear { x: Var, c: usize, h: usize, w: usize, ho: usize, wo: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    CrossEntropy { logits: Var, labels: Vec<u8>, k: usize, ignore: Option<u8>, count: usize, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    op: Op<T>,
}

/// Define-by-run autodiff tape. Nodes are appended in evaluation order, so
/// the node list is always topologically sorted.
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<Option<Var>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!("{name} produced non-finite values")));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, grad: None, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric("leaf tensor contains non-finite values".into()));
        }
        self.nodes.push(Node { value, requires_grad, grad: None, op: Op::Leaf });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf that receives gradients.
    pub fn var(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// The tape variable for parameter `id`, binding it on first use.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(Some(v)) = self.params.get(id.index()) {
            return Ok(*v);
        }
        let value = store.try_get(id)?.cast::<T>();
        let v = self.var(value)?;
        self.bind_param(id, v);
        Ok(v)
    }

    /// Binds `id` to an existing variable; used to feed perturbed parameters.
    pub fn bind_param(&mut self, id: ParamId, v: Var) {
        if self.params.len() <= id.index() {
            self.params.resize(id.index() + 1, None);
        }
        self.params[id.index()] = Some(v);
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId::from_index(i), v)))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_parts(node.value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ------------------------------------------------------------ ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul shape mismatch {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, m, k, n }, &[a, b], "matmul")
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        check_axes(axes, self.shape(x).len())?;
        let (shape, data) = kernels::permute(self.value(x).data(), self.shape(x), axes);
        self.push(Tensor::from_parts(shape, data), Op::Permute { x, axes: axes.to_vec() }, &[x], "permute")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(Error::dim(format!("transpose needs rank 2, got {:?}", self.shape(x))));
        }
        self.permute(x, &[1, 0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape.to_vec())?;
        self.push(value, Op::Reshape { x }, &[x], "reshape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Add { a, b }, &[a, b], "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Mul { a, b }, &[a, b], "mul")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let st = T::of_f64(s);
        let data = self.value(x).data().iter().map(|&v| v * st).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Scale { x, s }, &[x], "scale")
    }

    /// `x[..., C] + b[C]`, broadcasting over leading axes.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = *self.shape(x).last().ok_or_else(|| Error::dim("add_bias on a scalar"))?;
        if self.shape(b) != [c] {
            return Err(Error::dim(format!("bias {:?} does not match last dim {c}", self.shape(b))));
        }
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &bb)| v + bb))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::AddBias { x, b, c }, &[x, b], "add_bias")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(T::of_f64(s)), Op::Sum { x }, &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).mean();
        self.push(Tensor::scalar(T::of_f64(s)), Op::Mean { x }, &[x], "mean")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        if !self.value(x).all_finite() {
            return Err(Error::Numeric("softmax input is not finite".into()));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let data = kernels::softmax(self.value(x).data(), outer, n, inner);
        self.push(Tensor::from_parts(shape, data), Op::Softmax { x, outer, n, inner }, &[x], "softmax")
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| Error::dim("layer_norm on a scalar"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(format!(
                "layer_norm over {c} channels got gamma {:?} beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        if eps <= 0.0 {
            return Err(Error::dim("layer_norm eps must be positive"));
        }
        let (y, saved) = kernels::layer_norm(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            c,
            eps,
        );
        self.push(
            Tensor::from_parts(shape, y),
            Op::LayerNorm { x, gamma, beta, saved },
            &[x, gamma, beta],
            "layer_norm",
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| T::of_f64(kernels::gelu_scalar(v.as_f64())))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Gelu { x }, &[x], "gelu")
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, padding, groups)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.c_out] {
                return Err(Error::dim(format!("conv2d bias {:?} for {} outputs", self.shape(b), geom.c_out)));
            }
        }
        let out = kernels::conv2d(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(
            Tensor::from_parts(vec![geom.c_out, geom.h_out, geom.w_out], out),
            Op::Conv2d { x, w, b, geom },
            &inputs,
            "conv2d",
        )
    }

    pub fn adaptive_avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "adaptive_avg_pool2d")?;
        if k == 0 || k > h.min(w) {
            return Err(Error::dim(format!("pool size {k} must be in 1..={}", h.min(w))));
        }
        let out = kernels::adaptive_avg_pool2d(self.value(x).data(), c, h, w, k);
        self.push(Tensor::from_parts(vec![c, k, k], out), Op::Pool { x, c, h, w, k }, &[x], "pool")
    }

    pub fn bilinear_resize(&mut self, x: Var, ho: usize, wo: usize) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "bilinear_resize")?;
        if ho == 0 || wo == 0 {
            return Err(Error::dim("bilinear output size must be positive"));
        }
        let out = kernels::bilinear(self.value(x).data(), c, h, w, ho, wo);
        self.push(
            Tensor::from_parts(vec![c, ho, wo], out),
            Op::Bilinear { x, c, h, w, ho, wo },
            &[x],
            "bilinear_resize",
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let shapes: Vec<&[usize]> = parts.iter().map(|&v| self.shape(v)).collect();
        let shape = concat_shape(&shapes, axis)?;
        let datas: Vec<&[T]> = parts.iter().map(|&v| self.value(v).data()).collect();
        let data = kernels::concat(&datas, &shapes, axis);
        self.push(
            Tensor::from_parts(shape, data),
            Op::Concat { parts: parts.to_vec(), axis },
            parts,
            "concat",
        )
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        check_narrow(self.shape(x), axis, start, len)?;
        let value = self.value(x).narrow(axis, start, len)?;
        self.push(value, Op::Narrow { x, axis, start }, &[x], "narrow")
    }

    /// `x[N, in] · w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    /// Mean pixel-wise cross-entropy of logits `[K, H, W]` against `labels[H*W]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8], ignore: Option<u8>) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 3 || shape[1] * shape[2] != labels.len() {
            return Err(Error::dim(format!(
                "cross_entropy logits {shape:?} vs {} labels",
                labels.len()
            )));
        }
        let k = shape[0];
        if let Some(bad) = labels.iter().find(|&&l| Some(l) != ignore && l as usize >= k) {
            return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
        }
        let (loss, probs, count) = kernels::cross_entropy(self.value(logits).data(), labels, k, ignore);
        self.push(
            Tensor::scalar(T::of_f64(loss)),
            Op::CrossEntropy { logits, labels: labels.to_vec(), k, ignore, count, probs },
            &[logits],
            "cross_entropy",
        )
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what} shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    // ------------------------------------------------------------ backward

    /// Accumulates d`loss`/d`leaf` into every gradient-tracking leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            log::warn!("backward called on a loss that does not depend on any tracked tensor");
            for n in &mut self.nodes {
                if n.requires_grad && matches!(n.op, Op::Leaf) && n.grad.is_none() {
                    n.grad = Some(vec![T::zero(); n.value.numel()]);
                }
            }
            return Ok(());
        }
        let mut upstream: Vec<Option<Vec<T>>> = Vec::new();
        upstream.resize_with(loss.0 + 1, || None);
        upstream[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = upstream[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let slot = &mut self.nodes[i].grad;
                match slot {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    None => *slot = Some(g),
                }
                continue;
            }
            self.backward_node(i, g, &mut upstream);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: Vec<T>, up: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let mut send = |v: Var, d: Vec<T>| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut up[v.0] {
                Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a = *a + b),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                if nodes[a.0].requires_grad {
                    send(*a, kernels::matmul_nt(&g, val(*b), *m, *n, *k));
                }
                if nodes[b.0].requires_grad {
                    send(*b, kernels::matmul_tn(val(*a), &g, *m, *k, *n));
                }
            }
            Op::Permute { x, axes } => {
                let inv = kernels::inverse_axes(axes);
                let (_, d) = kernels::permute(&g, node.value.shape(), &inv);
                send(*x, d);
            }
            Op::Reshape { x } => send(*x, g),
            Op::Add { a, b } => {
                send(*a, g.clone());
                send(*b, g);
            }
            Op::Mul { a, b } => {
                send(*a, zip_map(&g, val(*b), |d, y| d * y));
                send(*b, zip_map(&g, val(*a), |d, x| d * x));
            }
            Op::Scale { x, s } => {
                let st = T::of_f64(*s);
                send(*x, g.iter().map(|&d| d * st).collect());
            }
            Op::AddBias { x, b, c } => {
                let mut db = vec![0.0f64; *c];
                for row in g.chunks(*c) {
                    db.iter_mut().zip(row).for_each(|(a, &d)| *a += d.as_f64());
                }
                send(*b, db.into_iter().map(T::of_f64).collect());
                send(*x, g);
            }
            Op::Sum { x } => send(*x, vec![g[0]; nodes[x.0].value.numel()]),
            Op::Mean { x } => {
                let n = nodes[x.0].value.numel();
                send(*x, vec![T::of_f64(g[0].as_f64() / n as f64); n]);
            }
            Op::Softmax { x, outer, n, inner } => {
                send(*x, kernels::softmax_backward(node.value.data(), &g, *outer, *n, *inner));
            }
            Op::LayerNorm { x, gamma, beta, saved } => {
                let c = *node.value.shape().last().unwrap();
                let (dx, dg, db) = kernels::layer_norm_backward(&g, saved, val(*gamma), c);
                send(*x, dx);
                send(*gamma, dg);
                send(*beta, db);
            }
            Op::Gelu { x } => {
                let d = val(*x)
                    .iter()
                    .zip(&g)
                    .map(|(&v, &d)| T::of_f64(d.as_f64() * kernels::gelu_grad_scalar(v.as_f64())))
                    .collect();
                send(*x, d);
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(&g, val(*x), val(*w), geom);
                send(*x, dx);
                send(*w, dw);
                if let Some(b) = b {
                    send(*b, db);
                }
            }
            Op::Pool { x, c, h, w, k } => {
                send(*x, kernels::adaptive_avg_pool2d_backward(&g, *c, *h, *w, *k));
            }
            Op::Bilinear { x, c, h, w, ho, wo } => {
                send(*x, kernels::bilinear_backward(&g, *c, *h, *w, *ho, *wo));
            }
            Op::Concat { parts, axis } => {
                let out_shape = node.value.shape();
                let (outer, _, inner) = split_axis(out_shape, *axis);
                let total = out_shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.shape()[*axis];
                    if nodes[p.0].requires_grad {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g[base..base + len * inner]);
                        }
                        send(p, d);
                    }
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let in_shape = nodes[x.0].value.shape();
                let (outer, n, inner) = split_axis(in_shape, *axis);
                let len = node.value.shape()[*axis];
                let mut d = vec![T::zero(); nodes[x.0].value.numel()];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                send(*x, d);
            }
            Op::CrossEntropy { logits, labels, k, ignore, count, probs } => {
                let d = kernels::cross_entropy_backward(probs, labels, *k, *ignore, *count, g[0].as_f64());
                send(*logits, d);
            }
        }
    }
}

fn zip_map<T: Element>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn chw(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(Error::dim(format!("{what} expects [C,H,W], got {shape:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_and_square_gradients() {
        let mut tape = Tape::<f64>::new();
        let x = tape.var(Tensor::from_fn([2, 3], |i| i as f64 - 1.5)).unwrap();
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), Tensor::ones([2, 3]));

        let mut tape = Tape::<f64>::new();
        let x = tape.var(Tensor::from_fn([4], |i| i as f64 - 1.0)).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(g.data(), &[-2.0, 0.0, 2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.var(Tensor::from_fn([3], |i| i as f64)).unwrap();
        let y = tape.scale(x, 3.0).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[6.0, 6.0, 6.0]);
        tape.zero_grads();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.var(Tensor::ones([2])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn detached_loss_gives_zero_grads() {
        let mut tape = Tape::<f32>::new();
        let x = tape.var(Tensor::ones([2])).unwrap();
        let c = tape.constant(Tensor::ones([2])).unwrap();
        let s = tape.sum(c).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn nonfinite_values_are_rejected() {
        let mut tape = Tape::<f32>::new();
        assert!(tape.var(Tensor::full([1], f32::NAN)).is_err());
        let x = tape.var(Tensor::full([1], f32::MAX)).unwrap();
        assert!(matches!(tape.scale(x, 10.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::<f32>::new();
        let a = tape.var(Tensor::ones([2, 3])).unwrap();
        let b = tape.var(Tensor::ones([2, 3])).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
    }
}
