//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node to a tape. Node indices increase in
//! evaluation order, so walking the tape backwards is a valid reverse
//! topological order. A graph lives for one forward/backward pass.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Input values and bookkeeping handed to a backward rule.
pub(crate) struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    /// Whether each input wants a gradient. Rules may skip work for `false`.
    pub needs: Vec<bool>,
}

/// Vector-Jacobian product of one recorded operation.
pub(crate) trait Backward {
    fn name(&self) -> &'static str;

    /// Returns one entry per input; `None` means no contribution.
    fn backward(&self, ctx: &BackwardCtx<'_>, grad_out: &Tensor) -> Result<Vec<Option<Tensor>>>;
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Backward>>,
}

/// Norm flavours used by the losses and the anomaly score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L1,
    L2,
}

pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    backward_calls: usize,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            backward_calls: 0,
        }
    }

    /// A graph that records values only. Nothing in it can require a gradient.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn backward_calls(&self) -> usize {
        self.backward_calls
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad && self.grad_enabled, Vec::new(), None)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies `v` into a fresh constant leaf, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.value(v)?.clone();
        Ok(self.constant(value))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or_else(|| Error::Contract(format!("variable {} is not part of this graph", v.0)))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.get(v.0).is_some_and(|n| n.requires_grad)
    }

    /// Accumulated gradient, or `None` if nothing reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|n| n.grad.as_ref())
    }

    /// Accumulated gradient with the zero-initialized default.
    pub fn grad_or_zeros(&self, v: Var) -> Result<Tensor> {
        let node = self.nodes.get(v.0).ok_or_else(|| {
            Error::Contract(format!("variable {} is not part of this graph", v.0))
        })?;
        Ok(node
            .grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(node.value.shape())))
    }

    pub(crate) fn record(
        &mut self,
        value: Tensor,
        inputs: Vec<Var>,
        rule: Box<dyn Backward>,
    ) -> Result<Var> {
        for v in &inputs {
            self.value(*v)?;
        }
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        if requires_grad {
            Ok(self.push(value, true, inputs, Some(rule)))
        } else {
            Ok(self.push(value, false, Vec::new(), None))
        }
    }

    fn push(
        &mut self,
        value: Tensor,
        requires_grad: bool,
        inputs: Vec<Var>,
        rule: Option<Box<dyn Backward>>,
    ) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            inputs,
            rule,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a one-element root.
    ///
    /// Gradients of this sweep are computed on the side and then added to
    /// whatever each node already holds, so repeated calls accumulate.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = self.value(root)?;
        if !root_value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let seed = Tensor::full(root_value.shape(), 1.0);
        self.backward_calls += 1;
        let mut pass: Vec<Option<Tensor>> = (0..=root.0).map(|_| None).collect();
        pass[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let Some(grad_out) = pass[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(rule) = node.rule.as_ref() {
                let ctx = BackwardCtx {
                    inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                    output: &node.value,
                    needs: node
                        .inputs
                        .iter()
                        .map(|v| self.nodes[v.0].requires_grad)
                        .collect(),
                };
                let grads = rule.backward(&ctx, &grad_out)?;
                debug_assert_eq!(grads.len(), node.inputs.len(), "{}", rule.name());
                for (input, g) in node.inputs.iter().zip(grads) {
                    let Some(g) = g else { continue };
                    if !self.nodes[input.0].requires_grad {
                        continue;
                    }
                    if g.shape() != self.nodes[input.0].value.shape() {
                        return Err(Error::Dimension(format!(
                            "{} produced gradient of shape {:?} for input of shape {:?}",
                            rule.name(),
                            g.shape(),
                            self.nodes[input.0].value.shape()
                        )));
                    }
                    match &mut pass[input.0] {
                        Some(acc) => acc.add_assign(&g)?,
                        slot => *slot = Some(g),
                    }
                }
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&grad_out)?,
                slot => *slot = Some(grad_out),
            }
        }
        Ok(())
    }

    // ----- elementwise ------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_values("add", a, b, |x, y| x + y)?;
        self.record(out, vec![a, b], Box::new(AddRule))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_values("sub", a, b, |x, y| x - y)?;
        self.record(out, vec![a, b], Box::new(SubRule))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_values("mul", a, b, |x, y| x * y)?;
        self.record(out, vec![a, b], Box::new(MulRule))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, factor: f32) -> Result<Var> {
        let out = self.value(a)?.map(|x| x * factor);
        self.record(out, vec![a], Box::new(ScaleRule(factor)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Result<Var> {
        let out = self.value(a)?.map(|x| x + c);
        self.record(out, vec![a], Box::new(ScaleRule(1.0)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a)?.reshape(shape)?;
        self.record(out, vec![a], Box::new(ReshapeRule))
    }

    // ----- reductions -------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a)?.sum_f64() as f32);
        self.record(out, vec![a], Box::new(SumRule { mean: false }))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a)?;
        let out = Tensor::scalar((t.sum_f64() / t.numel() as f64) as f32);
        self.record(out, vec![a], Box::new(SumRule { mean: true }))
    }

    /// Whole-tensor L1 or Euclidean norm.
    pub fn norm(&mut self, kind: NormKind, a: Var) -> Result<Var> {
        let t = self.value(a)?;
        let out = Tensor::scalar(norm_of(kind, t.data()) as f32);
        self.record(out, vec![a], Box::new(NormRule { kind, rows: 1 }))
    }

    /// Per-sample norms of an `N x ...` tensor, flattened to shape `[N]`.
    pub fn row_norms(&mut self, kind: NormKind, a: Var) -> Result<Var> {
        let t = self.value(a)?;
        if t.rank() == 0 {
            return Err(Error::Dimension("row_norms needs a batch axis".into()));
        }
        let rows = t.shape()[0];
        let width = t.numel() / rows;
        let norms: Vec<f32> = t
            .data()
            .chunks(width)
            .map(|r| norm_of(kind, r) as f32)
            .collect();
        self.record(
            Tensor::from_vec(norms),
            vec![a],
            Box::new(NormRule { kind, rows }),
        )
    }

    /// Replaces every row of an `N x ...` tensor by the mean row.
    pub fn batch_mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a)?;
        if t.rank() == 0 {
            return Err(Error::Dimension(
                "batch_mean_rows needs a batch axis".into(),
            ));
        }
        let rows = t.shape()[0];
        let width = t.numel() / rows;
        let mean = column_means(t.data(), width);
        let data = mean.iter().copied().cycle().take(t.numel()).collect();
        let out = Tensor::new(t.shape(), data)?;
        self.record(out, vec![a], Box::new(BatchMeanRule { rows }))
    }

    fn zip_values(&self, op: &str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        let (ta, tb) = (self.value(a)?, self.value(b)?);
        if ta.shape() != tb.shape() {
            return Err(Error::shape_mismatch(op, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape(), data)
    }
}

fn column_means(data: &[f32], width: usize) -> Vec<f32> {
    let rows = data.len() / width;
    let mut acc = vec![0.0f64; width];
    for row in data.chunks(width) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v);
        }
    }
    acc.into_iter().map(|v| (v / rows as f64) as f32).collect()
}

fn norm_of(kind: NormKind, xs: &[f32]) -> f64 {
    match kind {
        NormKind::L1 => xs.iter().map(|&v| f64::from(v).abs()).sum(),
        NormKind::L2 => xs
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt(),
    }
}

struct AddRule;
impl Backward for AddRule {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &BackwardCtx<'_>, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.clone()), Some(g.clone())])
    }
}

struct SubRule;
impl Backward for SubRule {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let neg = ctx.needs[1].then(|| g.map(|v| -v));
        Ok(vec![Some(g.clone()), neg])
    }
}

struct MulRule;
impl Backward for MulRule {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let times = |other: &Tensor| {
            let data = g
                .data()
                .iter()
                .zip(other.data())
                .map(|(a, b)| a * b)
                .collect();
            Tensor::new(g.shape(), data)
        };
        let ga = if ctx.needs[0] {
            Some(times(ctx.inputs[1])?)
        } else {
            None
        };
        let gb = if ctx.needs[1] {
            Some(times(ctx.inputs[0])?)
        } else {
            None
        };
        Ok(vec![ga, gb])
    }
}

struct ScaleRule(f32);
impl Backward for ScaleRule {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &BackwardCtx<'_>, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let c = self.0;
        Ok(vec![Some(g.map(|v| v * c))])
    }
}

struct ReshapeRule;
impl Backward for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(g.reshape(ctx.inputs[0].shape())?)])
    }
}

struct SumRule {
    mean: bool,
}
impl Backward for SumRule {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }
    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let input = ctx.inputs[0];
        let mut v = g.item()?;
        if self.mean {
            v /= input.numel() as f32;
        }
        Ok(vec![Some(Tensor::full(input.shape(), v))])
    }
}

struct BatchMeanRule {
    rows: usize,
}
impl Backward for BatchMeanRule {
    fn name(&self) -> &'static str {
        "batch_mean_rows"
    }
    fn backward(&self, _: &BackwardCtx<'_>, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let width = g.numel() / self.rows;
        let mean = column_means(g.data(), width);
        let data = mean.iter().copied().cycle().take(g.numel()).collect();
        Ok(vec![Some(Tensor::new(g.shape(), data)?)])
    }
}

struct NormRule {
    kind: NormKind,
    rows: usize,
}
impl Backward for NormRule {
    fn name(&self) -> &'static str {
        "norm"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let input = ctx.inputs[0];
        let width = input.numel() / self.rows;
        let mut out = vec![0.0f32; input.numel()];
        for (row, (src, dst)) in input
            .data()
            .chunks(width)
            .zip(out.chunks_mut(width))
            .enumerate()
        {
            let upstream = g.data()[row];
            match self.kind {
                NormKind::L1 => {
                    for (d, &x) in dst.iter_mut().zip(src) {
                        // subgradient 0 at the kink
                        *d = if x > 0.0 {
                            upstream
                        } else if x < 0.0 {
                            -upstream
                        } else {
                            0.0
                        };
                    }
                }
                NormKind::L2 => {
                    let norm = ctx.output.data()[row];
                    if norm > 0.0 {
                        let k = upstream / norm;
                        for (d, &x) in dst.iter_mut().zip(src) {
                            *d = x * k;
                        }
                    }
                }
            }
        }
        Ok(vec![Some(Tensor::new(input.shape(), out)?)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(g: &mut Graph, xs: &[f32]) -> Var {
        g.param(Tensor::from_vec(xs.to_vec()))
    }

    #[test]
    fn add_is_elementwise() {
        let mut g = Graph::new();
        let a = vec_leaf(&mut g, &[1.0, 2.0]);
        let b = vec_leaf(&mut g, &[3.0, 4.0]);
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_by_zero_annihilates() {
        let mut g = Graph::new();
        let a = g.param(Tensor::new(&[2, 2], vec![1.0, -2.0, 3.0, 4.5]).unwrap());
        let z = g.scale(a, 0.0).unwrap();
        assert_eq!(g.value(z).unwrap(), &Tensor::zeros(&[2, 2]));
        let zeros = g.constant(Tensor::zeros(&[2, 2]));
        let m = g.mul(a, zeros).unwrap();
        assert!(g.value(m).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = vec_leaf(&mut g, &[1.0, 2.0]);
        let b = vec_leaf(&mut g, &[1.0, 2.0, 3.0]);
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn reductions() {
        let mut g = Graph::new();
        let a = vec_leaf(&mut g, &[2.0, 4.0, 6.0]);
        let m = g.mean(a).unwrap();
        assert_eq!(g.value(m).unwrap().item().unwrap(), 4.0);
        let z = g.constant(Tensor::zeros(&[3, 3]));
        let s = g.sum(z).unwrap();
        assert_eq!(g.value(s).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn norms() {
        let mut g = Graph::new();
        let a = vec_leaf(&mut g, &[1.0, -2.0, 3.0]);
        let l1 = g.norm(NormKind::L1, a).unwrap();
        assert_eq!(g.value(l1).unwrap().item().unwrap(), 6.0);
        let b = vec_leaf(&mut g, &[3.0, 4.0]);
        let l2 = g.norm(NormKind::L2, b).unwrap();
        assert_eq!(g.value(l2).unwrap().item().unwrap(), 5.0);
    }

    #[test]
    fn l2_gradient_at_origin_is_zero() {
        let mut g = Graph::new();
        let a = vec_leaf(&mut g, &[0.0, 0.0]);
        let n = g.norm(NormKind::L2, a).unwrap();
        g.backward(n).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn l1_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let a = vec_leaf(&mut g, &[0.0, -1.0, 2.0]);
        let n = g.norm(NormKind::L1, a).unwrap();
        g.backward(n).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[0.0, -1.0, 1.0]);
    }

    #[test]
    fn lone_scalar_backward() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        g.backward(x).unwrap();
        assert_eq!(g.grad(x).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn reuse_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.add(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item().unwrap(), 2.0);
        assert_eq!(g.grad(y).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let a = vec_leaf(&mut g, &[1.0, 2.0]);
        assert!(matches!(g.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_leaves_keep_no_gradient() {
        let mut g = Graph::new();
        let a = vec_leaf(&mut g, &[1.0, 2.0]);
        let b = vec_leaf(&mut g, &[5.0]);
        let s = g.sum(a).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(b).is_none());
        assert_eq!(g.grad_or_zeros(b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let a = vec_leaf(&mut g, &[1.0, 2.0]);
        let d = g.detach(a).unwrap();
        let s = g.sum(d).unwrap();
        assert!(!g.requires_grad(s));
    }

    #[test]
    fn no_grad_graph_records_values_only() {
        let mut g = Graph::no_grad();
        let a = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let s = g.sum(a).unwrap();
        assert!(!g.requires_grad(s));
        assert_eq!(g.value(s).unwrap().item().unwrap(), 3.0);
    }

    #[test]
    fn row_norms_per_sample() {
        let mut g = Graph::new();
        let a = g.param(Tensor::new(&[2, 2], vec![3.0, 4.0, 0.0, 0.0]).unwrap());
        let n = g.row_norms(NormKind::L2, a).unwrap();
        assert_eq!(g.value(n).unwrap().data(), &[5.0, 0.0]);
    }
}
