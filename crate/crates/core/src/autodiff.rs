//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Each operation is evaluated as it is recorded, so node values are always
//! available and the node list is in topological order by construction.
//! [`Graph::backward`] walks the tape in reverse and leaves a gradient on
//! every node; nodes the output does not depend on get explicit zeros.

use crate::error::{Error, Result};
use crate::layers::{self, chw};
use crate::tensor::{Element, Tensor};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Mul,
    Scale,
    Sum,
    Reshape,
    Conv2d,
    Relu,
    MaxPool2x2,
    Upsample2x,
    ConcatChannels,
    GlobalAvgPool,
    Dense,
    SoftmaxCrossEntropy,
    Select,
}

#[derive(Clone, Debug)]
enum Saved<T> {
    Nothing,
    Factor(T),
    Argmax(Vec<usize>),
    Probs { probs: Tensor<T>, target: usize },
    Index(usize),
}

#[derive(Clone, Debug)]
pub struct Node<T> {
    id: NodeId,
    op: OpKind,
    parents: Vec<NodeId>,
    value: Tensor<T>,
    gradient: Option<Tensor<T>>,
    saved: Saved<T>,
}

impl<T: Element> Node<T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn op(&self) -> OpKind {
        self.op
    }

    pub fn parents(&self) -> &[NodeId] {
        &self.parents
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn gradient(&self) -> Option<&Tensor<T>> {
        self.gradient.as_ref()
    }
}

/// A tape of recorded operations. One graph is meant to be driven from a
/// single thread; build separate graphs for concurrent work.
#[derive(Clone, Debug, Default)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node<T> {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    /// Gradient of the last backward output with respect to `id`.
    pub fn gradient(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id].gradient.as_ref()
    }

    /// Value of the most recently recorded node.
    pub fn forward(&self) -> Result<&Tensor<T>> {
        self.nodes
            .last()
            .map(|n| &n.value)
            .ok_or_else(|| Error::Usage("forward on an empty graph".into()))
    }

    fn check(&self, id: NodeId) -> Result<&Tensor<T>> {
        self.nodes
            .get(id)
            .map(|n| &n.value)
            .ok_or_else(|| Error::Usage(format!("node {id} does not exist (graph has {} nodes)", self.nodes.len())))
    }

    fn push(&mut self, op: OpKind, parents: Vec<NodeId>, value: Tensor<T>, saved: Saved<T>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            op,
            parents,
            value,
            gradient: None,
            saved,
        });
        id
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        let (va, vb) = (self.check(a)?, self.check(b)?);
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!(
                "node {a} has shape {:?} but node {b} has shape {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        Ok(())
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(OpKind::Leaf, Vec::new(), value, Saved::Nothing)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let mut v = self.nodes[a].value.clone();
        v.add_assign(&self.nodes[b].value)?;
        Ok(self.push(OpKind::Add, vec![a, b], v, Saved::Nothing))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let v = Tensor::new(va.shape(), data)?;
        Ok(self.push(OpKind::Mul, vec![a, b], v, Saved::Nothing))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> Result<NodeId> {
        let v = self.check(a)?.map(|x| x * factor);
        Ok(self.push(OpKind::Scale, vec![a], v, Saved::Factor(factor)))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.check(a)?.sum());
        Ok(self.push(OpKind::Sum, vec![a], v, Saved::Nothing))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.check(a)?.reshape(shape)?;
        Ok(self.push(OpKind::Reshape, vec![a], v, Saved::Nothing))
    }

    /// Same-padded 3x3 convolution of `x [C,H,W]` with `weights [O,C,3,3]`
    /// and `bias [O]`.
    pub fn conv2d(&mut self, x: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let (c, h, w) = chw(self.check(x)?)?;
        let ws = self.check(weights)?.shape().to_vec();
        let bs = self.check(bias)?.shape().to_vec();
        if ws.len() != 4 || ws[1] != c || ws[2] != 3 || ws[3] != 3 {
            return Err(Error::Shape(format!(
                "node {weights} has conv weights {ws:?} incompatible with node {x} input of {c} channels"
            )));
        }
        if bs != [ws[0]] {
            return Err(Error::Shape(format!(
                "node {bias} has bias shape {bs:?} but node {weights} has {} output channels",
                ws[0]
            )));
        }
        let out = layers::conv2d_forward(
            self.nodes[x].value.data(),
            (c, h, w),
            self.nodes[weights].value.data(),
            self.nodes[bias].value.data(),
            ws[0],
        );
        let v = Tensor::new(&[ws[0], h, w], out)?;
        Ok(self.push(OpKind::Conv2d, vec![x, weights, bias], v, Saved::Nothing))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = layers::relu(self.check(x)?);
        Ok(self.push(OpKind::Relu, vec![x], v, Saved::Nothing))
    }

    pub fn maxpool2x2(&mut self, x: NodeId) -> Result<NodeId> {
        let (v, argmax) = layers::maxpool2x2(self.check(x)?)
            .map_err(|e| Error::Shape(format!("node {x}: {e}")))?;
        Ok(self.push(OpKind::MaxPool2x2, vec![x], v, Saved::Argmax(argmax)))
    }

    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId> {
        let v = layers::upsample2x(self.check(x)?)?;
        Ok(self.push(OpKind::Upsample2x, vec![x], v, Saved::Nothing))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = layers::concat_channels(self.check(a)?, self.check(b)?)
            .map_err(|e| Error::Shape(format!("nodes {a} and {b}: {e}")))?;
        Ok(self.push(OpKind::ConcatChannels, vec![a, b], v, Saved::Nothing))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let v = layers::global_avg_pool(self.check(x)?)?;
        Ok(self.push(OpKind::GlobalAvgPool, vec![x], v, Saved::Nothing))
    }

    pub fn dense(&mut self, x: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.check(x)?.shape().to_vec();
        let ws = self.check(weights)?.shape().to_vec();
        let bs = self.check(bias)?.shape().to_vec();
        if ws.len() != 2 || xs != [ws[1]] {
            return Err(Error::Shape(format!(
                "node {weights} has dense weights {ws:?} incompatible with node {x} of shape {xs:?}"
            )));
        }
        if bs != [ws[0]] {
            return Err(Error::Shape(format!(
                "node {bias} has bias shape {bs:?} but node {weights} has {} outputs",
                ws[0]
            )));
        }
        let out = layers::dense_forward(
            self.nodes[x].value.data(),
            self.nodes[weights].value.data(),
            self.nodes[bias].value.data(),
        );
        let v = Tensor::new(&[ws[0]], out)?;
        Ok(self.push(OpKind::Dense, vec![x, weights, bias], v, Saved::Nothing))
    }

    /// Cross-entropy loss (shape `[1]`) of `logits [K]` against `target`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let (loss, probs) = layers::softmax_cross_entropy(self.check(logits)?, target)?;
        Ok(self.push(
            OpKind::SoftmaxCrossEntropy,
            vec![logits],
            Tensor::scalar(loss),
            Saved::Probs { probs, target },
        ))
    }

    /// Probabilities saved by a cross-entropy node.
    pub fn probabilities(&self, loss: NodeId) -> Option<&Tensor<T>> {
        match &self.nodes.get(loss)?.saved {
            Saved::Probs { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Element `index` of a flattened node, shape `[1]`.
    pub fn select(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let v = self.check(x)?;
        if index >= v.len() {
            return Err(Error::Usage(format!(
                "index {index} out of range for node {x} with {} elements",
                v.len()
            )));
        }
        let s = Tensor::scalar(v.data()[index]);
        Ok(self.push(OpKind::Select, vec![x], s, Saved::Index(index)))
    }

    /// Back-propagates from the scalar node `output`, overwriting the
    /// gradient stored on every node.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        let out_shape = self.check(output)?.shape();
        if out_shape != [1] {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, node {output} has shape {out_shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[output] = Some(Tensor::scalar(T::one()));

        for id in (0..=output).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let contributions = self.local_gradients(node, &g)?;
            for (parent, pg) in node.parents.iter().zip(contributions) {
                match &mut grads[*parent] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[id] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.gradient = Some(g.unwrap_or_else(|| node.value.zeros_like()));
        }
        Ok(())
    }

    /// Vector-Jacobian products of one node, one per parent.
    fn local_gradients(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let parent = |i: usize| &self.nodes[node.parents[i]].value;
        let grads = match node.op {
            OpKind::Leaf => Vec::new(),
            OpKind::Add => vec![g.clone(), g.clone()],
            OpKind::Mul => {
                let (a, b) = (parent(0), parent(1));
                let ga = g.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
                let gb = g.data().iter().zip(a.data()).map(|(&x, &y)| x * y).collect();
                vec![Tensor::new(a.shape(), ga)?, Tensor::new(b.shape(), gb)?]
            }
            OpKind::Scale => {
                let Saved::Factor(f) = node.saved else { unreachable!() };
                vec![g.map(|x| x * f)]
            }
            OpKind::Sum => vec![Tensor::full(parent(0).shape(), g.data()[0])?],
            OpKind::Reshape => vec![g.reshape(parent(0).shape())?],
            OpKind::Conv2d => {
                let (x, w) = (parent(0), parent(1));
                let dims = chw(x)?;
                let cout = w.shape()[0];
                let (gx, gw, gb) = layers::conv2d_backward(x.data(), dims, w.data(), cout, g.data());
                vec![
                    Tensor::new(x.shape(), gx)?,
                    Tensor::new(w.shape(), gw)?,
                    Tensor::new(&[cout], gb)?,
                ]
            }
            OpKind::Relu => {
                let x = parent(0);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![Tensor::new(x.shape(), data)?]
            }
            OpKind::MaxPool2x2 => {
                let Saved::Argmax(argmax) = &node.saved else { unreachable!() };
                let mut gx = parent(0).zeros_like();
                let dst = gx.data_mut();
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    dst[src] += gv;
                }
                vec![gx]
            }
            OpKind::Upsample2x => {
                let x = parent(0);
                vec![Tensor::new(x.shape(), layers::upsample_backward(g.data(), chw(x)?))?]
            }
            OpKind::ConcatChannels => {
                let (a, b) = (parent(0), parent(1));
                let cut = a.len();
                vec![
                    Tensor::new(a.shape(), g.data()[..cut].to_vec())?,
                    Tensor::new(b.shape(), g.data()[cut..].to_vec())?,
                ]
            }
            OpKind::GlobalAvgPool => {
                let x = parent(0);
                let (_, h, w) = chw(x)?;
                let n = T::from_f64((h * w) as f64);
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&gv| std::iter::repeat(gv / n).take(h * w))
                    .collect();
                vec![Tensor::new(x.shape(), data)?]
            }
            OpKind::Dense => {
                let (x, w) = (parent(0), parent(1));
                let (m, n) = (w.shape()[0], w.shape()[1]);
                let (wd, gd, xd) = (w.data(), g.data(), x.data());
                let mut gx = vec![T::zero(); n];
                let mut gw = vec![T::zero(); m * n];
                for o in 0..m {
                    for i in 0..n {
                        gx[i] += wd[o * n + i] * gd[o];
                        gw[o * n + i] = gd[o] * xd[i];
                    }
                }
                vec![Tensor::new(&[n], gx)?, Tensor::new(&[m, n], gw)?, g.clone()]
            }
            OpKind::SoftmaxCrossEntropy => {
                let Saved::Probs { probs, target } = &node.saved else { unreachable!() };
                let up = g.data()[0];
                let mut d = probs.map(|p| p * up);
                d.data_mut()[*target] -= up;
                vec![d]
            }
            OpKind::Select => {
                let Saved::Index(i) = node.saved else { unreachable!() };
                let mut gx = parent(0).zeros_like();
                gx.data_mut()[i] = g.data()[0];
                vec![gx]
            }
        };
        Ok(grads)
    }
}
