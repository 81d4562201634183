use std::collections::{HashMap, HashSet};

use crate::error::{AutodiffError, Result};
use crate::ops::Op;
use crate::tensor::{no_grad, NoGradGuard, Tensor};

/// Gradients of a one-element `output` with respect to each tensor in `wrt`.
///
/// Every `wrt` tensor must be part of `output`'s graph (it requires grad and
/// `output` depends on it). With `create_graph` the returned gradients are
/// recorded as graph nodes themselves and can be differentiated again;
/// otherwise they are constants.
///
/// Nodes are visited in decreasing id order, which is a reverse topological
/// order, and gradient contributions are accumulated in input order, so
/// repeated calls on identical graphs produce identical bits.
pub fn grad(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if output.numel() != 1 {
        return Err(AutodiffError::Shape(format!(
            "grad needs a one-element output, got shape {:?}",
            output.shape()
        )));
    }
    let mut nodes: HashMap<u64, Tensor> = HashMap::new();
    if output.requires_grad_flag() {
        let mut stack = vec![output.clone()];
        while let Some(t) = stack.pop() {
            if nodes.contains_key(&t.id()) {
                continue;
            }
            if let Some(node) = t.node() {
                stack.extend(node.inputs.iter().filter(|i| i.requires_grad_flag()).cloned());
            }
            nodes.insert(t.id(), t);
        }
    }
    let targets: HashSet<u64> = wrt.iter().map(|t| t.id()).collect();
    for t in wrt {
        if !nodes.contains_key(&t.id()) {
            return Err(AutodiffError::Graph(format!(
                "tensor {} (shape {:?}) is not part of the output's graph",
                t.id(),
                t.shape()
            )));
        }
    }

    let mut order: Vec<u64> = nodes.keys().copied().collect();
    order.sort_unstable();
    // A node is worth visiting only if some target is reachable from it.
    let mut needed: HashSet<u64> = HashSet::new();
    for id in &order {
        let t = &nodes[id];
        let hit = targets.contains(id)
            || t.node()
                .is_some_and(|n| n.inputs.iter().any(|i| needed.contains(&i.id())));
        if hit {
            needed.insert(*id);
        }
    }

    let _guard: Option<NoGradGuard> = (!create_graph).then(no_grad);
    let mut grads: HashMap<u64, Tensor> = HashMap::new();
    grads.insert(output.id(), Tensor::ones(output.shape())?);
    let mut results: HashMap<u64, Tensor> = HashMap::new();

    for id in order.iter().rev() {
        let Some(g) = grads.remove(id) else { continue };
        if targets.contains(id) {
            results.insert(*id, g.clone());
        }
        let t = &nodes[id];
        let Some(node) = t.node() else { continue };
        let need: Vec<bool> = node
            .inputs
            .iter()
            .map(|i| i.requires_grad_flag() && needed.contains(&i.id()))
            .collect();
        if !need.iter().any(|&b| b) {
            continue;
        }
        let input_grads = backward_rule(node.op, &node.inputs, &g, &need)?;
        for ((input, gi), &want) in node.inputs.iter().zip(input_grads).zip(&need) {
            let (Some(gi), true) = (gi, want) else { continue };
            let acc = match grads.remove(&input.id()) {
                Some(prev) => prev.add(&gi)?,
                None => gi,
            };
            grads.insert(input.id(), acc);
        }
    }

    wrt.iter()
        .map(|t| match results.remove(&t.id()) {
            Some(g) => Ok(g),
            None => Tensor::zeros(t.shape()),
        })
        .collect()
}

fn mask(x: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    Tensor::new(x.data().iter().map(|&v| f(v)).collect(), x.shape())
}

fn hw(t: &Tensor) -> (usize, usize) {
    let s = t.shape();
    (s[2], s[3])
}

/// Vector-Jacobian products for one recorded op, expressed with
/// differentiable ops.
fn backward_rule(op: Op, inputs: &[Tensor], g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
    let x = &inputs[0];
    Ok(match op {
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), Some(g.neg())],
        Op::Mul => {
            let b = &inputs[1];
            vec![
                if need[0] { Some(g.mul(b)?) } else { None },
                if need[1] { Some(g.mul(x)?) } else { None },
            ]
        }
        Op::Neg => vec![Some(g.neg())],
        Op::Scale(c) => vec![Some(g.scale(c))],
        Op::AddScalar => vec![Some(g.clone())],
        Op::Powf(p) => {
            if p == 0.0 {
                vec![None]
            } else {
                vec![Some(g.mul(&x.powf(p - 1.0).scale(p))?)]
            }
        }
        Op::Relu => vec![Some(g.mul(&mask(x, |v| if v > 0.0 { 1.0 } else { 0.0 })?)?)],
        Op::LeakyRelu(s) => vec![Some(g.mul(&mask(x, |v| if v > 0.0 { 1.0 } else { s })?)?)],
        Op::Tanh => {
            let t = x.tanh();
            vec![Some(g.mul(&t.square().neg().add_scalar(1.0))?)]
        }
        Op::SumAxes => vec![Some(g.broadcast_to(x.shape())?)],
        Op::BroadcastTo => {
            let axes: Vec<usize> = x
                .shape()
                .iter()
                .zip(g.shape())
                .enumerate()
                .filter(|(_, (&s, &t))| s == 1 && t != 1)
                .map(|(i, _)| i)
                .collect();
            vec![Some(g.sum_axes(&axes)?)]
        }
        Op::Reshape => vec![Some(g.reshape(x.shape())?)],
        Op::Conv2d(p) => {
            let w = &inputs[1];
            let ks = w.shape();
            vec![
                if need[0] { Some(g.conv_transpose2d_sized(w, p, hw(x))?) } else { None },
                if need[1] { Some(x.conv2d_kernel_grad(g, (ks[2], ks[3]), p)?) } else { None },
            ]
        }
        Op::ConvTranspose2d(p) => {
            let w = &inputs[1];
            let ks = w.shape();
            vec![
                if need[0] { Some(g.conv2d(w, p)?) } else { None },
                if need[1] { Some(g.conv2d_kernel_grad(x, (ks[2], ks[3]), p)?) } else { None },
            ]
        }
        Op::ConvKernelGrad(params) => {
            let gy = &inputs[1];
            vec![
                if need[0] { Some(gy.conv_transpose2d_sized(g, params, hw(x))?) } else { None },
                if need[1] { Some(x.conv2d(g, params)?) } else { None },
            ]
        }
    })
}
