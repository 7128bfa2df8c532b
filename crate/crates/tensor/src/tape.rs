//! Wengert-list recording of tensor operations and the reverse sweep.
//!
//! Every forward op appends one node holding its output value and the
//! information its gradient rule needs. Nodes are only ever appended, so
//! the list is always in topological order and [`Tape::backward`] walks it
//! once in reverse.

use crate::error::{Result, TensorError};
use crate::gemm::gemm;
use crate::tensor::{strides, Tensor};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        groups: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LeakyRelu {
        x: Var,
        alpha: f64,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    GroupedLinear {
        x: Var,
        w: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Mse {
        pred: Var,
        target: Var,
        mask: Vec<f64>,
        count: f64,
    },
    Bce {
        prob: Var,
        label: Vec<f64>,
    },
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Records a computation graph. Single-threaded; build one per graph.
#[derive(Debug, Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Places a tensor on the tape. `requires_grad` marks it as a
    /// differentiation target.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("gradient shape"))
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse sweep from a scalar `loss`. Populates the gradient of every
    /// grad-enabled node reachable from it. Gradients from several
    /// consumers of one node are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &self.nodes[loss.0];
        if node.value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(TensorError::Contract(
                "backward on a value that does not depend on any grad-enabled tensor".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let val = |v: &Var| nodes[v.0].value.data();
        let wants = |v: &Var| nodes[v.0].requires_grad;
        // Hands back a zero-initialised accumulator for `v`.
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
        }

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                if wants(a) {
                    gemm(
                        m,
                        n,
                        k,
                        g,
                        false,
                        val(b),
                        true,
                        slot(grads, nodes, *a),
                        true,
                    );
                }
                if wants(b) {
                    gemm(
                        k,
                        m,
                        n,
                        val(a),
                        true,
                        g,
                        false,
                        slot(grads, nodes, *b),
                        true,
                    );
                }
            }
            Op::BatchMatMul {
                a,
                b,
                trans_b,
                groups,
                m,
                k,
                n,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (sa, sb, sc) = (m * k, k * n, m * n);
                if wants(a) {
                    let (av, bv) = (slot(grads, nodes, *a), val(b));
                    for gi in 0..*groups {
                        gemm(
                            m,
                            n,
                            k,
                            &g[gi * sc..(gi + 1) * sc],
                            false,
                            &bv[gi * sb..(gi + 1) * sb],
                            !*trans_b,
                            &mut av[gi * sa..(gi + 1) * sa],
                            true,
                        );
                    }
                }
                if wants(b) {
                    let (bv, av) = (slot(grads, nodes, *b), val(a));
                    for gi in 0..*groups {
                        let (gs, as_, bs) = (
                            &g[gi * sc..(gi + 1) * sc],
                            &av[gi * sa..(gi + 1) * sa],
                            &mut bv[gi * sb..(gi + 1) * sb],
                        );
                        if *trans_b {
                            gemm(n, m, k, gs, true, as_, false, bs, true);
                        } else {
                            gemm(k, m, n, as_, true, gs, false, bs, true);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(a) {
                    add_into(slot(grads, nodes, *a), g);
                }
                if wants(b) {
                    add_into(slot(grads, nodes, *b), g);
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    add_into(slot(grads, nodes, *a), g);
                }
                if wants(b) {
                    for (d, &x) in slot(grads, nodes, *b).iter_mut().zip(g) {
                        *d -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    let bv = val(b);
                    for ((d, &x), &y) in slot(grads, nodes, *a).iter_mut().zip(g).zip(bv) {
                        *d += x * y;
                    }
                }
                if wants(b) {
                    let av = val(a);
                    for ((d, &x), &y) in slot(grads, nodes, *b).iter_mut().zip(g).zip(av) {
                        *d += x * y;
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if wants(x) {
                    add_into(slot(grads, nodes, *x), g);
                }
                if wants(bias) {
                    let db = slot(grads, nodes, *bias);
                    let n = db.len();
                    for chunk in g.chunks_exact(n) {
                        add_into(db, chunk);
                    }
                }
            }
            Op::Scale { x, factor } => {
                if wants(x) {
                    for (d, &v) in slot(grads, nodes, *x).iter_mut().zip(g) {
                        *d += factor * v;
                    }
                }
            }
            Op::Permute { x, axes } => {
                if wants(x) {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inverse[a] = i;
                    }
                    let back = permute_data(g, out.shape(), &inverse);
                    add_into(slot(grads, nodes, *x), &back);
                }
            }
            Op::Reshape { x } => {
                if wants(x) {
                    add_into(slot(grads, nodes, *x), g);
                }
            }
            Op::Softmax { x, axis } => {
                if wants(x) {
                    let (outer, n, inner) = split_axis(out.shape(), *axis);
                    let y = out.data();
                    let dx = slot(grads, nodes, *x);
                    for o in 0..outer {
                        for j in 0..inner {
                            let at = |t: usize| (o * n + t) * inner + j;
                            let dot: f64 = (0..n).map(|t| g[at(t)] * y[at(t)]).sum();
                            for t in 0..n {
                                dx[at(t)] += y[at(t)] * (g[at(t)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LeakyRelu { x, alpha } => {
                if wants(x) {
                    let xv = val(x);
                    for ((d, &gv), &xi) in slot(grads, nodes, *x).iter_mut().zip(g).zip(xv) {
                        *d += if xi >= 0.0 { gv } else { alpha * gv };
                    }
                }
            }
            Op::Sigmoid { x } => {
                if wants(x) {
                    for ((d, &gv), &y) in slot(grads, nodes, *x).iter_mut().zip(g).zip(out.data()) {
                        *d += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh { x } => {
                if wants(x) {
                    for ((d, &gv), &y) in slot(grads, nodes, *x).iter_mut().zip(g).zip(out.data()) {
                        *d += gv * (1.0 - y * y);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let n = nodes[gamma.0].value.len();
                let gam = val(gamma);
                if wants(x) {
                    let dx = slot(grads, nodes, *x);
                    for (r, &rs) in inv_std.iter().enumerate() {
                        let row = r * n..(r + 1) * n;
                        let (gr, xh) = (&g[row.clone()], &normalized[row.clone()]);
                        let mut mean_g = 0.0;
                        let mut mean_gx = 0.0;
                        for t in 0..n {
                            let gg = gr[t] * gam[t];
                            mean_g += gg;
                            mean_gx += gg * xh[t];
                        }
                        mean_g /= n as f64;
                        mean_gx /= n as f64;
                        for t in 0..n {
                            dx[r * n + t] += rs * (gr[t] * gam[t] - mean_g - xh[t] * mean_gx);
                        }
                    }
                }
                if wants(gamma) {
                    let dg = slot(grads, nodes, *gamma);
                    for (gr, xh) in g.chunks_exact(n).zip(normalized.chunks_exact(n)) {
                        for t in 0..n {
                            dg[t] += gr[t] * xh[t];
                        }
                    }
                }
                if wants(beta) {
                    let db = slot(grads, nodes, *beta);
                    for gr in g.chunks_exact(n) {
                        add_into(db, gr);
                    }
                }
            }
            Op::GatherRows { table, indices } => {
                if wants(table) {
                    let d = nodes[table.0].value.shape()[1];
                    let dt = slot(grads, nodes, *table);
                    for (r, &ix) in indices.iter().enumerate() {
                        add_into(&mut dt[ix * d..(ix + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = nodes[v.0].value.shape()[*axis];
                    if wants(v) {
                        let dv = slot(grads, nodes, *v);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            add_into(&mut dv[dst..dst + len * inner], &g[src..src + len * inner]);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                if wants(x) {
                    let (outer, full, inner) = split_axis(nodes[x.0].value.shape(), *axis);
                    let len = out.shape()[*axis];
                    let dx = slot(grads, nodes, *x);
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        add_into(&mut dx[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                }
            }
            Op::GroupedLinear { x, w, b } => {
                let xs = nodes[x.0].value.shape();
                let (batch, groups, din) = (xs[0], xs[1], xs[2]);
                let dout = out.shape()[2];
                if wants(x) {
                    let (dx, wv) = (slot(grads, nodes, *x), val(w));
                    for bi in 0..batch {
                        for f in 0..groups {
                            let row = bi * groups + f;
                            gemm(
                                1,
                                dout,
                                din,
                                &g[row * dout..(row + 1) * dout],
                                false,
                                &wv[f * din * dout..(f + 1) * din * dout],
                                true,
                                &mut dx[row * din..(row + 1) * din],
                                true,
                            );
                        }
                    }
                }
                if wants(w) {
                    let (dw, xv) = (slot(grads, nodes, *w), val(x));
                    for bi in 0..batch {
                        for f in 0..groups {
                            let row = bi * groups + f;
                            let xr = &xv[row * din..(row + 1) * din];
                            let gr = &g[row * dout..(row + 1) * dout];
                            let block = &mut dw[f * din * dout..(f + 1) * din * dout];
                            for (p, &xp) in xr.iter().enumerate() {
                                for (dwv, &gv) in block[p * dout..(p + 1) * dout].iter_mut().zip(gr)
                                {
                                    *dwv += xp * gv;
                                }
                            }
                        }
                    }
                }
                if wants(b) {
                    let db = slot(grads, nodes, *b);
                    for chunk in g.chunks_exact(groups * dout) {
                        add_into(db, chunk);
                    }
                }
            }
            Op::Sum { x } => {
                if wants(x) {
                    let g0 = g[0];
                    slot(grads, nodes, *x).iter_mut().for_each(|d| *d += g0);
                }
            }
            Op::MeanAxis { x, axis } => {
                if wants(x) {
                    let (outer, n, inner) = split_axis(nodes[x.0].value.shape(), *axis);
                    let dx = slot(grads, nodes, *x);
                    for o in 0..outer {
                        for t in 0..n {
                            for j in 0..inner {
                                dx[(o * n + t) * inner + j] += g[o * inner + j] / n as f64;
                            }
                        }
                    }
                }
            }
            Op::Mse {
                pred,
                target,
                mask,
                count,
            } => {
                let g0 = g[0];
                let (p, t) = (val(pred), val(target));
                let coeff = |k: usize| 2.0 * mask[k] * (p[k] - t[k]) / count * g0;
                if wants(pred) {
                    for (k, d) in slot(grads, nodes, *pred).iter_mut().enumerate() {
                        *d += coeff(k);
                    }
                }
                if wants(target) {
                    for (k, d) in slot(grads, nodes, *target).iter_mut().enumerate() {
                        *d -= coeff(k);
                    }
                }
            }
            Op::Bce { prob, label } => {
                if wants(prob) {
                    let g0 = g[0];
                    let p = val(prob);
                    let n = p.len() as f64;
                    for (k, d) in slot(grads, nodes, *prob).iter_mut().enumerate() {
                        let pk = p[k];
                        // Clamped region has zero slope.
                        if pk > crate::ops::BCE_EPS && pk < 1.0 - crate::ops::BCE_EPS {
                            let y = label[k];
                            *d += -(y / pk - (1.0 - y) / (1.0 - pk)) / n * g0;
                        }
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `(outer, len, inner)` around `axis` of a row-major shape.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Copies `data` (of `shape`) into the layout of `shape` permuted by `axes`:
/// output axis `i` is input axis `axes[i]`.
pub(crate) fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let step: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = axes.len();
    let mut out = Vec::with_capacity(data.len());
    if rank == 0 {
        return data.to_vec();
    }
    let last = rank - 1;
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    loop {
        let s = step[last];
        for t in 0..out_shape[last] {
            out.push(data[base + t * s]);
        }
        // Odometer over all axes except the innermost.
        let mut ax = last;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            base += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= step[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}
