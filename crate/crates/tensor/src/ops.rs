//! Forward operations. Each records one node on the tape.

use crate::error::{Result, TensorError};
use crate::gemm::gemm;
use crate::tape::{permute_data, split_axis, Op, Tape, Var};
use crate::tensor::Tensor;

/// Probability clamp used by [`Tape::bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

/// Default negative slope for [`Tape::leaky_relu`].
pub const LEAKY_SLOPE: f64 = 0.01;

const LAYER_NORM_EPS: f64 = 1e-5;

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.requires_grad(x);
        self.push(value, op, rg)
    }

    /// Rank-2 matrix product `[m×k] × [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape(
                "matmul",
                format!("cannot multiply {sa:?} by {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, rg))
    }

    /// Grouped product: `[G×m×k] × [G×k×n] -> [G×m×n]`, or with `trans_b`
    /// the right operand is `[G×n×k]` and used transposed.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || {
            TensorError::shape(
                "batch_matmul",
                format!("cannot multiply {sa:?} by {sb:?} (trans_b={trans_b})"),
            )
        };
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (groups, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b {
            (sb[2], sb[1])
        } else {
            (sb[1], sb[2])
        };
        if kb != k {
            return Err(bad());
        }
        let mut out = vec![0.0; groups * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for g in 0..groups {
                gemm(
                    m,
                    k,
                    n,
                    &av[g * m * k..(g + 1) * m * k],
                    false,
                    &bv[g * k * n..(g + 1) * k * n],
                    trans_b,
                    &mut out[g * m * n..(g + 1) * m * n],
                    false,
                );
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::new(vec![groups, m, n], out)?,
            Op::BatchMatMul {
                a,
                b,
                trans_b,
                groups,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds `bias` broadcast over the leading axes of `x`. The bias shape
    /// must equal the trailing axes of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != *sb {
            return Err(TensorError::shape(
                "add_bias",
                format!("bias {sb:?} does not match trailing axes of {sx:?}"),
            ));
        }
        let bv = self.value(bias).data();
        let n = bv.len();
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_exact_mut(n) {
            for (d, &b) in chunk.iter_mut().zip(bv) {
                *d += b;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::AddBias { x, bias }, rg))
    }

    /// `x · W + b` for `x: [N×in]`, `W: [in×out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, Op::Scale { x, factor }, |v| v * factor)
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(TensorError::shape(
                "permute",
                format!("{axes:?} is not a permutation of the axes of {shape:?}"),
            ));
        }
        let data = permute_data(self.value(x).data(), &shape, axes);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let rg = self.requires_grad(x);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape.to_vec()).map_err(|_| {
            TensorError::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x)))
        })?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// Softmax along `axis`, stabilised by subtracting the slice maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::shape(
                "softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |t: usize| (o * n + t) * inner + j;
                let max = (0..n).map(|t| xv[at(t)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for t in 0..n {
                    let e = (xv[at(t)] - max).exp();
                    out[at(t)] = e;
                    total += e;
                }
                for t in 0..n {
                    out[at(t)] /= total;
                }
            }
        }
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// `x` where `x >= 0`, else `alpha * x`. The slope at exactly zero is 1.
    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        self.unary(x, Op::LeakyRelu { x, alpha }, |v| {
            if v >= 0.0 {
                v
            } else {
                alpha * v
            }
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid { x }, sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh { x }, f64::tanh)
    }

    /// Normalises over the last axis, then applies `gamma` and `beta`
    /// (both shaped like the last axis).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap();
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(TensorError::shape(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} must be [{n}]",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let xv = self.value(x).data();
        let rows = xv.len() / n;
        let mut normalized = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = rs;
            for t in 0..n {
                let h = (row[t] - mean) * rs;
                normalized[r * n + t] = h;
                out[r * n + t] = gv[t] * h + bv[t];
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Row lookup: `table: [n×d]` -> `[indices.len()×d]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(TensorError::shape(
                "gather_rows",
                format!("table must be rank 2, got {shape:?}"),
            ));
        }
        let (rows, d) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::shape(
                "gather_rows",
                format!("row {bad} out of range for table {shape:?}"),
            ));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.requires_grad(table);
        Ok(self.push(
            Tensor::new(vec![indices.len(), d], out)?,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Joins tensors along `axis`; all other axes must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(
                *inputs
                    .first()
                    .ok_or_else(|| TensorError::shape("concat", "no inputs"))?,
            )
            .to_vec();
        if axis >= first.len() {
            return Err(TensorError::shape(
                "concat",
                format!("axis {axis} out of range for {first:?}"),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::shape(
                    "concat",
                    format!("{s:?} vs {first:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let data = self.value(v).data();
                out.extend_from_slice(&data[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::shape(
                "slice",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&xv[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.requires_grad(x);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::Slice { x, axis, start },
            rg,
        ))
    }

    /// Independent affine map per group: `x: [B×F×in]`, `w: [F×in×out]`,
    /// `b: [F×out]` -> `[B×F×out]`.
    pub fn grouped_linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        if sx.len() != 3
            || sw.len() != 3
            || sx[1] != sw[0]
            || sx[2] != sw[1]
            || sb != [sw[0], sw[2]]
        {
            return Err(TensorError::shape(
                "grouped_linear",
                format!("x {sx:?}, w {sw:?}, b {sb:?}"),
            ));
        }
        let (batch, groups, din, dout) = (sx[0], sx[1], sx[2], sw[2]);
        let (xv, wv, bv) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![0.0; batch * groups * dout];
        for bi in 0..batch {
            for f in 0..groups {
                let row = bi * groups + f;
                let o = &mut out[row * dout..(row + 1) * dout];
                o.copy_from_slice(&bv[f * dout..(f + 1) * dout]);
                gemm(
                    1,
                    din,
                    dout,
                    &xv[row * din..(row + 1) * din],
                    false,
                    &wv[f * din * dout..(f + 1) * din * dout],
                    false,
                    o,
                    true,
                );
            }
        }
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(
            Tensor::new(vec![batch, groups, dout], out)?,
            Op::GroupedLinear { x, w, b },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape.len() < 2 {
            return Err(TensorError::shape(
                "mean_axis",
                format!("axis {axis} of {shape:?}"),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for t in 0..n {
                for j in 0..inner {
                    out[o * inner + j] += xv[(o * n + t) * inner + j];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.requires_grad(x);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MeanAxis { x, axis }, rg))
    }

    /// Mean squared error over the positions where `mask == 1`.
    pub fn mse_loss(&mut self, pred: Var, target: Var, mask: &Tensor) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        if mask.shape() != self.shape(pred) {
            return Err(TensorError::shape(
                "mse_loss",
                format!(
                    "mask {:?} vs prediction {:?}",
                    mask.shape(),
                    self.shape(pred)
                ),
            ));
        }
        let count: f64 = mask.data().iter().sum();
        if count == 0.0 {
            return Err(TensorError::DegenerateLoss(
                "mask selects no positions".into(),
            ));
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let total: f64 = p
            .iter()
            .zip(t)
            .zip(mask.data())
            .map(|((a, b), m)| m * (a - b) * (a - b))
            .sum();
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(
            Tensor::scalar(total / count),
            Op::Mse {
                pred,
                target,
                mask: mask.data().to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy with probabilities clamped to
    /// `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce_loss(&mut self, prob: Var, label: &Tensor) -> Result<Var> {
        if label.len() != self.value(prob).len() {
            return Err(TensorError::shape(
                "bce_loss",
                format!(
                    "labels {:?} vs probabilities {:?}",
                    label.shape(),
                    self.shape(prob)
                ),
            ));
        }
        let p = self.value(prob).data();
        let n = p.len() as f64;
        let total: f64 = p
            .iter()
            .zip(label.data())
            .map(|(&pk, &y)| {
                let pc = pk.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
            })
            .sum();
        let rg = self.requires_grad(prob);
        Ok(self.push(
            Tensor::scalar(total / n),
            Op::Bce {
                prob,
                label: label.data().to_vec(),
            },
            rg,
        ))
    }
}

/// Logistic function, split by sign so neither branch overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let m = tape.constant(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let p = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1., 2., 3., 4.]);

        let a = tape.constant(Tensor::row(&[1., 2.]));
        let b = tape.constant(Tensor::new(vec![2, 1], vec![3., 4.]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_gradient_hand_case() {
        // d sum(A B) / dA = 1 · Bᵀ, i.e. each row holds B's row sums.
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::identity(2), true);
        let b = tape.constant(Tensor::new(vec![2, 2], vec![2., 3., 5., 7.]).unwrap());
        let p = tape.matmul(a, b).unwrap();
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[5., 12., 5., 12.]);
    }

    #[test]
    fn softmax_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(&[0., 0., 0.]));
        let y = tape.softmax(x, 1).unwrap();
        assert!(close(tape.value(y).data(), &[1. / 3.; 3], 1e-15));

        let x = tape.constant(Tensor::row(&[0., 2f64.ln()]));
        let y = tape.softmax(x, 1).unwrap();
        assert!(close(tape.value(y).data(), &[1. / 3., 2. / 3.], 1e-15));

        let x = tape.constant(Tensor::row(&[1000., 1000.]));
        let y = tape.softmax(x, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        assert!(tape.softmax(x, 2).is_err());
    }

    #[test]
    fn leaky_relu_values_and_slope() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![2.0, -1.0, -3.0]).unwrap(), true);
        let y = tape.leaky_relu(x, LEAKY_SLOPE);
        assert_eq!(&tape.value(y).data()[..2], &[2.0, -0.01]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data()[2], 0.01);

        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::scalar(0.0), true);
        let y = tape.leaky_relu(z, LEAKY_SLOPE);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(z).unwrap().item(), 1.0);
    }

    #[test]
    fn sigmoid_cases() {
        assert_eq!(sigmoid(0.0), 0.5);
        let low = sigmoid(-1e4);
        assert!(low >= 0.0 && low.is_finite());
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0), true);
        let y = tape.sigmoid(x);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 0.25);
    }

    #[test]
    fn mse_cases() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::row(&[1., 0.]));
        let t = tape.constant(Tensor::row(&[0., 0.]));
        let same = tape.mse_loss(p, p, &Tensor::ones(vec![1, 2])).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);
        let full = tape.mse_loss(p, t, &Tensor::ones(vec![1, 2])).unwrap();
        assert_eq!(tape.value(full).item(), 0.5);
        let half = tape.mse_loss(p, t, &Tensor::row(&[1., 0.])).unwrap();
        assert_eq!(tape.value(half).item(), 1.0);
        let err = tape.mse_loss(p, t, &Tensor::zeros(vec![1, 2])).unwrap_err();
        assert!(matches!(err, TensorError::DegenerateLoss(_)));
    }

    #[test]
    fn bce_cases() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::scalar(0.5));
        let l = tape.bce_loss(p, &Tensor::scalar(1.0)).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-12);

        let p = tape.constant(Tensor::row(&[1.0, 0.0]));
        let l = tape.bce_loss(p, &Tensor::row(&[1.0, 0.0])).unwrap();
        assert!(tape.value(l).item() <= 1e-6);

        let p = tape.constant(Tensor::row(&[0.9, 0.1]));
        let l = tape.bce_loss(p, &Tensor::row(&[1.0, 0.0])).unwrap();
        assert!((tape.value(l).item() + 0.9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn backward_basic_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![0.3; 6]).unwrap(), true);
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 6]);

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn fan_out_accumulates() {
        // y = 2x + x*x at x = 1.5: dy/dx = 2 + 2x = 5
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5), true);
        let a = tape.scale(x, 2.0);
        let b = tape.mul(x, x).unwrap();
        let y = tape.add(a, b).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 5.0);
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let b = tape.constant(Tensor::new(vec![2, 1], vec![5., 6.]).unwrap());
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1., 2., 5., 3., 4., 6.]);
        let s = tape.slice(c, 1, 2, 1).unwrap();
        assert_eq!(tape.value(s).data(), &[5., 6.]);
    }
}
