use attnfid_tensor::{Bound, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

use crate::error::Result;
use crate::models::Init;

/// `softmax(Q Kᵀ / √d) V` for single matrices: `queries [q×d]`,
/// `keys [k×d]`, `values [k×dv]`. Returns the output `[q×dv]` and the
/// weights `[q×k]`.
pub fn scaled_dot_attention(
    queries: &Tensor,
    keys: &Tensor,
    values: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (sq, sk, sv) = (queries.shape(), keys.shape(), values.shape());
    if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 || sq[1] != sk[1] || sk[0] != sv[0] {
        return Err(TensorError::shape(
            "scaled_dot_attention",
            format!("queries {sq:?}, keys {sk:?}, values {sv:?}"),
        )
        .into());
    }
    let mut tape = Tape::new();
    let lift = |tape: &mut Tape, t: &Tensor| -> Result<Var> {
        let mut shape = vec![1];
        shape.extend_from_slice(t.shape());
        Ok(tape.constant(t.reshaped(shape)?))
    };
    let q = lift(&mut tape, queries)?;
    let k = lift(&mut tape, keys)?;
    let v = lift(&mut tape, values)?;
    let (out, weights) = attend(&mut tape, q, k, v)?;
    Ok((
        tape.value(out).reshaped(vec![sq[0], sv[1]])?,
        tape.value(weights).reshaped(vec![sq[0], sk[0]])?,
    ))
}

/// Grouped attention on the tape: `q [G×nq×dk]`, `k [G×nk×dk]`,
/// `v [G×nk×dv]` -> (`[G×nq×dv]`, weights `[G×nq×nk]`). Logits are divided
/// by `√dk`.
pub(crate) fn attend(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let dk = *tape.shape(q).last().expect("rank 3");
    let logits = tape.batch_matmul(q, k, true)?;
    let logits = tape.scale(logits, 1.0 / (dk as f64).sqrt());
    let weights = tape.softmax(logits, 2)?;
    let out = tape.batch_matmul(weights, v, false)?;
    Ok((out, weights))
}

/// Multi-head attention with separate query/key/value/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub d: usize,
    pub heads: usize,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

impl MultiHeadAttention {
    pub(crate) fn new(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        d: usize,
        heads: usize,
    ) -> Self {
        let mut w = |store: &mut ParamStore, name: &str| {
            store.add(format!("{prefix}.{name}"), init.weight(&[d, d], d, d))
        };
        let wq = w(store, "wq");
        let wk = w(store, "wk");
        let wv = w(store, "wv");
        let wo = w(store, "wo");
        let b = |store: &mut ParamStore, name: &str| {
            store.add(format!("{prefix}.{name}"), Tensor::zeros(vec![d]))
        };
        MultiHeadAttention {
            d,
            heads,
            bq: b(store, "bq"),
            bk: b(store, "bk"),
            bv: b(store, "bv"),
            bo: b(store, "bo"),
            wq,
            wk,
            wv,
            wo,
        }
    }

    /// Names of the key projection, for constructions that pin it.
    pub fn key_params(&self) -> (ParamId, ParamId) {
        (self.wk, self.bk)
    }

    /// `[G×n×d]` projected and split into `[G·H×n×d/H]`.
    fn heads_of(&self, tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (g, n) = (s[0], s[1]);
        let dh = self.d / self.heads;
        let flat = tape.reshape(x, &[g * n, self.d])?;
        let proj = tape.linear(flat, w, b)?;
        let split = tape.reshape(proj, &[g, n, self.heads, dh])?;
        let split = tape.permute(split, &[0, 2, 1, 3])?;
        Ok(tape.reshape(split, &[g * self.heads, n, dh])?)
    }

    /// Queries from `q_in [G×nq×d]` attend over `kv_in [G×nk×d]`.
    /// Returns the projected output `[G×nq×d]` and weights `[G·H×nq×nk]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        q_in: Var,
        kv_in: Var,
    ) -> Result<(Var, Var)> {
        let s = tape.shape(q_in).to_vec();
        let (g, nq) = (s[0], s[1]);
        let q = self.heads_of(tape, q_in, bound[self.wq], bound[self.bq])?;
        let k = self.heads_of(tape, kv_in, bound[self.wk], bound[self.bk])?;
        let v = self.heads_of(tape, kv_in, bound[self.wv], bound[self.bv])?;
        let (ctx, weights) = attend(tape, q, k, v)?;
        let dh = self.d / self.heads;
        let ctx = tape.reshape(ctx, &[g, self.heads, nq, dh])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[g * nq, self.d])?;
        let out = tape.linear(ctx, bound[self.wo], bound[self.bo])?;
        let out = tape.reshape(out, &[g, nq, self.d])?;
        Ok((out, weights))
    }
}
