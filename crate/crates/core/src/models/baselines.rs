use attnfid_tensor::{Bound, ParamId, ParamStore, Tape, Tensor, Var, LEAKY_SLOPE};

use crate::error::Result;
use crate::models::{Batch, Classifier, Init, ModelConfig, ModelKind};

/// `sigmoid(w · x + b)` over the flat 364-token vector.
#[derive(Clone, Debug)]
pub struct LogisticModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    w: ParamId,
    b: ParamId,
}

impl LogisticModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = config.layout.tokens();
        let mut store = ParamStore::new();
        let mut init = Init::new(config.seed);
        let w = store.add("logit.w", init.normal(&[n, 1], 0.01));
        let b = store.add("logit.b", Tensor::zeros(vec![1]));
        Ok(LogisticModel {
            config,
            store,
            w,
            b,
        })
    }

    pub fn weights(&self) -> &[f64] {
        self.store.get(self.w).value.data()
    }

    pub fn set_weights(&mut self, w: &[f64], b: f64) {
        self.store
            .get_mut(self.w)
            .value
            .data_mut()
            .copy_from_slice(w);
        self.store.get_mut(self.b).value.data_mut()[0] = b;
    }

    /// Probability for one token vector.
    pub fn logistic_forward(&self, tokens: &[f64]) -> Result<f64> {
        Ok(self.predict(&[tokens.to_vec()])?[0])
    }
}

impl Classifier for LogisticModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Logistic
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, batch: &Batch) -> Result<Var> {
        let b = batch.len();
        let l = self.config.layout;
        let vitals = tape.constant(batch.vitals.reshaped(vec![b, l.vital_tokens()])?);
        let agg = tape.constant(batch.aggregated.clone());
        let x = tape.concat(&[vitals, agg], 1)?;
        let z = tape.linear(x, bound[self.w], bound[self.b])?;
        let p = tape.sigmoid(z);
        Ok(tape.reshape(p, &[b])?)
    }

    /// `l2 · Σ w²`
    fn penalty(&self, tape: &mut Tape, bound: &Bound) -> Result<Option<Var>> {
        if self.config.l2 == 0.0 {
            return Ok(None);
        }
        let w = bound[self.w];
        let sq = tape.mul(w, w)?;
        let s = tape.sum(sq);
        Ok(Some(tape.scale(s, self.config.l2)))
    }
}

/// Recurrent branch over the hourly 7-vectors plus a perceptron over the
/// aggregated features, joined by a sigmoid head.
#[derive(Clone, Debug)]
pub struct LstmFusionModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    wx: ParamId,
    wh: ParamId,
    bias: ParamId,
    s1_w: ParamId,
    s1_b: ParamId,
    s2_w: ParamId,
    s2_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

impl LstmFusionModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (c, f, h) = (
            config.layout.channels,
            config.layout.features,
            config.lstm_hidden,
        );
        let mut store = ParamStore::new();
        let mut init = Init::new(config.seed);
        let wx = store.add("lstm.wx", init.weight(&[c, 4 * h], c, h));
        let wh = store.add("lstm.wh", init.weight(&[h, 4 * h], h, h));
        // gate order: input, forget, output, candidate; forget starts open
        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.add("lstm.b", Tensor::new(vec![4 * h], b)?);
        let s1_w = store.add("static.w1", init.weight(&[f, h], f, h));
        let s1_b = store.add("static.b1", Tensor::zeros(vec![h]));
        let s2_w = store.add("static.w2", init.weight(&[h, h], h, h));
        let s2_b = store.add("static.b2", Tensor::zeros(vec![h]));
        let head_w = store.add("head.w", init.weight(&[2 * h, 1], 2 * h, 1));
        let head_b = store.add("head.b", Tensor::zeros(vec![1]));
        Ok(LstmFusionModel {
            config,
            store,
            wx,
            wh,
            bias,
            s1_w,
            s1_b,
            s2_w,
            s2_b,
            head_w,
            head_b,
        })
    }

    /// Sets every parameter to zero.
    pub fn zero_parameters(&mut self) {
        for p in self.store.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Probability for one token vector.
    pub fn lstm_fusion_forward(&self, tokens: &[f64]) -> Result<f64> {
        Ok(self.predict(&[tokens.to_vec()])?[0])
    }

    /// Hidden state after every hour for one token vector.
    pub fn hidden_states(&self, tokens: &[f64]) -> Result<Vec<Vec<f64>>> {
        let batch = Batch::from_tokens(&self.config.layout, &[tokens])?;
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let states = self.run_cell(&mut tape, &bound, &batch)?;
        Ok(states
            .iter()
            .map(|&v| tape.value(v).data().to_vec())
            .collect())
    }

    /// Hidden state after every hour, `hours × [B×h]`.
    pub(crate) fn run_cell(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
    ) -> Result<Vec<Var>> {
        let (b, h) = (batch.len(), self.config.lstm_hidden);
        let l = self.config.layout;
        let vitals = tape.constant(batch.vitals.clone());
        let steps = tape.permute(vitals, &[0, 2, 1])?;
        let mut hidden = tape.constant(Tensor::zeros(vec![b, h]));
        let mut cell = tape.constant(Tensor::zeros(vec![b, h]));
        let mut states = Vec::with_capacity(l.hours);
        for t in 0..l.hours {
            let x = tape.slice(steps, 1, t, 1)?;
            let x = tape.reshape(x, &[b, l.channels])?;
            let zx = tape.matmul(x, bound[self.wx])?;
            let zh = tape.matmul(hidden, bound[self.wh])?;
            let z = tape.add(zx, zh)?;
            let z = tape.add_bias(z, bound[self.bias])?;
            let gate = |tape: &mut Tape, k: usize| tape.slice(z, 1, k * h, h);
            let i = gate(tape, 0)?;
            let i = tape.sigmoid(i);
            let f = gate(tape, 1)?;
            let f = tape.sigmoid(f);
            let o = gate(tape, 2)?;
            let o = tape.sigmoid(o);
            let g = gate(tape, 3)?;
            let g = tape.tanh(g);
            let keep = tape.mul(f, cell)?;
            let write = tape.mul(i, g)?;
            cell = tape.add(keep, write)?;
            let squashed = tape.tanh(cell);
            hidden = tape.mul(o, squashed)?;
            states.push(hidden);
        }
        Ok(states)
    }
}

impl Classifier for LstmFusionModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Lstm
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, batch: &Batch) -> Result<Var> {
        let b = batch.len();
        let last = *self
            .run_cell(tape, bound, batch)?
            .last()
            .expect("at least one hour");
        let agg = tape.constant(batch.aggregated.clone());
        let s = tape.linear(agg, bound[self.s1_w], bound[self.s1_b])?;
        let s = tape.leaky_relu(s, LEAKY_SLOPE);
        let s = tape.linear(s, bound[self.s2_w], bound[self.s2_b])?;
        let joined = tape.concat(&[last, s], 1)?;
        let z = tape.linear(joined, bound[self.head_w], bound[self.head_b])?;
        let p = tape.sigmoid(z);
        Ok(tape.reshape(p, &[b])?)
    }
}
