use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::{Tape, Tensor, Var};
use crate::policy::Policy;
use crate::scalar::Scalar;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 256,
        }
    }
}

/// Input to one recurrent step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepInput {
    Start,
    Token(usize),
}

/// Hidden and cell vectors of the recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T> {
    pub hidden: Vec<T>,
    pub cell: Vec<T>,
}

impl<T: Scalar> RecurrentState<T> {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            hidden: vec![T::zero(); hidden_dim],
            cell: vec![T::zero(); hidden_dim],
        }
    }
}

pub const EMBEDDING: &str = "embedding";
pub const GATE_WEIGHT: &str = "gates.weight";
pub const GATE_BIAS: &str = "gates.bias";
pub const OUTPUT_WEIGHT: &str = "output.weight";
pub const OUTPUT_BIAS: &str = "output.bias";

/// Recurrent flow model: token embedding, one LSTM cell, linear head, and the
/// learned log-partition scalar.
///
/// Gate rows are stacked as `[input, forget, candidate, output]`, each
/// `hidden_dim` rows of `gates.weight` (shape `4H x (E + H)`), applied to the
/// concatenation `[embedding(token); hidden]`. The embedding table has one
/// extra trailing row for the start sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel<T> {
    vocab_size: usize,
    config: ModelConfig,
    params: Vec<(String, Tensor<T>)>,
    log_z: Tensor<T>,
}

/// Tape handles for every parameter of a [`FlowModel`].
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    pub embedding: Var,
    pub gate_weight: Var,
    pub gate_bias: Var,
    pub output_weight: Var,
    pub output_bias: Var,
    pub log_z: Var,
}

impl BoundParams {
    /// Handles in the same order as [`FlowModel::params`].
    pub fn network(&self) -> [Var; 5] {
        [
            self.embedding,
            self.gate_weight,
            self.gate_bias,
            self.output_weight,
            self.output_bias,
        ]
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> FlowModel<T> {
    fn shapes(vocab_size: usize, c: &ModelConfig) -> [(&'static str, Vec<usize>); 5] {
        let (e, h) = (c.embed_dim, c.hidden_dim);
        [
            (EMBEDDING, vec![vocab_size + 1, e]),
            (GATE_WEIGHT, vec![4 * h, e + h]),
            (GATE_BIAS, vec![4 * h]),
            (OUTPUT_WEIGHT, vec![vocab_size, h]),
            (OUTPUT_BIAS, vec![vocab_size]),
        ]
    }

    fn check_config(vocab_size: usize, config: &ModelConfig) -> Result<(), ModelError> {
        if vocab_size == 0 || config.embed_dim == 0 || config.hidden_dim == 0 {
            return Err(ModelError::Config(format!(
                "vocab_size, embed_dim and hidden_dim must be positive (got {vocab_size}, {}, {})",
                config.embed_dim, config.hidden_dim
            )));
        }
        Ok(())
    }

    /// All parameters and logZ set to zero: the policy is uniform over valid actions.
    pub fn zeros(vocab_size: usize, config: ModelConfig) -> Result<Self, ModelError> {
        Self::check_config(vocab_size, &config)?;
        let params = Self::shapes(vocab_size, &config)
            .into_iter()
            .map(|(n, s)| (n.to_string(), Tensor::zeros(s)))
            .collect();
        Ok(Self {
            vocab_size,
            config,
            params,
            log_z: Tensor::scalar(T::zero()),
        })
    }

    /// Uniform `[-1/sqrt(H), 1/sqrt(H)]` weights, forget-gate bias 1, logZ 0.
    pub fn init<R: Rng + ?Sized>(
        vocab_size: usize,
        config: ModelConfig,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let bound = 1.0 / (config.hidden_dim as f64).sqrt();
        Self::init_uniform(vocab_size, config, bound, rng)
    }

    /// Every network parameter uniform in `[-bound, bound]`, forget-gate bias 1.
    pub fn init_uniform<R: Rng + ?Sized>(
        vocab_size: usize,
        config: ModelConfig,
        bound: f64,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let mut model = Self::zeros(vocab_size, config)?;
        for (_, t) in model.params.iter_mut() {
            for v in t.values_mut() {
                *v = T::of(rng.gen_range(-bound..=bound));
            }
        }
        let h = config.hidden_dim;
        let bias = model.param_mut(GATE_BIAS).expect("gate bias exists");
        for v in &mut bias.values_mut()[h..2 * h] {
            *v = T::one();
        }
        Ok(model)
    }

    /// Builds a model from named arrays (checkpoint loading).
    pub fn from_parts(
        vocab_size: usize,
        config: ModelConfig,
        named: Vec<(String, Vec<T>)>,
        log_z: T,
    ) -> Result<Self, ModelError> {
        let mut model = Self::zeros(vocab_size, config)?;
        if named.len() != model.params.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter arrays, found {}",
                model.params.len(),
                named.len()
            )));
        }
        for ((name, values), (want, slot)) in named.into_iter().zip(model.params.iter_mut()) {
            if &name != want {
                return Err(ModelError::Config(format!(
                    "parameter '{name}' found where '{want}' was expected"
                )));
            }
            *slot = Tensor::new(slot.shape().to_vec(), values)
                .map_err(|e| ModelError::Config(format!("parameter '{name}': {e}")))?;
        }
        model.log_z = Tensor::scalar(log_z);
        if !model.all_finite() {
            return Err(ModelError::Config("non-finite parameter value".into()));
        }
        Ok(model)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    /// Network parameters in canonical order (logZ excluded).
    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor<T>)] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn log_z_value(&self) -> T {
        self.log_z.values()[0]
    }

    pub fn log_z_tensor(&self) -> &Tensor<T> {
        &self.log_z
    }

    pub fn log_z_tensor_mut(&mut self) -> &mut Tensor<T> {
        &mut self.log_z
    }

    pub fn set_log_z(&mut self, v: T) {
        self.log_z.values_mut()[0] = v;
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum::<usize>() + 1
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|(_, t)| t.all_finite()) && self.log_z.all_finite()
    }

    fn input_row(&self, input: StepInput) -> Result<usize, ModelError> {
        match input {
            StepInput::Start => Ok(self.vocab_size),
            StepInput::Token(t) if t < self.vocab_size => Ok(t),
            StepInput::Token(t) => Err(ModelError::Dimension(format!(
                "token {t} outside vocabulary of size {}",
                self.vocab_size
            ))),
        }
    }

    /// One recurrent step without gradient tracking.
    pub fn forward_step(
        &self,
        input: StepInput,
        state: &RecurrentState<T>,
    ) -> Result<(Vec<T>, RecurrentState<T>), ModelError> {
        let (e, h) = (self.config.embed_dim, self.config.hidden_dim);
        if state.hidden.len() != h || state.cell.len() != h {
            return Err(ModelError::Dimension(format!(
                "recurrent state has sizes ({}, {}), model hidden_dim is {h}",
                state.hidden.len(),
                state.cell.len()
            )));
        }
        let row = self.input_row(input)?;
        let emb = &self.params[0].1.values()[row * e..(row + 1) * e];
        let w = self.params[1].1.values();
        let b = self.params[2].1.values();
        let cols = e + h;
        let z: Vec<T> = (0..4 * h)
            .map(|r| {
                let wr = &w[r * cols..(r + 1) * cols];
                let acc = wr[..e].iter().zip(emb).fold(b[r], |a, (&x, &y)| a + x * y);
                wr[e..].iter().zip(&state.hidden).fold(acc, |a, (&x, &y)| a + x * y)
            })
            .collect();
        let mut next = RecurrentState::zeros(h);
        for j in 0..h {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[h + j]);
            let g_g = z[2 * h + j].tanh();
            let o_g = sigmoid(z[3 * h + j]);
            let c = f_g * state.cell[j] + i_g * g_g;
            next.cell[j] = c;
            next.hidden[j] = o_g * c.tanh();
        }
        let wo = self.params[3].1.values();
        let bo = self.params[4].1.values();
        let logits = (0..self.vocab_size)
            .map(|r| {
                wo[r * h..(r + 1) * h]
                    .iter()
                    .zip(&next.hidden)
                    .fold(bo[r], |a, (&x, &y)| a + x * y)
            })
            .collect();
        Ok((logits, next))
    }

    /// Places every parameter (and logZ) on the tape as a tracked leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            embedding: tape.param(&self.params[0].1),
            gate_weight: tape.param(&self.params[1].1),
            gate_bias: tape.param(&self.params[2].1),
            output_weight: tape.param(&self.params[3].1),
            output_bias: tape.param(&self.params[4].1),
            log_z: tape.param(&self.log_z),
        }
    }

    /// Zero recurrent state as tape constants.
    pub fn initial_state_on(&self, tape: &mut Tape<T>) -> (Var, Var) {
        let h = self.config.hidden_dim;
        (
            tape.constant(Tensor::zeros(vec![h])),
            tape.constant(Tensor::zeros(vec![h])),
        )
    }

    /// One recurrent step recorded on `tape`; returns `(logits, hidden, cell)`.
    pub fn forward_step_on(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        input: StepInput,
        (hidden, cell): (Var, Var),
    ) -> Result<(Var, Var, Var), ModelError> {
        let h = self.config.hidden_dim;
        let row = self.input_row(input)?;
        let x = tape.row(p.embedding, row)?;
        let xh = tape.concat(x, hidden)?;
        let z = tape.matvec(p.gate_weight, xh)?;
        let z = tape.add(z, p.gate_bias)?;
        let zi = tape.slice(z, 0, h)?;
        let zf = tape.slice(z, h, h)?;
        let zg = tape.slice(z, 2 * h, h)?;
        let zo = tape.slice(z, 3 * h, h)?;
        let i_g = tape.sigmoid(zi);
        let f_g = tape.sigmoid(zf);
        let g_g = tape.tanh(zg);
        let o_g = tape.sigmoid(zo);
        let keep = tape.mul(f_g, cell)?;
        let write = tape.mul(i_g, g_g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let hn = tape.mul(o_g, tc)?;
        let logits = tape.matvec(p.output_weight, hn)?;
        let logits = tape.add(logits, p.output_bias)?;
        Ok((logits, hn, c))
    }

    /// Copies tape gradients into the parameters' accumulators.
    pub fn collect_grads(&mut self, tape: &Tape<T>, p: &BoundParams) {
        for ((_, t), v) in self.params.iter_mut().zip(p.network()) {
            match tape.grad(v) {
                Some(g) => t.accumulate_grad(g),
                None => t.track(),
            }
        }
        match tape.grad(p.log_z) {
            Some(g) => self.log_z.accumulate_grad(g),
            None => self.log_z.track(),
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|(_, t)| t.zero_grad());
        self.log_z.zero_grad();
    }
}

/// Sampling state of a [`FlowModel`]: recurrent vectors plus the logits for
/// the next action.
#[derive(Debug, Clone)]
pub struct FlowState<T> {
    recurrent: RecurrentState<T>,
    logits: Vec<T>,
}

impl<T: Scalar> Policy<T> for FlowModel<T> {
    type State = FlowState<T>;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn initial(&self) -> Result<Self::State, ModelError> {
        let start = RecurrentState::zeros(self.config.hidden_dim);
        let (logits, recurrent) = self.forward_step(StepInput::Start, &start)?;
        Ok(FlowState { recurrent, logits })
    }

    fn logits<'a>(&'a self, state: &'a Self::State) -> &'a [T] {
        &state.logits
    }

    fn advance(&self, state: &Self::State, token: usize) -> Result<Self::State, ModelError> {
        let (logits, recurrent) = self.forward_step(StepInput::Token(token), &state.recurrent)?;
        Ok(FlowState { recurrent, logits })
    }

    fn log_z(&self) -> T {
        self.log_z_value()
    }
}
