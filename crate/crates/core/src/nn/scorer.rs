use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::core::{CoreDims, CoreTrace, RecurrentCore, TokenBatch};
use super::real::sigmoid;
use super::{ModelDims, ParamStore, Real};
use crate::vocab::{Token, Vocabulary};

/// Which tokens the decoder has read when it emits scalar `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScorerInput {
    /// `y_{1:t}`: a state-action score `Q̂(s_t, y_t)`.
    Action,
    /// `BOS, y_{1:t-1}`: a state value `V(s_t)` that never sees `y_t`.
    State,
}

/// Encoder-decoder emitting one logistic scalar per response step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepScorer<F> {
    core: RecurrentCore<F>,
    input: ScorerInput,
}

pub type Discriminator<F> = StepScorer<F>;
pub type ValueNetwork<F> = StepScorer<F>;

/// Forward results kept for [`StepScorer::backward`].
pub struct ScorerPass<F> {
    trace: CoreTrace<F>,
    q: Vec<Array2<F>>,
    lens: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

impl<F: Real> StepScorer<F> {
    pub fn new<R: Rng>(dims: ModelDims, vocab: Vocabulary, input: ScorerInput, rng: &mut R) -> Self {
        let core = RecurrentCore::new(
            CoreDims {
                vocab,
                embed: dims.embed,
                hidden: dims.hidden,
                head_out: 1,
            },
            rng,
        );
        Self { core, input }
    }

    pub fn discriminator<R: Rng>(dims: ModelDims, vocab: Vocabulary, rng: &mut R) -> Self {
        Self::new(dims, vocab, ScorerInput::Action, rng)
    }

    pub fn value<R: Rng>(dims: ModelDims, vocab: Vocabulary, rng: &mut R) -> Self {
        Self::new(dims, vocab, ScorerInput::State, rng)
    }

    pub(crate) fn from_core(core: RecurrentCore<F>, input: ScorerInput) -> Self {
        Self { core, input }
    }

    pub fn core(&self) -> &RecurrentCore<F> {
        &self.core
    }

    pub fn input(&self) -> ScorerInput {
        self.input
    }

    pub fn params(&self) -> &ParamStore<F> {
        self.core.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        self.core.params_mut()
    }

    pub fn vocab(&self) -> Vocabulary {
        self.core.dims.vocab
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            embed: self.core.dims.embed,
            hidden: self.core.dims.hidden,
        }
    }

    fn decoder_batch(&self, seqs: &[&[Token]]) -> TokenBatch {
        let vocab = self.vocab();
        let rows = seqs
            .iter()
            .map(|s| {
                assert!(!s.is_empty(), "scored sequences must be non-empty");
                match self.input {
                    ScorerInput::Action => s.to_vec(),
                    ScorerInput::State => {
                        let mut row = Vec::with_capacity(s.len());
                        row.push(vocab.bos());
                        row.extend_from_slice(&s[..s.len() - 1]);
                        row
                    }
                }
            })
            .collect();
        TokenBatch::new(rows, vocab.pad())
    }

    pub fn forward(&self, inputs: &[&[Token]], seqs: &[&[Token]]) -> ScorerPass<F> {
        assert_eq!(inputs.len(), seqs.len());
        let batch = self.decoder_batch(seqs);
        let trace = self.core.forward_trace(inputs, &batch);
        let lens = batch.lens().to_vec();
        let q: Vec<Array2<F>> = trace
            .states
            .iter()
            .map(|h| self.core.head(h).mapv(sigmoid))
            .collect();
        let scores = lens
            .iter()
            .enumerate()
            .map(|(b, &len)| (0..len).map(|t| q[t][[b, 0]].as_f64()).collect())
            .collect();
        ScorerPass { trace, q, lens, scores }
    }

    /// One scalar in `(0, 1)` per step of each sequence.
    pub fn step_scores(&self, inputs: &[&[Token]], seqs: &[&[Token]]) -> Vec<Vec<f64>> {
        self.forward(inputs, seqs).scores
    }

    /// Parameter gradient given `dL/dscore` for every step.
    pub fn backward(&self, pass: &ScorerPass<F>, d_scores: &[Vec<f64>]) -> ParamStore<F> {
        let mut grads = self.core.params.zeros_like();
        let batch = pass.lens.len();
        let mut d_states = Vec::with_capacity(pass.q.len());
        for (t, (q, h)) in pass.q.iter().zip(&pass.trace.states).enumerate() {
            let mut d_logit = Array2::<F>::zeros((batch, 1));
            for b in 0..batch {
                if t < pass.lens[b] {
                    let qv = q[[b, 0]];
                    d_logit[[b, 0]] = F::of(d_scores[b][t]) * qv * (F::one() - qv);
                }
            }
            d_states.push(self.core.head_backward(h, &d_logit, &mut grads));
        }
        self.core.backward(&pass.trace, d_states, &mut grads);
        grads
    }
}
