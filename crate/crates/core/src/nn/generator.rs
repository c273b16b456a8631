use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::core::{CoreDims, RecurrentCore, TokenBatch};
use super::{ModelDims, ParamStore, Real};
use crate::vocab::{Token, TokenSequence, Vocabulary};

pub const DEFAULT_MAX_LEN: usize = 4;

/// A decoded response. `tokens` never contains control tokens; `terminated`
/// records whether decoding stopped on EOS rather than hitting `max_len`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Response {
    pub tokens: TokenSequence,
    pub terminated: bool,
}

impl Response {
    pub fn terminated(tokens: TokenSequence) -> Self {
        Self {
            tokens,
            terminated: true,
        }
    }

    /// The emitted token stream, EOS included when decoding stopped on it.
    pub fn trajectory(&self, vocab: &Vocabulary) -> TokenSequence {
        let mut t = self.tokens.clone();
        if self.terminated {
            t.push(vocab.eos());
        }
        t
    }

    /// Number of generation steps `M`.
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.terminated)
    }
}

/// `P_G(y | x)`: a GRU encoder-decoder with a softmax over symbols and EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<F> {
    core: RecurrentCore<F>,
}

/// How the next token is picked while decoding.
enum Choice<'a, R> {
    Sample(&'a mut R),
    Argmax,
}

impl<F: Real> Generator<F> {
    pub fn new<R: Rng>(dims: ModelDims, vocab: Vocabulary, rng: &mut R) -> Self {
        let core = RecurrentCore::new(
            CoreDims {
                vocab,
                embed: dims.embed,
                hidden: dims.hidden,
                head_out: vocab.output_size(),
            },
            rng,
        );
        Self { core }
    }

    pub(crate) fn from_core(core: RecurrentCore<F>) -> Self {
        Self { core }
    }

    pub fn core(&self) -> &RecurrentCore<F> {
        &self.core
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

    /// Decoder states ready to emit the first token.
    pub fn start_states(&self, inputs: &[&[Token]]) -> Array2<F> {
        let h = self.core.encode(inputs);
        let bos = vec![self.vocab().bos(); inputs.len()];
        self.core.advance(&h, &bos)
    }

    /// Feeds one emitted token per row.
    pub fn advance(&self, h: &Array2<F>, tokens: &[Token]) -> Array2<F> {
        self.core.advance(h, tokens)
    }

    /// Log-softmax over the output tokens, computed in `f64`.
    pub fn next_log_probs(&self, h: &Array2<F>) -> Array2<f64> {
        let mut logits = self.core.head(h).mapv(Real::as_f64);
        for mut row in logits.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        logits
    }

    pub fn sample<R: Rng>(&self, inputs: &[&[Token]], rng: &mut R, max_len: usize) -> Vec<Response> {
        let h = self.start_states(inputs);
        self.decode_from(h, vec![Vec::new(); inputs.len()], max_len, Choice::Sample(rng))
    }

    pub fn decode_argmax(&self, inputs: &[&[Token]], max_len: usize) -> Vec<Response> {
        let h = self.start_states(inputs);
        self.decode_from::<rand_chacha::ChaCha8Rng>(h, vec![Vec::new(); inputs.len()], max_len, Choice::Argmax)
    }

    /// Continues sampling from decoder states that already consumed
    /// `prefixes` (each shorter than `max_len`).
    pub fn sample_continuations<R: Rng>(
        &self,
        states: Array2<F>,
        prefixes: Vec<TokenSequence>,
        rng: &mut R,
        max_len: usize,
    ) -> Vec<Response> {
        self.decode_from(states, prefixes, max_len, Choice::Sample(rng))
    }

    fn decode_from<R: Rng>(
        &self,
        mut h: Array2<F>,
        mut seqs: Vec<TokenSequence>,
        max_len: usize,
        mut choice: Choice<'_, R>,
    ) -> Vec<Response> {
        assert!(max_len >= 1, "max_len must be at least 1");
        let eos = self.vocab().eos();
        let mut terminated = vec![false; seqs.len()];
        // rows of `h` map to these sequence indices
        let mut active: Vec<usize> = (0..seqs.len()).filter(|&i| seqs[i].len() < max_len).collect();
        if active.len() != seqs.len() {
            h = h.select(Axis(0), &active);
        }
        while !active.is_empty() {
            let log_probs = self.next_log_probs(&h);
            let mut keep_rows = Vec::with_capacity(active.len());
            let mut fed = Vec::with_capacity(active.len());
            for (row, &i) in active.iter().enumerate() {
                let lp = log_probs.row(row);
                let tok = match &mut choice {
                    Choice::Argmax => argmax(lp.as_slice().expect("contiguous")),
                    Choice::Sample(rng) => sample_index(lp.as_slice().expect("contiguous"), rng.random::<f64>()),
                };
                if tok == eos {
                    terminated[i] = true;
                    continue;
                }
                seqs[i].push(tok);
                if seqs[i].len() < max_len {
                    keep_rows.push(row);
                    fed.push(tok);
                }
            }
            if keep_rows.is_empty() {
                break;
            }
            let next_active = keep_rows.iter().map(|&r| active[r]).collect();
            let h_sel = if keep_rows.len() == active.len() { h } else { h.select(Axis(0), &keep_rows) };
            h = self.core.advance(&h_sel, &fed);
            active = next_active;
        }
        seqs.into_iter()
            .zip(terminated)
            .map(|(tokens, terminated)| Response { tokens, terminated })
            .collect()
    }

    fn forced_batch(&self, trajectories: &[Vec<Token>]) -> TokenBatch {
        let bos = self.vocab().bos();
        let rows = trajectories
            .iter()
            .map(|t| {
                let mut row = Vec::with_capacity(t.len());
                row.push(bos);
                row.extend_from_slice(&t[..t.len().saturating_sub(1)]);
                row
            })
            .collect();
        TokenBatch::new(rows, self.vocab().pad())
    }

    /// Teacher-forced `log P_G(ŷ_t | x, ŷ_{1:t-1})` for every step of every
    /// response trajectory.
    pub fn step_log_probs(&self, inputs: &[&[Token]], responses: &[Response]) -> Vec<Vec<f64>> {
        let vocab = self.vocab();
        let trajectories: Vec<_> = responses.iter().map(|r| r.trajectory(&vocab)).collect();
        let batch = self.forced_batch(&trajectories);
        let trace = self.core.forward_trace(inputs, &batch);
        let mut out: Vec<Vec<f64>> = trajectories.iter().map(|t| Vec::with_capacity(t.len())).collect();
        for (t, state) in trace.states.iter().enumerate() {
            let lp = self.next_log_probs(state);
            for (b, traj) in trajectories.iter().enumerate() {
                if t < traj.len() {
                    out[b].push(lp[[b, traj[t]]]);
                }
            }
        }
        out
    }

    pub fn response_log_prob(&self, x: &[Token], response: &Response) -> f64 {
        self.step_log_probs(&[x], std::slice::from_ref(response))[0].iter().sum()
    }

    /// `log P_G(y | x)` for a response that ends with EOS.
    pub fn sequence_log_prob(&self, x: &[Token], y: &[Token]) -> f64 {
        self.response_log_prob(x, &Response::terminated(y.to_vec()))
    }

    /// Decoder states along each trajectory: entry `t` is the state after
    /// consuming BOS and `ŷ_{1:t}`, i.e. the state that emits `ŷ_{t+1}`.
    pub fn trajectory_states(&self, inputs: &[&[Token]], responses: &[Response]) -> Vec<Array2<F>> {
        let vocab = self.vocab();
        let trajectories: Vec<_> = responses.iter().map(|r| r.trajectory(&vocab)).collect();
        self.core.forward_trace(inputs, &self.forced_batch(&trajectories)).states
    }

    /// Gradient of `L = -Σ_b Σ_t w[b][t] log P_G(ŷ_{b,t} | x_b, ŷ_{b,1:t-1})`
    /// with the weights held constant. Returns `(dL/dθ, L)`.
    pub fn weighted_nll_gradient(
        &self,
        inputs: &[&[Token]],
        responses: &[Response],
        weights: &[Vec<f64>],
    ) -> (ParamStore<F>, f64) {
        let vocab = self.vocab();
        let trajectories: Vec<_> = responses.iter().map(|r| r.trajectory(&vocab)).collect();
        for (t, w) in trajectories.iter().zip(weights) {
            assert_eq!(t.len(), w.len(), "one weight per generation step");
        }
        let batch = self.forced_batch(&trajectories);
        let trace = self.core.forward_trace(inputs, &batch);
        let mut grads = self.core.params.zeros_like();
        let mut loss = 0.0;
        let mut d_states = Vec::with_capacity(trace.states.len());
        for (t, state) in trace.states.iter().enumerate() {
            let lp = self.next_log_probs(state);
            let mut d_logits = Array2::<F>::zeros(lp.raw_dim());
            for (b, traj) in trajectories.iter().enumerate() {
                if t >= traj.len() {
                    continue;
                }
                let w = weights[b][t];
                if w == 0.0 {
                    continue;
                }
                loss -= w * lp[[b, traj[t]]];
                for (k, d) in d_logits.row_mut(b).iter_mut().enumerate() {
                    let p = lp[[b, k]].exp();
                    let onehot = if k == traj[t] { 1.0 } else { 0.0 };
                    *d = F::of(w * (p - onehot));
                }
            }
            d_states.push(self.core.head_backward(state, &d_logits, &mut grads));
        }
        self.core.backward(&trace, d_states, &mut grads);
        (grads, loss)
    }
}

fn argmax(values: &[f64]) -> Token {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from log-probabilities with uniform `u` in `[0, 1)`.
fn sample_index(log_probs: &[f64], u: f64) -> Token {
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        let mut v = vec![0.0; 11];
        v[3] = 2.0;
        v[7] = 2.0;
        assert_eq!(argmax(&v), 3);
    }

    #[test]
    fn inverse_cdf_sampling() {
        let lp: Vec<f64> = [0.25f64, 0.5, 0.25].iter().map(|p| p.ln()).collect();
        assert_eq!(sample_index(&lp, 0.0), 0);
        assert_eq!(sample_index(&lp, 0.3), 1);
        assert_eq!(sample_index(&lp, 0.8), 2);
        assert_eq!(sample_index(&lp, 0.999_999_999_999), 2);
    }

    #[test]
    fn trajectory_appends_eos_only_when_terminated() {
        let v = Vocabulary::digits();
        assert_eq!(Response::terminated(vec![0, 1, 2]).trajectory(&v), vec![0, 1, 2, 10]);
        let cut = Response { tokens: vec![1, 1, 1, 1], terminated: false };
        assert_eq!(cut.trajectory(&v), vec![1, 1, 1, 1]);
        assert_eq!(cut.steps(), 4);
        assert_eq!(Response::terminated(vec![]).steps(), 1);
    }
}
