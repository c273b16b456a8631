//! Encoder-decoder skeleton shared by the generator, discriminator and value
//! network: one embedding table, a GRU encoder whose final state seeds a GRU
//! decoder, and an affine head over decoder states.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gru::{self, GruCache, GruGrads, GruWeights};
use super::{ParamStore, Real};
use crate::vocab::{Token, Vocabulary};

pub(crate) const EMBED: usize = 0;
const ENC: usize = 1;
const DEC: usize = 5;
pub(crate) const HEAD_W: usize = 9;
pub(crate) const HEAD_B: usize = 10;

pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreDims {
    pub vocab: Vocabulary,
    pub embed: usize,
    pub hidden: usize,
    pub head_out: usize,
}

impl CoreDims {
    fn shapes(&self) -> Vec<(&'static str, (usize, usize))> {
        let (e, h, v) = (self.embed, self.hidden, self.vocab.size());
        vec![
            ("embed", (v, e)),
            ("enc.wx", (e, 3 * h)),
            ("enc.wh", (h, 3 * h)),
            ("enc.bx", (1, 3 * h)),
            ("enc.bh", (1, 3 * h)),
            ("dec.wx", (e, 3 * h)),
            ("dec.wh", (h, 3 * h)),
            ("dec.bx", (1, 3 * h)),
            ("dec.bh", (1, 3 * h)),
            ("head.w", (h, self.head_out)),
            ("head.b", (1, self.head_out)),
        ]
    }
}

/// Right-padded token rows with per-row lengths.
#[derive(Debug, Clone)]
pub(crate) struct TokenBatch {
    rows: Vec<Vec<Token>>,
    lens: Vec<usize>,
    width: usize,
}

impl TokenBatch {
    pub fn new(rows: Vec<Vec<Token>>, pad: Token) -> Self {
        let lens: Vec<usize> = rows.iter().map(Vec::len).collect();
        let width = lens.iter().copied().max().unwrap_or(0);
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.resize(width, pad);
                r
            })
            .collect();
        Self { rows, lens, width }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn lens(&self) -> &[usize] {
        &self.lens
    }

    pub fn column(&self, t: usize) -> Vec<Token> {
        self.rows.iter().map(|r| r[t]).collect()
    }

    fn mask(&self, t: usize) -> Option<Vec<bool>> {
        if self.lens.iter().all(|&l| l > t) {
            None
        } else {
            Some(self.lens.iter().map(|&l| l > t).collect())
        }
    }
}

/// Forward intermediates needed for backprop.
#[derive(Debug, Clone)]
pub(crate) struct CoreTrace<F> {
    enc: Vec<GruCache<F>>,
    dec: Vec<GruCache<F>>,
    /// Decoder state after each input column, `B x H`.
    pub states: Vec<Array2<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentCore<F> {
    pub(crate) params: ParamStore<F>,
    pub(crate) dims: CoreDims,
}

impl<F: Real> RecurrentCore<F> {
    pub fn new<R: Rng>(dims: CoreDims, rng: &mut R) -> Self {
        let params = ParamStore::uniform(&dims.shapes(), INIT_SCALE, rng);
        Self { params, dims }
    }

    pub fn from_params(dims: CoreDims, params: ParamStore<F>) -> Option<Self> {
        let expected = dims.shapes();
        let ok = params.len() == expected.len()
            && params
                .names()
                .iter()
                .zip(params.tensors())
                .zip(&expected)
                .all(|((n, t), (en, shape))| n == en && t.dim() == *shape);
        ok.then_some(Self { params, dims })
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn dims(&self) -> CoreDims {
        self.dims
    }

    fn weights(&self, base: usize) -> GruWeights<'_, F> {
        let p = &self.params;
        GruWeights {
            wx: p.get(base),
            wh: p.get(base + 1),
            bx: p.get(base + 2),
            bh: p.get(base + 3),
        }
    }

    pub(crate) fn embed(&self, tokens: &[Token]) -> Array2<F> {
        self.params.get(EMBED).select(Axis(0), tokens)
    }

    fn run_encoder(&self, inputs: &[&[Token]], keep: bool) -> (Array2<F>, Vec<GruCache<F>>) {
        let batch = TokenBatch::new(inputs.iter().map(|x| x.to_vec()).collect(), self.dims.vocab.pad());
        let w = self.weights(ENC);
        let mut h = Array2::zeros((inputs.len(), self.dims.hidden));
        let mut caches = Vec::new();
        for t in 0..batch.width() {
            let col = batch.column(t);
            let x = self.embed(&col);
            let mask = batch.mask(t);
            if keep {
                let (h_new, cache) = gru::forward(&w, x, &h, mask.as_deref(), col);
                caches.push(cache);
                h = h_new;
            } else if let Some(m) = mask {
                let h_new = gru::step(&w, &x, &h);
                for (b, keep_row) in m.iter().enumerate() {
                    if *keep_row {
                        h.row_mut(b).assign(&h_new.row(b));
                    }
                }
            } else {
                h = gru::step(&w, &x, &h);
            }
        }
        (h, caches)
    }

    /// Final encoder states, `B x H`.
    pub fn encode(&self, inputs: &[&[Token]]) -> Array2<F> {
        self.run_encoder(inputs, false).0
    }

    /// One decoder step without caching.
    pub fn advance(&self, h: &Array2<F>, tokens: &[Token]) -> Array2<F> {
        gru::step(&self.weights(DEC), &self.embed(tokens), h)
    }

    pub fn head(&self, h: &Array2<F>) -> Array2<F> {
        let b = self.params.get(HEAD_B);
        let mut out = b.broadcast((h.nrows(), b.ncols())).expect("bias row").to_owned();
        general_mat_mul(F::one(), h, self.params.get(HEAD_W), F::one(), &mut out);
        out
    }

    /// Full forward with caches: encode `inputs`, then feed each row of
    /// `dec_inputs` through the decoder.
    pub(crate) fn forward_trace(&self, inputs: &[&[Token]], dec_inputs: &TokenBatch) -> CoreTrace<F> {
        let (mut h, enc) = self.run_encoder(inputs, true);
        let w = self.weights(DEC);
        let mut dec = Vec::with_capacity(dec_inputs.width());
        let mut states = Vec::with_capacity(dec_inputs.width());
        for t in 0..dec_inputs.width() {
            let col = dec_inputs.column(t);
            let x = self.embed(&col);
            let mask = dec_inputs.mask(t);
            let (h_new, cache) = gru::forward(&w, x, &h, mask.as_deref(), col);
            dec.push(cache);
            states.push(h_new.clone());
            h = h_new;
        }
        CoreTrace { enc, dec, states }
    }

    /// Head backward for one decoder column; returns `dL/dh`.
    pub(crate) fn head_backward(&self, h: &Array2<F>, d_out: &Array2<F>, grads: &mut ParamStore<F>) -> Array2<F> {
        general_mat_mul(F::one(), &h.t(), d_out, F::one(), grads.get_mut(HEAD_W));
        *grads.get_mut(HEAD_B) += &d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        d_out.dot(&self.params.get(HEAD_W).t())
    }

    /// Backprop through decoder then encoder given `dL/d states[t]`.
    pub(crate) fn backward(&self, trace: &CoreTrace<F>, d_states: Vec<Array2<F>>, grads: &mut ParamStore<F>) {
        assert_eq!(d_states.len(), trace.dec.len());
        let batch = trace.states.first().map_or(0, |s| s.nrows());
        let mut dh = Array2::<F>::zeros((batch, self.dims.hidden));
        for (cache, d) in trace.dec.iter().zip(d_states).rev() {
            dh += &d;
            dh = self.gru_backward(DEC, cache, &dh, grads);
        }
        for cache in trace.enc.iter().rev() {
            dh = self.gru_backward(ENC, cache, &dh, grads);
        }
    }

    fn gru_backward(&self, base: usize, cache: &GruCache<F>, dh: &Array2<F>, grads: &mut ParamStore<F>) -> Array2<F> {
        let w = self.weights(base);
        let [embed, wx, wh, bx, bh] = grads
            .tensors_mut()
            .get_disjoint_mut([EMBED, base, base + 1, base + 2, base + 3])
            .expect("distinct indices");
        let (dx, dh_prev) = gru::backward(&w, GruGrads { wx, wh, bx, bh }, cache, dh);
        for (row, &tok) in cache.input_tokens.iter().enumerate() {
            if cache.mask.as_ref().is_none_or(|m| m[row]) {
                let mut e = embed.row_mut(tok);
                e += &dx.row(row);
            }
        }
        dh_prev
    }
}
