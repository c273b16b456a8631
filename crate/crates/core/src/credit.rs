//! Credit assignment strategies.
//!
//! Each strategy fixes two things: how per-step discriminator scalars
//! `Q̂(s_t, y_t)` are aggregated into the discriminator's training score
//! `D(x, y)`, and which weight `w_t` multiplies `∇ log P_G(ŷ_t | x, ŷ_{1:t-1})`
//! in the generator update.
//!
//! | kind       | `D(x, y)`                 | `w_t`                                   |
//! |------------|---------------------------|-----------------------------------------|
//! | SeqGAN     | last scalar               | `D(x, ŷ)`                               |
//! | REGS       | one uniformly drawn step  | `Q̂(s_t, ŷ_t)`                           |
//! | MCTS       | last scalar               | mean of `D` over `I` sampled completions |
//! | MaskGAN    | every step                | `Σ_{τ≥t} Q̂(s_τ, ŷ_τ)`                   |
//! | StepGAN    | mean of scalars           | `Q̂(s_t, ŷ_t) - V(s_t)`                  |
//! | StepGAN-W  | mean of scalars           | `(M - t)(Q̂(s_t, ŷ_t) - V(s_t))`         |
//!
//! A response's steps are its emitted tokens including the terminating EOS,
//! so `M` counts the EOS step. Weights are plain numbers: no gradient flows
//! from the generator update into the discriminator or value network.

use std::fmt;
use std::str::FromStr;

use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Discriminator, Generator, ParamStore, Real, Response, ValueNetwork};
use crate::vocab::{Token, TokenSequence};

pub const DEFAULT_ROLLOUTS: usize = 5;
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    Mle,
    SeqGan,
    Regs,
    Mcts,
    MaskGan,
    StepGan,
    StepGanW,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Mle,
        StrategyKind::SeqGan,
        StrategyKind::Regs,
        StrategyKind::Mcts,
        StrategyKind::MaskGan,
        StrategyKind::StepGan,
        StrategyKind::StepGanW,
    ];

    pub fn is_adversarial(self) -> bool {
        self != StrategyKind::Mle
    }

    /// How this strategy's discriminator reads its step scalars.
    pub fn aggregation(self) -> Option<Aggregation> {
        match self {
            StrategyKind::Mle => None,
            StrategyKind::SeqGan | StrategyKind::Mcts => Some(Aggregation::Last),
            StrategyKind::Regs => Some(Aggregation::RandomStep),
            StrategyKind::MaskGan => Some(Aggregation::AllSteps),
            StrategyKind::StepGan | StrategyKind::StepGanW => Some(Aggregation::Mean),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Mle => "mle",
            StrategyKind::SeqGan => "seqgan",
            StrategyKind::Regs => "regs",
            StrategyKind::Mcts => "mcts",
            StrategyKind::MaskGan => "maskgan",
            StrategyKind::StepGan => "stepgan",
            StrategyKind::StepGanW => "stepgan_w",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.to_string() == norm)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Time weighting `α_t` for StepGAN updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlphaSchedule {
    Uniform,
    /// `α_t = M - t + offset` with 1-indexed `t`.
    Decaying { offset: f64 },
}

impl AlphaSchedule {
    pub fn alpha(&self, t: usize, m: usize) -> f64 {
        match *self {
            AlphaSchedule::Uniform => 1.0,
            AlphaSchedule::Decaying { offset } => (m - t) as f64 + offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub rollouts: usize,
    pub alpha: AlphaSchedule,
    pub baseline: bool,
}

impl StrategyConfig {
    /// Defaults per kind: five rollouts, decaying weights only for
    /// StepGAN-W, and a value baseline for everything except SeqGAN.
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            rollouts: DEFAULT_ROLLOUTS,
            alpha: match kind {
                StrategyKind::StepGanW => AlphaSchedule::Decaying { offset: 0.0 },
                _ => AlphaSchedule::Uniform,
            },
            baseline: !matches!(kind, StrategyKind::Mle | StrategyKind::SeqGan),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rollouts == 0 {
            return Err(Error::Config("rollout count must be at least 1".into()));
        }
        let decaying = matches!(self.alpha, AlphaSchedule::Decaying { .. });
        if decaying && self.kind != StrategyKind::StepGanW {
            return Err(Error::Config(format!("decaying weights are only defined for stepgan_w, not {}", self.kind)));
        }
        if matches!(self.kind, StrategyKind::StepGan | StrategyKind::StepGanW) && !self.baseline {
            return Err(Error::Config("stepgan always subtracts the value baseline".into()));
        }
        Ok(())
    }

    /// Whether the update needs a value network at all.
    pub fn uses_value(&self) -> bool {
        self.kind.is_adversarial() && self.baseline
    }

    fn require_adversarial(&self) -> Result<()> {
        if self.kind.is_adversarial() {
            Ok(())
        } else {
            Err(Error::invalid("mle has no discriminator or policy-gradient weights"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    Mean,
    Last,
    RandomStep,
    AllSteps,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "last" => Ok(Aggregation::Last),
            "random_step" => Ok(Aggregation::RandomStep),
            "all_steps" => Ok(Aggregation::AllSteps),
            other => Err(Error::invalid(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Score {
    Scalar(f64),
    Steps(Vec<f64>),
}

impl Score {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            Score::Scalar(v) => Some(*v),
            Score::Steps(_) => None,
        }
    }
}

pub fn aggregate<R: Rng>(steps: &[f64], aggregation: Aggregation, rng: &mut R) -> Score {
    assert!(!steps.is_empty(), "no step scores to aggregate");
    match aggregation {
        Aggregation::Mean => Score::Scalar(steps.iter().sum::<f64>() / steps.len() as f64),
        Aggregation::Last => Score::Scalar(steps[steps.len() - 1]),
        Aggregation::RandomStep => Score::Scalar(steps[rng.random_range(0..steps.len())]),
        Aggregation::AllSteps => Score::Steps(steps.to_vec()),
    }
}

/// `D(x, y)` under the given aggregation.
pub fn discriminator_score<F: Real, R: Rng>(
    d: &Discriminator<F>,
    x: &[Token],
    y: &[Token],
    aggregation: Aggregation,
    rng: &mut R,
) -> Score {
    let steps = d.step_scores(&[x], &[y]).remove(0);
    aggregate(&steps, aggregation, rng)
}

/// Batch-mean adversarial loss `-[log D(x, y*) + log(1 - D(x, ŷ))]` and its
/// derivative with respect to every step scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorObjective {
    pub loss: f64,
    pub d_real: Vec<Vec<f64>>,
    pub d_fake: Vec<Vec<f64>>,
}

fn neg_log(v: f64) -> (f64, f64) {
    let c = v.max(LOG_FLOOR);
    (-c.ln(), -1.0 / c)
}

/// Loss of one sequence's step scalars, and `dloss/dq`, for the real
/// (`-log D`) or fake (`-log(1 - D)`) side.
fn side_loss<R: Rng>(kind: StrategyKind, q: &[f64], real: bool, rng: &mut R) -> (f64, Vec<f64>) {
    let m = q.len();
    let term = |v: f64| -> (f64, f64) {
        if real {
            neg_log(v)
        } else {
            let (l, g) = neg_log(1.0 - v);
            (l, -g)
        }
    };
    let mut grad = vec![0.0; m];
    let loss = match kind.aggregation().expect("adversarial kind") {
        Aggregation::Last => {
            let (l, g) = term(q[m - 1]);
            grad[m - 1] = g;
            l
        }
        Aggregation::RandomStep => {
            let t = rng.random_range(0..m);
            let (l, g) = term(q[t]);
            grad[t] = g;
            l
        }
        Aggregation::Mean => {
            let mean = q.iter().sum::<f64>() / m as f64;
            let (l, g) = term(mean);
            grad.fill(g / m as f64);
            l
        }
        Aggregation::AllSteps => q
            .iter()
            .zip(grad.iter_mut())
            .map(|(&v, gr)| {
                let (l, g) = term(v);
                *gr = g;
                l
            })
            .sum(),
    };
    (loss, grad)
}

pub fn discriminator_objective<R: Rng>(
    kind: StrategyKind,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    rng: &mut R,
) -> Result<DiscriminatorObjective> {
    if !kind.is_adversarial() {
        return Err(Error::invalid("mle has no discriminator"));
    }
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::invalid("real and fake batches must be non-empty and equal in size"));
    }
    let scale = 1.0 / real.len() as f64;
    let mut loss = 0.0;
    let mut d_real = Vec::with_capacity(real.len());
    let mut d_fake = Vec::with_capacity(fake.len());
    for (r, f) in real.iter().zip(fake) {
        let (lr, gr) = side_loss(kind, r, true, rng);
        let (lf, gf) = side_loss(kind, f, false, rng);
        loss += scale * (lr + lf);
        d_real.push(gr.into_iter().map(|g| g * scale).collect());
        d_fake.push(gf.into_iter().map(|g| g * scale).collect());
    }
    Ok(DiscriminatorObjective { loss, d_real, d_fake })
}

/// Result of one discriminator loss evaluation with its gradient.
pub struct DiscriminatorStep<F> {
    pub loss: f64,
    pub grads: ParamStore<F>,
    pub mean_real: f64,
    pub mean_fake: f64,
}

fn mean_score(scores: &[Vec<f64>], kind: StrategyKind) -> f64 {
    let per: Vec<f64> = scores
        .iter()
        .map(|q| match kind {
            StrategyKind::SeqGan | StrategyKind::Mcts => q[q.len() - 1],
            _ => q.iter().sum::<f64>() / q.len() as f64,
        })
        .collect();
    per.iter().sum::<f64>() / per.len().max(1) as f64
}

/// Loss and parameter gradient for one discriminator update on paired real
/// and generated sequences (token trajectories, EOS included).
pub fn discriminator_loss<F: Real, R: Rng>(
    cfg: &StrategyConfig,
    d: &Discriminator<F>,
    inputs: &[&[Token]],
    real: &[&[Token]],
    fake: &[&[Token]],
    rng: &mut R,
) -> Result<DiscriminatorStep<F>> {
    cfg.require_adversarial()?;
    let mut all_inputs = inputs.to_vec();
    all_inputs.extend_from_slice(inputs);
    let mut seqs = real.to_vec();
    seqs.extend_from_slice(fake);
    let pass = d.forward(&all_inputs, &seqs);
    let (real_q, fake_q) = pass.scores.split_at(real.len());
    let obj = discriminator_objective(cfg.kind, real_q, fake_q, rng)?;
    let mean_real = mean_score(real_q, cfg.kind);
    let mean_fake = mean_score(fake_q, cfg.kind);
    let mut d_scores = obj.d_real;
    d_scores.extend(obj.d_fake);
    let grads = d.backward(&pass, &d_scores);
    Ok(DiscriminatorStep {
        loss: obj.loss,
        grads,
        mean_real,
        mean_fake,
    })
}

fn is_complete(prefix: &[Token], eos: Token, max_len: usize) -> bool {
    prefix.last() == Some(&eos) || prefix.len() >= max_len
}

/// `Q*(s_t, y_t)`: the mean last-step discriminator score of `rollouts`
/// completions of `prefix` sampled from the generator. A complete prefix
/// (ending in EOS or at `max_len`) is scored directly.
pub fn mcts_rollout_value<F: Real, R: Rng>(
    g: &Generator<F>,
    d: &Discriminator<F>,
    x: &[Token],
    prefix: &[Token],
    rollouts: usize,
    max_len: usize,
    rng: &mut R,
) -> f64 {
    assert!(rollouts >= 1, "at least one rollout");
    let eos = g.vocab().eos();
    if is_complete(prefix, eos, max_len) {
        let q = d.step_scores(&[x], &[prefix]).remove(0);
        return q[q.len() - 1];
    }
    let mut h = g.start_states(&[x]);
    for &tok in prefix {
        h = g.advance(&h, &[tok]);
    }
    let states = h.select(Axis(0), &vec![0; rollouts]);
    let completions = g.sample_continuations(states, vec![prefix.to_vec(); rollouts], rng, max_len);
    let vocab = g.vocab();
    let seqs: Vec<TokenSequence> = completions.iter().map(|c| c.trajectory(&vocab)).collect();
    let seq_refs: Vec<&[Token]> = seqs.iter().map(Vec::as_slice).collect();
    let scores = d.step_scores(&vec![x; rollouts], &seq_refs);
    scores.iter().map(|q| q[q.len() - 1]).sum::<f64>() / rollouts as f64
}

/// Rollout values for every step of every response in one batch. The last
/// step of each response is the plain discriminator score.
pub fn mcts_values<F: Real, R: Rng>(
    g: &Generator<F>,
    d: &Discriminator<F>,
    inputs: &[&[Token]],
    responses: &[Response],
    final_scores: &[f64],
    rollouts: usize,
    max_len: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let vocab = g.vocab();
    let states = g.trajectory_states(inputs, responses);
    // one rollout job per (response, step < M, i)
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for (b, resp) in responses.iter().enumerate() {
        for t in 1..resp.steps() {
            rows.extend(std::iter::repeat_n((b, t), rollouts));
        }
    }
    let mut values: Vec<Vec<f64>> = responses.iter().map(|r| vec![0.0; r.steps()]).collect();
    for (b, v) in values.iter_mut().enumerate() {
        *v.last_mut().expect("non-empty") = final_scores[b];
    }
    if rows.is_empty() {
        return values;
    }
    let hidden = states[0].ncols();
    let mut h = ndarray::Array2::<F>::zeros((rows.len(), hidden));
    for (i, &(b, t)) in rows.iter().enumerate() {
        h.row_mut(i).assign(&states[t].row(b));
    }
    let prefixes = rows.iter().map(|&(b, t)| responses[b].tokens[..t].to_vec()).collect();
    let completions = g.sample_continuations(h, prefixes, rng, max_len);
    let seqs: Vec<TokenSequence> = completions.iter().map(|c| c.trajectory(&vocab)).collect();
    let seq_refs: Vec<&[Token]> = seqs.iter().map(Vec::as_slice).collect();
    let xs: Vec<&[Token]> = rows.iter().map(|&(b, _)| inputs[b]).collect();
    let scores = d.step_scores(&xs, &seq_refs);
    let inv = 1.0 / rollouts as f64;
    for (&(b, t), q) in rows.iter().zip(&scores) {
        values[b][t - 1] += inv * q[q.len() - 1];
    }
    values
}

/// Per-step weights from already computed quantities for one response:
/// step scalars `q`, optional baseline `v`, and rollout values for MCTS.
pub fn weights_from_scores(cfg: &StrategyConfig, q: &[f64], v: Option<&[f64]>, rollout: Option<&[f64]>) -> Result<Vec<f64>> {
    cfg.require_adversarial()?;
    let m = q.len();
    let mut w: Vec<f64> = match cfg.kind {
        StrategyKind::Mle => unreachable!(),
        StrategyKind::SeqGan => vec![q[m - 1]; m],
        StrategyKind::Regs | StrategyKind::StepGan | StrategyKind::StepGanW => q.to_vec(),
        StrategyKind::Mcts => rollout
            .ok_or_else(|| Error::invalid("mcts weights need rollout values"))?
            .to_vec(),
        StrategyKind::MaskGan => {
            let mut acc = 0.0;
            let mut w = vec![0.0; m];
            for t in (0..m).rev() {
                acc += q[t];
                w[t] = acc;
            }
            w
        }
    };
    if cfg.baseline {
        let v = v.ok_or_else(|| Error::invalid("baseline enabled but no value estimates given"))?;
        for (w, v) in w.iter_mut().zip(v) {
            *w -= v;
        }
    }
    for (t, w) in w.iter_mut().enumerate() {
        *w *= cfg.alpha.alpha(t + 1, m);
    }
    Ok(w)
}

/// Targets for the value network. States of SeqGAN and MCTS are regressed
/// onto the final discriminator score (whose conditional expectation given
/// `s_t` is `V(s_t)`); the other kinds regress onto the step scalars.
pub fn value_targets(kind: StrategyKind, q: &[f64]) -> Vec<f64> {
    match kind {
        StrategyKind::SeqGan | StrategyKind::Mcts => vec![q[q.len() - 1]; q.len()],
        _ => q.to_vec(),
    }
}

/// Everything computed while weighting one sampled batch.
#[derive(Debug, Clone)]
pub struct WeightedBatch {
    pub responses: Vec<Response>,
    pub step_scores: Vec<Vec<f64>>,
    pub values: Option<Vec<Vec<f64>>>,
    pub weights: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub fn step_weights<F: Real, R: Rng>(
    cfg: &StrategyConfig,
    g: &Generator<F>,
    d: &Discriminator<F>,
    v: Option<&ValueNetwork<F>>,
    inputs: &[&[Token]],
    responses: &[Response],
    max_len: usize,
    rng: &mut R,
) -> Result<WeightedBatch> {
    cfg.require_adversarial()?;
    if cfg.baseline && v.is_none() {
        return Err(Error::invalid("baseline enabled but no value network given"));
    }
    let vocab = g.vocab();
    let trajectories: Vec<TokenSequence> = responses.iter().map(|r| r.trajectory(&vocab)).collect();
    let traj_refs: Vec<&[Token]> = trajectories.iter().map(Vec::as_slice).collect();
    let q = d.step_scores(inputs, &traj_refs);
    let values = match (cfg.baseline, v) {
        (true, Some(v)) => Some(v.step_scores(inputs, &traj_refs)),
        _ => None,
    };
    let rollout = (cfg.kind == StrategyKind::Mcts).then(|| {
        let finals: Vec<f64> = q.iter().map(|q| q[q.len() - 1]).collect();
        mcts_values(g, d, inputs, responses, &finals, cfg.rollouts, max_len, rng)
    });
    let weights = (0..responses.len())
        .map(|b| {
            weights_from_scores(
                cfg,
                &q[b],
                values.as_ref().map(|v| v[b].as_slice()),
                rollout.as_ref().map(|r| r[b].as_slice()),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightedBatch {
        responses: responses.to_vec(),
        step_scores: q,
        values,
        weights,
    })
}

/// Gradient of the batch-mean policy-gradient loss
/// `-(1/B) Σ_b Σ_t w_{b,t} log P_G(ŷ_{b,t} | x_b, ŷ_{b,1:t-1})`;
/// descending it ascends the weighted log-likelihood.
pub fn policy_gradient<F: Real>(
    g: &Generator<F>,
    inputs: &[&[Token]],
    batch: &WeightedBatch,
) -> (ParamStore<F>, f64) {
    let scale = 1.0 / inputs.len().max(1) as f64;
    let weights: Vec<Vec<f64>> = batch
        .weights
        .iter()
        .map(|w| w.iter().map(|v| v * scale).collect())
        .collect();
    g.weighted_nll_gradient(inputs, &batch.responses, &weights)
}

/// Samples fresh responses, weights them, and returns the generator
/// gradient together with the weighted batch.
pub fn generator_gradient<F: Real, R: Rng>(
    cfg: &StrategyConfig,
    g: &Generator<F>,
    d: &Discriminator<F>,
    v: Option<&ValueNetwork<F>>,
    inputs: &[&[Token]],
    max_len: usize,
    rng: &mut R,
) -> Result<(ParamStore<F>, WeightedBatch)> {
    cfg.require_adversarial()?;
    let responses = g.sample(inputs, rng, max_len);
    let batch = step_weights(cfg, g, d, v, inputs, &responses, max_len, rng)?;
    let (grads, _) = policy_gradient(g, inputs, &batch);
    Ok((grads, batch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn aggregations() {
        let q = [0.2, 0.4, 0.6];
        assert!((aggregate(&q, Aggregation::Mean, &mut rng()).scalar().unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(aggregate(&q, Aggregation::Last, &mut rng()).scalar(), Some(0.6));
        assert_eq!(aggregate(&q, Aggregation::AllSteps, &mut rng()), Score::Steps(q.to_vec()));
        let r = aggregate(&q, Aggregation::RandomStep, &mut rng()).scalar().unwrap();
        assert!(q.contains(&r));
        assert!("median".parse::<Aggregation>().is_err());
    }

    #[test]
    fn half_everywhere_costs_two_log_two() {
        let q = vec![vec![0.5; 3]; 2];
        for kind in [StrategyKind::SeqGan, StrategyKind::Regs, StrategyKind::Mcts, StrategyKind::StepGan] {
            let obj = discriminator_objective(kind, &q, &q, &mut rng()).unwrap();
            assert!((obj.loss - 2.0 * 2f64.ln()).abs() < 1e-12, "{kind}");
        }
        let obj = discriminator_objective(StrategyKind::MaskGan, &q, &q, &mut rng()).unwrap();
        assert!((obj.loss - 6.0 * 2f64.ln()).abs() < 1e-12);
        assert!(discriminator_objective(StrategyKind::Mle, &q, &q, &mut rng()).is_err());
    }

    #[test]
    fn perfect_discriminator_loss_vanishes() {
        for delta in [1e-2, 1e-4, 1e-8] {
            let real = vec![vec![1.0 - delta; 3]];
            let fake = vec![vec![delta; 3]];
            let obj = discriminator_objective(StrategyKind::StepGan, &real, &fake, &mut rng()).unwrap();
            assert!(obj.loss < 3.0 * delta, "delta {delta}: loss {}", obj.loss);
        }
    }

    #[test]
    fn single_step_losses_coincide() {
        let real = vec![vec![0.7], vec![0.9]];
        let fake = vec![vec![0.2], vec![0.4]];
        let losses: Vec<f64> = [StrategyKind::SeqGan, StrategyKind::Regs, StrategyKind::MaskGan, StrategyKind::StepGan]
            .into_iter()
            .map(|k| discriminator_objective(k, &real, &fake, &mut rng()).unwrap().loss)
            .collect();
        assert!(losses.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15), "{losses:?}");
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let real = vec![vec![0.7, 0.3, 0.6], vec![0.9, 0.5]];
        let fake = vec![vec![0.2, 0.45], vec![0.4, 0.1, 0.8, 0.3]];
        for kind in [StrategyKind::SeqGan, StrategyKind::MaskGan, StrategyKind::StepGan] {
            let obj = discriminator_objective(kind, &real, &fake, &mut rng()).unwrap();
            let h = 1e-6;
            for b in 0..2 {
                for t in 0..real[b].len() {
                    let mut up = real.clone();
                    up[b][t] += h;
                    let mut down = real.clone();
                    down[b][t] -= h;
                    let lu = discriminator_objective(kind, &up, &fake, &mut rng()).unwrap().loss;
                    let ld = discriminator_objective(kind, &down, &fake, &mut rng()).unwrap().loss;
                    assert!(((lu - ld) / (2.0 * h) - obj.d_real[b][t]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn single_step_weights_coincide_without_baseline() {
        let q = [0.37];
        let rollout = [0.37];
        let w: Vec<f64> = [
            StrategyKind::SeqGan,
            StrategyKind::Regs,
            StrategyKind::Mcts,
            StrategyKind::MaskGan,
            StrategyKind::StepGan,
        ]
        .into_iter()
        .map(|k| {
            let mut cfg = StrategyConfig::new(k);
            cfg.baseline = false;
            weights_from_scores(&cfg, &q, None, Some(&rollout)).unwrap()[0]
        })
        .collect();
        assert!(w.iter().all(|&v| v == 0.37), "{w:?}");
    }

    #[test]
    fn maskgan_returns_telescope() {
        let mut cfg = StrategyConfig::new(StrategyKind::MaskGan);
        cfg.baseline = false;
        let q = [0.1, 0.5, 0.25, 0.9];
        let w = weights_from_scores(&cfg, &q, None, None).unwrap();
        for t in 0..q.len() - 1 {
            assert!((w[t] - w[t + 1] - q[t]).abs() < 1e-15);
        }
        assert_eq!(w[3], 0.9);
    }

    #[test]
    fn stepgan_w_decays_to_zero() {
        let cfg = StrategyConfig::new(StrategyKind::StepGanW);
        let q = [0.6, 0.7, 0.8];
        let v = [0.5, 0.5, 0.5];
        let w = weights_from_scores(&cfg, &q, Some(&v), None).unwrap();
        let expected = [2.0 * 0.1, 0.2, 0.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{w:?}");
        }
        let plain = weights_from_scores(&StrategyConfig::new(StrategyKind::StepGan), &q, Some(&v), None).unwrap();
        assert!((plain[2] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(StrategyConfig::new(StrategyKind::StepGanW).validate().is_ok());
        let mut bad = StrategyConfig::new(StrategyKind::Regs);
        bad.alpha = AlphaSchedule::Decaying { offset: 0.0 };
        assert!(bad.validate().is_err());
        let mut zero = StrategyConfig::new(StrategyKind::Mcts);
        zero.rollouts = 0;
        assert!(zero.validate().is_err());
        assert!(!StrategyConfig::new(StrategyKind::SeqGan).baseline);
        assert!(StrategyConfig::new(StrategyKind::Mcts).baseline);
        assert_eq!("StepGAN-W".parse::<StrategyKind>().unwrap(), StrategyKind::StepGanW);
        assert!(weights_from_scores(&StrategyConfig::new(StrategyKind::Mle), &[0.5], None, None).is_err());
    }
}
