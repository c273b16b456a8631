//! Metrics over trained models on the counting task.
//!
//! Percentages are in `[0, 100]`. The KL terms are exact: FKLD sums over
//! each input's answer set, IKLD over the generator's whole output space.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainingConfig;
use crate::counting::{enumerate_answers, is_valid, CountingDataset, CountingExample, DigitSequence};
use crate::credit::StrategyConfig;
use crate::error::{Error, Result};
use crate::nn::{Discriminator, Generator, Real, Response};
use crate::training::{GanState, GanTrainer};
use crate::vocab::{Token, TokenSequence};

pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const PROB_FLOOR: f64 = 1e-12;
pub const ENUMERATION_CAP: usize = 1_000_000;
const DECODE_CHUNK: usize = 512;

fn inputs_of(examples: &[CountingExample]) -> Vec<&[Token]> {
    examples.iter().map(|e| e.input.tokens()).collect()
}

/// A response counts as an answer only if it ended with EOS.
pub fn response_is_valid(x: &DigitSequence, response: &Response) -> bool {
    response.terminated && is_valid(x, &response.tokens)
}

pub fn argmax_responses<F: Real>(g: &Generator<F>, examples: &[CountingExample], max_len: usize) -> Vec<Response> {
    let inputs = inputs_of(examples);
    inputs
        .chunks(DECODE_CHUNK)
        .flat_map(|chunk| g.decode_argmax(chunk, max_len))
        .collect()
}

pub fn precision_of(examples: &[CountingExample], responses: &[Response]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let valid = examples
        .iter()
        .zip(responses)
        .filter(|(e, r)| response_is_valid(&e.input, r))
        .count();
    100.0 * valid as f64 / examples.len() as f64
}

/// Percentage of inputs whose greedy decode is a valid answer.
pub fn precision_argmax<F: Real>(g: &Generator<F>, examples: &[CountingExample], max_len: usize) -> f64 {
    precision_of(examples, &argmax_responses(g, examples, max_len))
}

/// `(SampP, SampR)` from `n_samples` draws per input. SampP pools every
/// sample; SampR averages, per input, the share of its answer set that was
/// hit at least once.
pub fn sample_precision_recall<F: Real, R: Rng>(
    g: &Generator<F>,
    examples: &[CountingExample],
    n_samples: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if n_samples == 0 {
        return Err(Error::invalid("need at least one sample per input"));
    }
    if examples.is_empty() {
        return Err(Error::invalid("no examples to evaluate"));
    }
    let per_chunk = (DECODE_CHUNK / n_samples).max(1);
    let mut valid_total = 0usize;
    let mut recall_sum = 0.0;
    for chunk in examples.chunks(per_chunk) {
        let inputs: Vec<&[Token]> = chunk
            .iter()
            .flat_map(|e| std::iter::repeat_n(e.input.tokens(), n_samples))
            .collect();
        let samples = g.sample(&inputs, rng, max_len);
        for (e, draws) in chunk.iter().zip(samples.chunks(n_samples)) {
            let hits: HashSet<&[Token]> = draws
                .iter()
                .filter(|r| response_is_valid(&e.input, r))
                .map(|r| r.tokens.as_slice())
                .collect();
            valid_total += draws.iter().filter(|r| response_is_valid(&e.input, r)).count();
            recall_sum += hits.len() as f64 / e.input.len() as f64;
        }
    }
    let samp_p = 100.0 * valid_total as f64 / (examples.len() * n_samples) as f64;
    let samp_r = 100.0 * recall_sum / examples.len() as f64;
    Ok((samp_p, samp_r))
}

/// Mean over inputs of `Σ_{y ∈ A(x)} P_R(y|x) log(P_R(y|x) / P_G(y|x))`.
pub fn forward_kld<F: Real>(g: &Generator<F>, examples: &[CountingExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for e in examples {
        let answers = enumerate_answers(&e.input);
        let responses: Vec<Response> = answers
            .answers()
            .iter()
            .map(|a| Response::terminated(a.to_vec()))
            .collect();
        let inputs = vec![e.input.tokens(); responses.len()];
        let p_r = 1.0 / responses.len() as f64;
        for lp in g.step_log_probs(&inputs, &responses) {
            let p_g = lp.iter().sum::<f64>().exp().max(PROB_FLOOR);
            total += p_r * (p_r / p_g).ln();
        }
    }
    total / examples.len() as f64
}

/// Exact generator distribution over its output space for one input: every
/// EOS-terminated response of fewer than `max_len` symbols, plus the total
/// mass of responses cut off at `max_len` symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpace {
    pub terminated: Vec<(TokenSequence, f64)>,
    pub truncated_log_prob: f64,
}

impl OutputSpace {
    pub fn total_probability(&self) -> f64 {
        self.terminated.iter().map(|(_, lp)| lp.exp()).sum::<f64>() + self.truncated_log_prob.exp()
    }
}

pub fn output_space_size(symbols: usize, max_len: usize) -> usize {
    let mut level = 1usize;
    let mut total = 1usize;
    for _ in 0..max_len {
        total = total.saturating_add(level);
        level = level.saturating_mul(symbols);
    }
    total
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Walks the prefix tree level by level, one batched decoder step per level.
pub fn enumerate_output_space<F: Real>(g: &Generator<F>, x: &[Token], max_len: usize) -> Result<OutputSpace> {
    let vocab = g.vocab();
    let symbols = vocab.symbols();
    let eos = vocab.eos();
    let size = output_space_size(symbols, max_len);
    if size > ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            size,
            cap: ENUMERATION_CAP,
        });
    }
    let mut terminated = Vec::with_capacity(size);
    let mut prefixes: Vec<(TokenSequence, f64)> = vec![(Vec::new(), 0.0)];
    let mut states: Array2<F> = g.start_states(&[x]);
    for depth in 0..max_len {
        let log_probs = g.next_log_probs(&states);
        for (i, (prefix, lp)) in prefixes.iter().enumerate() {
            terminated.push((prefix.clone(), lp + log_probs[[i, eos]]));
        }
        if depth + 1 == max_len {
            // a symbol at the last position ends the response without EOS
            let log_probs = &log_probs;
            let truncated_log_prob = log_sum_exp(
                prefixes
                    .iter()
                    .enumerate()
                    .flat_map(|(i, (_, lp))| (0..symbols).map(move |s| lp + log_probs[[i, s]])),
            );
            return Ok(OutputSpace {
                terminated,
                truncated_log_prob,
            });
        }
        let rows: Vec<usize> = (0..prefixes.len()).flat_map(|i| std::iter::repeat_n(i, symbols)).collect();
        let tokens: Vec<Token> = (0..prefixes.len()).flat_map(|_| 0..symbols).collect();
        let expanded = states.select(Axis(0), &rows);
        states = g.advance(&expanded, &tokens);
        prefixes = rows
            .iter()
            .zip(&tokens)
            .map(|(&i, &s)| {
                let mut p = prefixes[i].0.clone();
                p.push(s);
                (p, prefixes[i].1 + log_probs[[i, s]])
            })
            .collect();
    }
    Err(Error::invalid("max_len must be at least 1"))
}

/// IKLD contribution of one input given its output space.
pub fn inverse_kld_terms(x: &DigitSequence, space: &OutputSpace, epsilon: f64) -> f64 {
    let p_r = 1.0 / x.len() as f64;
    let term = |lp: f64, valid: bool| -> f64 {
        let p = lp.exp();
        if p < PROB_FLOOR {
            return 0.0;
        }
        let target = if valid { p_r } else { epsilon };
        p * (lp - target.ln())
    };
    let mut total: f64 = space.terminated.iter().map(|(y, lp)| term(*lp, is_valid(x, y))).sum();
    total += term(space.truncated_log_prob, false);
    total
}

/// Mean over inputs of `Σ_y P_G(y|x) log(P_G(y|x) / P̃_R(y|x))` where
/// `P̃_R` is `P_R` on valid answers and `epsilon` everywhere else.
pub fn inverse_kld<F: Real>(g: &Generator<F>, examples: &[CountingExample], epsilon: f64, max_len: usize) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for e in examples {
        let space = enumerate_output_space(g, e.input.tokens(), max_len)?;
        total += inverse_kld_terms(&e.input, &space, epsilon);
    }
    Ok(total / examples.len() as f64)
}

/// Distinct n-grams over the total token count.
pub fn distinct_ngrams(responses: &[TokenSequence], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    let total: usize = responses.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::invalid("empty corpus"));
    }
    let grams: HashSet<&[Token]> = responses.iter().flat_map(|r| r.windows(n)).collect();
    Ok(grams.len() as f64 / total as f64)
}

/// Mean token count, EOS excluded.
pub fn average_length(responses: &[TokenSequence]) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::invalid("no responses"));
    }
    Ok(responses.iter().map(Vec::len).sum::<usize>() as f64 / responses.len() as f64)
}

/// The most frequent tenth of the distinct MLE responses (rounded up),
/// extended by every response tied with the last one taken.
pub fn build_general_set(mle_responses: &[TokenSequence]) -> Result<BTreeSet<TokenSequence>> {
    if mle_responses.is_empty() {
        return Err(Error::invalid("no MLE responses"));
    }
    let mut counts: BTreeMap<&TokenSequence, usize> = BTreeMap::new();
    for r in mle_responses {
        *counts.entry(r).or_default() += 1;
    }
    let mut ranked: Vec<(&TokenSequence, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let take = ranked.len().div_ceil(10);
    let cutoff = ranked[take - 1].1;
    Ok(ranked
        .into_iter()
        .take_while(|(_, c)| *c >= cutoff)
        .map(|(r, _)| r.clone())
        .collect())
}

/// Responses in the general set, skipping those whose own ground truth is
/// general too.
pub fn count_general(responses: &[TokenSequence], general: &BTreeSet<TokenSequence>, ground_truths: &[TokenSequence]) -> usize {
    responses
        .iter()
        .zip(ground_truths)
        .filter(|(r, gt)| general.contains(*r) && !general.contains(*gt))
        .count()
}

/// Per-step population variance of one probe pair's step scores across
/// discriminator checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    pub variances: Vec<f64>,
}

impl VarianceProfile {
    pub fn to_plot_data(&self) -> String {
        let mut out = String::from("# step variance\n");
        for (t, v) in self.variances.iter().enumerate() {
            writeln!(out, "{} {:e}", t + 1, v).expect("write to string");
        }
        out
    }
}

pub fn q_variance_probe<F: Real>(checkpoints: &[Discriminator<F>], x: &[Token], y: &[Token]) -> Result<VarianceProfile> {
    if checkpoints.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 checkpoints, got {}", checkpoints.len())));
    }
    if y.is_empty() {
        return Err(Error::invalid("probe response is empty"));
    }
    let scores: Vec<Vec<f64>> = checkpoints.iter().map(|d| d.step_scores(&[x], &[y]).remove(0)).collect();
    let k = scores.len() as f64;
    let variances = (0..y.len())
        .map(|t| {
            // shifting by the first value keeps identical scores at exactly zero
            let shift = scores[0][t];
            let mean = shift + scores.iter().map(|s| s[t] - shift).sum::<f64>() / k;
            scores.iter().map(|s| (s[t] - mean).powi(2)).sum::<f64>() / k
        })
        .collect();
    Ok(VarianceProfile { variances })
}

/// Two-column plot data: one `label value` row per entry.
pub fn write_plot_data(path: &Path, header: &str, rows: &[(String, f64)]) -> Result<()> {
    let mut out = format!("# {header}\n");
    for (label, v) in rows {
        writeln!(out, "{label} {v}").expect("write to string");
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub strategy: String,
    pub seed: u64,
    pub iteration: u64,
    pub prec: f64,
    pub samp_p: f64,
    pub samp_r: f64,
    pub fkld: f64,
    pub ikld: f64,
    pub fkld_plus_ikld: f64,
    pub epsilon: f64,
    pub dist_n: BTreeMap<usize, f64>,
    pub len_avg: f64,
    pub general_count: usize,
}

pub const DIST_ORDERS: [usize; 2] = [1, 2];

impl EvalReport {
    pub fn csv_header() -> String {
        let mut cols = vec![
            "model", "strategy", "seed", "iteration", "prec", "samp_p", "samp_r", "fkld", "ikld", "fkld_plus_ikld", "epsilon",
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        cols.extend(DIST_ORDERS.iter().map(|n| format!("dist_{n}")));
        cols.push("len_avg".into());
        cols.push("general_count".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.model.clone(),
            self.strategy.clone(),
            self.seed.to_string(),
            self.iteration.to_string(),
            format!("{:.4}", self.prec),
            format!("{:.4}", self.samp_p),
            format!("{:.4}", self.samp_r),
            format!("{:.6}", self.fkld),
            format!("{:.6}", self.ikld),
            format!("{:.6}", self.fkld_plus_ikld),
            format!("{:e}", self.epsilon),
        ];
        cols.extend(DIST_ORDERS.iter().map(|n| format!("{:.6}", self.dist_n.get(n).copied().unwrap_or(f64::NAN))));
        cols.push(format!("{:.4}", self.len_avg));
        cols.push(self.general_count.to_string());
        cols.join(",")
    }

    /// Appends a row, writing the header first if the file is new.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        let mut text = if path.exists() {
            fs::read_to_string(path).map_err(|e| Error::io(path, e))?
        } else {
            Self::csv_header() + "\n"
        };
        text.push_str(&self.csv_row());
        text.push('\n');
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Identity of the evaluated snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportMeta {
    pub model: String,
    pub strategy: String,
    pub seed: u64,
    pub iteration: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub samples: usize,
    pub epsilon: f64,
    pub max_len: usize,
}

/// The full report on `examples`. The general set comes from `mle_general`
/// when given, otherwise from this generator's own greedy responses.
pub fn evaluate<F: Real, R: Rng>(
    g: &Generator<F>,
    examples: &[CountingExample],
    settings: EvalSettings,
    meta: ReportMeta,
    mle_general: Option<&BTreeSet<TokenSequence>>,
    rng: &mut R,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to evaluate"));
    }
    let greedy = argmax_responses(g, examples, settings.max_len);
    let prec = precision_of(examples, &greedy);
    let (samp_p, samp_r) = sample_precision_recall(g, examples, settings.samples, settings.max_len, rng)?;
    let fkld = forward_kld(g, examples);
    let ikld = inverse_kld(g, examples, settings.epsilon, settings.max_len)?;
    let tokens: Vec<TokenSequence> = greedy.into_iter().map(|r| r.tokens).collect();
    let mut dist_n = BTreeMap::new();
    for n in DIST_ORDERS {
        // an all-empty corpus has no n-grams at all
        dist_n.insert(n, distinct_ngrams(&tokens, n).unwrap_or(0.0));
    }
    let own_general;
    let general = match mle_general {
        Some(set) => set,
        None => {
            own_general = build_general_set(&tokens)?;
            &own_general
        }
    };
    let truths: Vec<TokenSequence> = examples.iter().map(|e| e.answer.to_vec()).collect();
    Ok(EvalReport {
        model: meta.model,
        strategy: meta.strategy,
        seed: meta.seed,
        iteration: meta.iteration,
        prec,
        samp_p,
        samp_r,
        fkld,
        ikld,
        fkld_plus_ikld: fkld + ikld,
        epsilon: settings.epsilon,
        dist_n,
        len_avg: average_length(&tokens)?,
        general_count: count_general(&tokens, general, &truths),
    })
}

/// Mean wall-clock seconds per adversarial iteration for each strategy,
/// all starting from the same generator, configuration and seed. The first
/// `warmup` iterations are run but not timed.
#[allow(clippy::too_many_arguments)]
pub fn timing_benchmark<F: Real>(
    strategies: &[StrategyConfig],
    generator: &Generator<F>,
    cfg: &TrainingConfig,
    data: &CountingDataset,
    max_len: usize,
    seed: u64,
    warmup: usize,
    measured: usize,
) -> Result<Vec<(StrategyConfig, f64)>> {
    if strategies.is_empty() {
        return Err(Error::invalid("no strategies to time"));
    }
    if measured < 10 {
        return Err(Error::invalid(format!("need at least 10 measured iterations, got {measured}")));
    }
    let mut out = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let state = GanState::new(generator.clone(), strategy, cfg, seed);
        let mut trainer = GanTrainer::new(state, *strategy, *cfg, data, max_len)?;
        for _ in 0..warmup {
            trainer.iterate()?;
        }
        let started = Instant::now();
        for _ in 0..measured {
            trainer.iterate()?;
        }
        out.push((*strategy, started.elapsed().as_secs_f64() / measured as f64));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(v: &[&[Token]]) -> Vec<TokenSequence> {
        v.iter().map(|s| s.to_vec()).collect()
    }

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_ngrams(&seqs(&[&[0, 1], &[0, 1]]), 1).unwrap(), 0.5);
        let one = seqs(&[&[3, 4, 5, 6, 7]]);
        assert_eq!(distinct_ngrams(&one, 2).unwrap(), 4.0 / 5.0);
        assert!(distinct_ngrams(&[], 1).is_err());
        assert!(distinct_ngrams(&one, 0).is_err());
    }

    #[test]
    fn length_examples() {
        assert_eq!(average_length(&seqs(&[&[0, 1, 2]])).unwrap(), 3.0);
        assert_eq!(average_length(&seqs(&[&[0], &[0, 1, 2]])).unwrap(), 2.0);
        assert!(average_length(&[]).is_err());
    }

    #[test]
    fn general_set_examples() {
        let same = seqs(&[&[1, 2, 3], &[1, 2, 3]]);
        assert_eq!(build_general_set(&same).unwrap().len(), 1);
        // 12 distinct responses: top decile rounds up to 2, and a tie on the
        // second count pulls in a third
        let mut mle = Vec::new();
        for (i, n) in [9, 5, 5, 1, 1, 1, 1, 1, 1, 1, 1, 1].into_iter().enumerate() {
            mle.extend(std::iter::repeat_n(vec![i], n));
        }
        let general = build_general_set(&mle).unwrap();
        assert_eq!(general, [vec![0], vec![1], vec![2]].into_iter().collect());
        let responses = seqs(&[&[0], &[1], &[7], &[2]]);
        let truths = seqs(&[&[5], &[0], &[7], &[9]]);
        assert_eq!(count_general(&responses, &general, &truths), 2);
        assert_eq!(count_general(&seqs(&[&[7]]), &general, &seqs(&[&[5]])), 0);
    }

    #[test]
    fn space_size() {
        assert_eq!(output_space_size(10, 4), 1 + 10 + 100 + 1000 + 1);
        assert_eq!(output_space_size(2, 2), 4);
        assert!(output_space_size(10, 7) > ENUMERATION_CAP);
    }

    #[test]
    fn report_csv_has_header_width() {
        let report = EvalReport {
            model: "g".into(),
            strategy: "mle".into(),
            seed: 1,
            iteration: 0,
            prec: 87.0,
            samp_p: 80.0,
            samp_r: 70.0,
            fkld: 0.5,
            ikld: 6.0,
            fkld_plus_ikld: 6.5,
            epsilon: 1e-9,
            dist_n: DIST_ORDERS.iter().map(|&n| (n, 0.1)).collect(),
            len_avg: 3.0,
            general_count: 4,
        };
        assert_eq!(
            EvalReport::csv_header().split(',').count(),
            report.csv_row().split(',').count()
        );
    }
}
